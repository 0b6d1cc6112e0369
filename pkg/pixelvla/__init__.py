"""
Desk-scale pixel-aware vision-language-action policy stack and its annotation pipeline.
"""
