"""
Two-stage automated annotation: gripper-aware region proposal, then target segmentation and prompt derivation.
"""
