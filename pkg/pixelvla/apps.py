"""
pixelvla Django application initialization.
"""
from django.apps import AppConfig


class PixelVLAConfig(AppConfig):
    """
    Configuration for the pixelvla Django application.
    """
    name = 'pixelvla'
    verbose_name = 'PixelVLA'
