"""
Configuration access for pixelvla.

Values come from the ``PIXELVLA`` Django setting and fall back to ``DEFAULTS``.
"""
from django.conf import settings

DEFAULTS = {
    'IMAGE_SIZE': 64,
    'PATCH_SIZE': 4,
    'LEVEL_DIMS': (32, 32, 32),
    'EMBED_DIM': 64,
    'PIXEL_TOKENS': 4,
    'PROMPT_PE_DIM': 128,
    'PROMPT_PE_SCALE': 1.0,
    'LINE_SAMPLES': 4,
    'NUM_LAYERS': 2,
    'NUM_HEADS': 4,
    'VOCAB_SIZE': 1024,
    'CHUNK_SIZE': 8,
    'DECODER_HIDDEN': 128,
    'DECODER_BLOCKS': 2,
    'REGION_EXPANSION': 1.5,
    'CONFIDENCE_THRESHOLD': 0.3,
    'MIN_INSIDE_FRACTION': 0.5,
    'PROMPT_POINTS': 3,
    'STAGE1_STEPS': 2000,
    'STAGE2_STEPS': 4000,
    'BATCH_SIZE': 8,
    'STAGE1_LR': 5e-4,
    'STAGE2_LR': 1e-3,
    'LORA_RANK': 4,
    'LORA_ALPHA': 8.0,
    'LOG_EVERY': 100,
    'BACKENDS': {
        'synthetic': 'pixelvla.annotation.backends.SyntheticBackendSuite',
        'subprocess': 'pixelvla.annotation.backends.SubprocessBackendSuite',
    },
}

# Used by the command-line entry point when no Django settings module is active.
STANDALONE_SETTINGS = {
    'INSTALLED_APPS': ['pixelvla'],
    'TEMPLATES': [
        {
            'BACKEND': 'django.template.backends.django.DjangoTemplates',
            'APP_DIRS': True,
        },
    ],
    'LOGGING': {
        'version': 1,
        'disable_existing_loggers': False,
        'formatters': {
            'standard': {'format': '%(asctime)s %(levelname)s %(name)s %(message)s'},
        },
        'handlers': {
            'console': {'class': 'logging.StreamHandler', 'formatter': 'standard'},
        },
        'loggers': {
            'pixelvla': {'handlers': ['console'], 'level': 'INFO'},
        },
    },
}


def get_setting(name):
    """
    Return the configured value of ``name`` or its default.
    """
    configuration = getattr(settings, 'PIXELVLA', {})
    return configuration.get(name, DEFAULTS[name])
