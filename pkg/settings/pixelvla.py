SECRET_KEY = 'pixelvla-test-only'

INSTALLED_APPS = ['pixelvla']

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'APP_DIRS': True,
    },
]

USE_TZ = True

# Small models keep the learning tests fast; every other key uses its default.
PIXELVLA = {
    'EMBED_DIM': 32,
    'PIXEL_TOKENS': 2,
    'PROMPT_PE_DIM': 32,
    'LEVEL_DIMS': (16, 16, 16),
    'NUM_LAYERS': 1,
    'NUM_HEADS': 2,
    'VOCAB_SIZE': 256,
    'DECODER_HIDDEN': 64,
    'DECODER_BLOCKS': 1,
    'LOG_EVERY': 500,
}
