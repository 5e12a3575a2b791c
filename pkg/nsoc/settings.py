"""
Django settings for the nsoc project.

The project has no web surface; Django provides configuration, the
management-command front-end and the test runner for the toolkit in
``apps.control``.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

from pathlib import Path
import environ
import os

# Initialize environment variables
env = environ.Env(
    DEBUG=(bool, False),
    NSOC_NEWTON_TOL=(float, 1e-10),
    NSOC_NEWTON_MAX_ITER=(int, 50),
    NSOC_LINEAR_TOL=(float, 1e-12),
    NSOC_KINK_BRANCH=(str, 'plus'),
    NSOC_PROBE_WORKERS=(int, 1),
)

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Read environment variables from .env file
environ.Env.read_env(os.path.join(BASE_DIR, '.env'))

SECRET_KEY = env('SECRET_KEY', default='nsoc-local-only-not-a-secret')

DEBUG = env('DEBUG', default=False)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',
    'rest_framework',
    'apps.control',
]

# No model of the toolkit touches the database; an in-memory SQLite keeps
# Django's checks satisfied.
DATABASES = {
    'default': env.db('DATABASE_URL', default='sqlite://:memory:'),
}

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

USE_TZ = True
TIME_ZONE = 'UTC'


# Solver defaults, overridable from the environment
CONTROL_SOLVER = {
    'NEWTON_TOL': env('NSOC_NEWTON_TOL'),
    'NEWTON_MAX_ITER': env('NSOC_NEWTON_MAX_ITER'),
    'LINEAR_TOL': env('NSOC_LINEAR_TOL'),
    'KINK_BRANCH': env('NSOC_KINK_BRANCH'),
}

# Worker threads for independent probe evaluations (1 = sequential)
CONTROL_PROBE_WORKERS = env('NSOC_PROBE_WORKERS')

# Default directory for run artifacts when --out is not given
CONTROL_OUTPUT_DIR = env('NSOC_OUTPUT_DIR', default=str(BASE_DIR / 'runs'))


# Logging
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'simple': {
            'format': '{asctime} {levelname} {name}: {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'simple',
        },
    },
    'loggers': {
        'apps.control': {
            'handlers': ['console'],
            'level': env('LOG_LEVEL', default='INFO'),
            'propagate': False,
        },
    },
}
