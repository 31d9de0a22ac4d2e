"""
Django settings for soncluster project.

The project carries no web surface: Django provides configuration, logging,
the management command entry point and the test runner.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/3.2/ref/settings/
"""
import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get('SECRET_KEY', 'django-insecure-soncluster-l4q8v!x2m3z@7n1r0k6y5w9c(e)h-t_s=d')

DEBUG = os.environ.get('DEBUG', False)

# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',
    # Third-Party Apps
    'rest_framework',
    # Local Apps
    'clustering',
]

REST_FRAMEWORK = {
    'DEFAULT_RENDERER_CLASSES': (
        'rest_framework.renderers.JSONRenderer',
    ),
    # reports must never contain NaN or Infinity
    'STRICT_JSON': True,
    'COMPACT_JSON': False,
}

# The test runner needs a database even though the app has no models.
DATABASES = {
    'default': {
        'ENGINE': os.environ.get('DB_ENGINE', 'django.db.backends.sqlite3'),
        'NAME': os.environ.get('DB_NAME', BASE_DIR / 'db.sqlite3'),
    }
}

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'simple': {
            'format': '%(asctime)s: %(levelname)s: %(message)s',
            'datefmt': '%Y-%m-%dT%H:%M:%S',
        },
    },
    'handlers': {
        'file': {
            'level': 'INFO',
            'class': 'logging.FileHandler',
            'filename': os.path.join(BASE_DIR, 'soncluster.log'),
            'formatter': 'simple'
        },
        'console': {
            'level': os.environ.get('SONCLUSTER_CONSOLE_LOG_LEVEL', 'WARNING'),
            'class': 'logging.StreamHandler',
            'formatter': 'simple'
        },
    },
    'loggers': {
        'clustering': {
            'level': os.environ.get('SONCLUSTER_LOG_LEVEL', 'DEBUG'),
            'handlers': ['file', 'console'],
            'propagate': False,
        }
    },
}

# Numerical defaults. Every entry can be overridden from the environment.
SONCLUSTER = {
    'SOLVER': {
        'METHOD': os.environ.get('SONCLUSTER_METHOD', 'ama'),
        # None selects the automatic rule of the chosen method
        'RHO': float(os.environ['SONCLUSTER_RHO']) if os.environ.get('SONCLUSTER_RHO') else None,
        'MAX_ITERATIONS': int(os.environ.get('SONCLUSTER_MAX_ITERATIONS', 20000)),
        'GAP_TOLERANCE': float(os.environ.get('SONCLUSTER_GAP_TOLERANCE', 1e-8)),
        'RESIDUAL_TOLERANCE': float(os.environ.get('SONCLUSTER_RESIDUAL_TOLERANCE', 1e-8)),
        'STEP_RULE': os.environ.get('SONCLUSTER_STEP_RULE', 'auto_spectral'),
        'STEP_SAFETY': float(os.environ.get('SONCLUSTER_STEP_SAFETY', 0.95)),
        'CHOLESKY_MAX_NODES': int(os.environ.get('SONCLUSTER_CHOLESKY_MAX_NODES', 10000)),
        'CG_TOLERANCE': float(os.environ.get('SONCLUSTER_CG_TOLERANCE', 1e-10)),
        'POWER_ITERATIONS': int(os.environ.get('SONCLUSTER_POWER_ITERATIONS', 500)),
    },
    'FEASIBILITY_SLACK': float(os.environ.get('SONCLUSTER_FEASIBILITY_SLACK', 1e-9)),
    'FUSION_TOLERANCE': float(os.environ.get('SONCLUSTER_FUSION_TOLERANCE', 1e-6)),
    'GRID_POINTS': int(os.environ.get('SONCLUSTER_GRID_POINTS', 50)),
    'GRID_RATIO': float(os.environ.get('SONCLUSTER_GRID_RATIO', 1e-4)),
    'EBIC_ZETA': float(os.environ.get('SONCLUSTER_EBIC_ZETA', 0.5)),
    'BASELINE_MAX_CLUSTERS': int(os.environ.get('SONCLUSTER_BASELINE_MAX_CLUSTERS', 4)),
    'HOLDOUT_FRACTION': float(os.environ.get('SONCLUSTER_HOLDOUT_FRACTION', 0.1)),
    'MM_MAX_ITERATIONS': int(os.environ.get('SONCLUSTER_MM_MAX_ITERATIONS', 200)),
    'MM_TOLERANCE': float(os.environ.get('SONCLUSTER_MM_TOLERANCE', 1e-8)),
    'N_JOBS': int(os.environ.get('SONCLUSTER_N_JOBS', 1)),
    'FLOAT_FORMAT': os.environ.get('SONCLUSTER_FLOAT_FORMAT', '%.17g'),
}

USE_TZ = True
