"""
Django settings for the windowed detection pipeline
"""

import os
from pathlib import Path

from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

load_dotenv(BASE_DIR / '.env')

# Django refuses to start without a key; nothing here is signed
SECRET_KEY = os.getenv('SECRET_KEY', 'windowed-pipeline-insecure-key')

DEBUG = os.getenv('DEBUG', 'False') == 'True'

ALLOWED_HOSTS = []

# Application definition
INSTALLED_APPS = [
    # Third party apps
    'rest_framework',

    # Local apps
    'apps.core',
    'apps.tiling',
    'apps.detectors',
    'apps.stitching',
    'apps.multiscale',
    'apps.augment',
    'apps.evaluation',
    'apps.pipeline',
]

# Command-line tool only, no persistence
DATABASES = {}

USE_TZ = True
TIME_ZONE = 'UTC'

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# Pipeline defaults
PIPELINE = {
    'WINDOW_PX': int(os.getenv('PIPELINE_WINDOW_PX', '416')),
    'OVERLAP': float(os.getenv('PIPELINE_OVERLAP', '0.15')),
    'NMS_IOU': float(os.getenv('PIPELINE_NMS_IOU', '0.5')),
    'IOU_DEFAULT': float(os.getenv('PIPELINE_IOU_DEFAULT', '0.5')),
    'IOU_SMALL_OBJECT': float(os.getenv('PIPELINE_IOU_SMALL_OBJECT', '0.25')),
    'THRESHOLD_COUNT': int(os.getenv('PIPELINE_THRESHOLD_COUNT', '30')),
    'THRESHOLD_MIN': float(os.getenv('PIPELINE_THRESHOLD_MIN', '0.05')),
    'THRESHOLD_MAX': float(os.getenv('PIPELINE_THRESHOLD_MAX', '0.95')),
    'TRUNCATION': float(os.getenv('PIPELINE_TRUNCATION', '0.5')),
    'BOXES_PER_CELL': int(os.getenv('PIPELINE_BOXES_PER_CELL', '5')),
    'DOWNSAMPLE': int(os.getenv('PIPELINE_DOWNSAMPLE', '16')),
    'DEGRADE_SIGMA': float(os.getenv('PIPELINE_DEGRADE_SIGMA', '1.0')),
    'ROTATION_FILL': int(os.getenv('PIPELINE_ROTATION_FILL', '0')),
    'WORKERS': int(os.getenv('PIPELINE_WORKERS', '1')),
    'SEED': int(os.getenv('PIPELINE_SEED', '0')),
    'EXTERNAL_TIMEOUT': float(os.getenv('PIPELINE_EXTERNAL_TIMEOUT', '600')),
    'HTTP_TIMEOUT': float(os.getenv('PIPELINE_HTTP_TIMEOUT', '30')),
}

# Default class table: ids follow list order
CLASS_TABLE = [
    {'name': 'car', 'small_object': True, 'min_size_m': 1.0, 'max_size_m': 8.0},
    {'name': 'boat', 'small_object': False, 'min_size_m': 3.0, 'max_size_m': 120.0},
    {'name': 'airplane', 'small_object': False, 'min_size_m': 8.0, 'max_size_m': 90.0},
    {'name': 'airport', 'small_object': False, 'min_size_m': 500.0, 'max_size_m': 8000.0},
]

# Logging
LOG_DIR = BASE_DIR / 'logs'
LOG_LEVEL = os.getenv('PIPELINE_LOG_LEVEL', 'INFO')
LOG_TO_FILE = os.getenv('PIPELINE_LOG_FILE', 'False') == 'True'

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'default': {
            'format': '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'default',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': 'WARNING',
    },
    'loggers': {
        'apps': {
            'handlers': ['console'],
            'level': LOG_LEVEL,
            'propagate': False,
        },
    },
}

if LOG_TO_FILE:
    os.makedirs(LOG_DIR, exist_ok=True)
    LOGGING['handlers']['file'] = {
        'class': 'logging.FileHandler',
        'filename': LOG_DIR / 'pipeline.log',
        'formatter': 'default',
    }
    LOGGING['loggers']['apps']['handlers'].append('file')
