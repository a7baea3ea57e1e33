"""Local development settings for the windowed detection pipeline"""

# Import all settings from the main settings file
from .settings import *

DEBUG = True

# Verbose pipeline logging while developing
LOGGING['loggers']['apps']['level'] = os.getenv('PIPELINE_LOG_LEVEL', 'DEBUG')

# Smaller pool by default on a laptop
PIPELINE['WORKERS'] = int(os.getenv('PIPELINE_WORKERS', '2'))
