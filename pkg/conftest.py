import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'config.settings_local')
django.setup()
