from django.apps import AppConfig


class StitchingConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.stitching'
    verbose_name = 'Stitching'
