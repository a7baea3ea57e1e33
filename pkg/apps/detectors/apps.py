from django.apps import AppConfig


class DetectorsConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.detectors'
    verbose_name = 'Detectors'
