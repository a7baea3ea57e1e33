from django.apps import AppConfig


class MultiscaleConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'apps.multiscale'
    verbose_name = 'Multiscale ensemble'
