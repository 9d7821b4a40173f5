import os

from django.conf import settings


def get_setting(name, default):
    """
    ``getattr(settings, name, default)`` that also works when the library is
    used without a configured Django project.
    """
    if not settings.configured:
        return default
    return getattr(settings, name, default)


def output_root():
    return get_setting("CARL_OUTPUT_ROOT", os.environ.get("CARL_OUTPUT_ROOT", "runs"))
