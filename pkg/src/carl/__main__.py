"""
``carl`` console entry: runs the carl management commands without a Django
project, e.g. ``carl train --config pendulum.yaml``.
"""

import os
import sys
from copy import deepcopy

DEFAULT_SETTINGS = dict(
    INSTALLED_APPS=["carl"],
    DATABASES={},
    SECRET_KEY="notasecret",
    CARL_OUTPUT_ROOT=os.environ.get("CARL_OUTPUT_ROOT", "runs"),
)


def main(argv=None):
    from django.conf import settings
    from django.core import management
    from django.utils.log import DEFAULT_LOGGING

    LOGGING = deepcopy(DEFAULT_LOGGING)
    LOGGING["handlers"]["carl"] = {
        "level": "INFO",
        "class": "logging.StreamHandler",
        "formatter": "django.server",
    }
    LOGGING["loggers"]["carl"] = {
        "handlers": ["carl"],
        "level": "INFO",
    }

    if not settings.configured:
        settings.configure(LOGGING=LOGGING, **DEFAULT_SETTINGS)
    argv = list(sys.argv if argv is None else argv)
    argv[0] = "carl"
    management.execute_from_command_line(argv)


if __name__ == "__main__":
    main()
