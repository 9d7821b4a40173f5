import logging

from django.core.management.base import BaseCommand, CommandError

from carl.exceptions import CarlError

LOGGERS = ["carl"]


class DebugArgMixin:
    def add_arguments(self, parser):
        parser.add_argument("--debug", action="store_true", help="Increase logging level for carl to DEBUG")

    def configure_logging(self, options):
        if options.get("debug"):
            for name in LOGGERS:
                logger = logging.getLogger(name)
                logger.setLevel(logging.DEBUG)
                for handler in logger.handlers:
                    handler.level = logging.DEBUG


class CarlCommand(DebugArgMixin, BaseCommand):
    """
    Runs ``run(**options)`` and turns CarlError into a CommandError whose
    return code is the error category.
    """

    def handle(self, *args, **options):
        self.configure_logging(options)
        try:
            return self.run(**options)
        except CarlError as exc:
            raise CommandError(str(exc), returncode=exc.category)

    def run(self, **options):
        raise NotImplementedError
