from carl.management.helpers import CarlCommand
from carl.runner import cmd_plot


class Command(CarlCommand):
    help = "Plot a metrics column of one or more runs as an SVG line chart."

    def add_arguments(self, parser):
        parser.add_argument("--runs", nargs="*", default=[], help="Run directories")
        parser.add_argument("--metric", required=True, help="Metrics column, e.g. episode_return")
        parser.add_argument("--out", required=True, help="SVG file to write; the table goes next to it as .csv")
        parser.add_argument("--group", action="store_true", help="Group runs by algorithm into mean/range bands")
        return super().add_arguments(parser)

    def run(self, **options):
        path = cmd_plot(options["runs"], options["metric"], options["out"], group=options["group"])
        self.stdout.write(str(path))
