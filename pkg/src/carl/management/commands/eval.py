from carl.exceptions import ConfigError
from carl.management.helpers import CarlCommand
from carl.runner import cmd_eval


class Command(CarlCommand):
    help = "Evaluate the checkpoint of a run with the deterministic policy."

    def add_arguments(self, parser):
        parser.add_argument("--run", required=True, help="Run directory")
        parser.add_argument("--episodes", type=int, default=10)
        parser.add_argument("--seed", type=int, help="First evaluation seed (default: the run's evaluation seed)")
        return super().add_arguments(parser)

    def run(self, **options):
        if options["episodes"] < 0:
            raise ConfigError(f"--episodes must not be negative, got {options['episodes']}")
        path = cmd_eval(options["run"], options["episodes"], options["seed"])
        self.stdout.write(str(path))
