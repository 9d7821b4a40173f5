import logging

from carl.config import load_config
from carl.management.helpers import CarlCommand
from carl.runner import cmd_train_all

logger = logging.getLogger(__name__)


class Command(CarlCommand):
    help = "Train every seed of an experiment config, one run directory per seed."

    def add_arguments(self, parser):
        parser.add_argument("--config", required=True, help="Experiment config file (YAML)")
        parser.add_argument(
            "--seed", type=int, action="append", dest="seeds", help="Seed to run; repeat for several (default: config)"
        )
        parser.add_argument("--output-root", help="Root for run directories (default: CARL_OUTPUT_ROOT)")
        parser.add_argument("--resume", action="store_true", help="Continue each run from its checkpoint")
        return super().add_arguments(parser)

    def run(self, **options):
        config = load_config(options["config"])
        for run_dir in cmd_train_all(config, options["seeds"], options["output_root"], options["resume"]):
            self.stdout.write(str(run_dir))
