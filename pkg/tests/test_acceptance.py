"""
Long pendulum runs with the default trainer settings. Each run takes up to an
hour on a desktop CPU, so they only run with CARL_RUN_ACCEPTANCE=1.
"""

import os
import tempfile
from pathlib import Path
from unittest import skipUnless

from django.test import SimpleTestCase, override_settings

from carl.config import parse_config
from carl.metrics import read_metrics
from carl.runner import METRICS_FILE, cmd_train_all

SEEDS = [0, 1, 2]
# median |angle| over the final fifth of an evaluation episode, radians
ANGLE_THRESHOLD = 0.1
SOLVED_RETURN = -300.0
TOTAL_ITERATIONS = 200_000

EPISODE_ANGLE = {"kind": "episode-value", "name": "angle", "value_fn": "abs-angle", "epsilon": 1e-2}
FINAL_ANGLE = {
    "kind": "timestep-value",
    "name": "final-angle",
    "target_timestep": 200,
    "value_fn": "abs-angle",
    "epsilon": 1e-2,
}


def steps_to_threshold(run_dir):
    _, rows = read_metrics(Path(run_dir) / METRICS_FILE)
    for row in rows:
        if row["eval_task_metric"] <= ANGLE_THRESHOLD:
            return int(row["iteration"])
    return None


@skipUnless(os.environ.get("CARL_RUN_ACCEPTANCE"), "set CARL_RUN_ACCEPTANCE=1 to run the pendulum acceptance runs")
@override_settings(CARL_USE_FILE_LOCK=False)
class PendulumAcceptanceTest(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls._tmp = tempfile.TemporaryDirectory()
        cls.root = Path(cls._tmp.name)
        cls.runs = {}

    @classmethod
    def tearDownClass(cls):
        cls._tmp.cleanup()
        super().tearDownClass()

    def train(self, algo, constraints, reward_mode="car", seeds=SEEDS):
        output_dir = f"{algo}-{reward_mode}-{'-'.join(c['name'] for c in constraints) or 'native'}"
        if output_dir not in self.runs:
            config = parse_config(
                {
                    "env": "pendulum",
                    "algo": algo,
                    "reward_mode": reward_mode,
                    "constraints": constraints,
                    "trainer": {"total_iterations": TOTAL_ITERATIONS},
                    "seeds": seeds,
                    "output_dir": output_dir,
                }
            )
            self.runs[output_dir] = cmd_train_all(config, root=self.root)
        return self.runs[output_dir]

    def test_episode_angle_constraint(self):
        for run_dir in self.train("qrsac-l", [EPISODE_ANGLE]):
            with self.subTest(run=run_dir.name):
                self.assertIsNotNone(steps_to_threshold(run_dir))

    def test_final_angle_constraint(self):
        for run_dir in self.train("qrsac-l", [FINAL_ANGLE]):
            with self.subTest(run=run_dir.name):
                self.assertIsNotNone(steps_to_threshold(run_dir))

    def test_quantile_critics_converge_no_slower(self):
        def mean_steps(algo):
            # a run that never gets there counts as one evaluation past the end
            steps = [steps_to_threshold(d) or TOTAL_ITERATIONS + 5000 for d in self.train(algo, [EPISODE_ANGLE])]
            return sum(steps) / len(steps)

        quantile, scalar = mean_steps("qrsac-l"), mean_steps("sac-l")
        if abs(quantile - scalar) <= 0.1 * max(quantile, scalar):
            self.skipTest(f"inconclusive: {quantile:.0f} vs {scalar:.0f} steps")
        self.assertLess(quantile, scalar)

    def test_native_reward(self):
        (run_dir,) = self.train("qrsac-l", [], reward_mode="general", seeds=[0])
        _, rows = read_metrics(run_dir / METRICS_FILE)
        self.assertGreaterEqual(max(row["episode_return"] for row in rows), SOLVED_RETURN)
