import math

import numpy as np
from django.test import SimpleTestCase

from carl.constraints import (
    PREDICATES,
    VALUE_FUNCTIONS,
    ConstraintKind,
    evaluate,
    get_predicate,
    make_constraint,
    register_value_fn,
    reverse,
)
from carl.exceptions import ConstraintError, NumericFault, StructuralError


def always(state, action):
    return True


def never(state, action):
    return False


def first_coordinate(state, action):
    return state[0]


def upright():
    # (cos, sin, angular velocity, t/T) for theta = 0
    return np.array([1.0, 0.0, 0.0, 0.0])


class MakeConstraintTest(SimpleTestCase):
    def test_fall_down_pattern(self):
        c = make_constraint("timestep-prob", target_timestep=200, p_epsilon=0.0, event="pendulum-lower-half")
        self.assertIs(c.kind, ConstraintKind.TIMESTEP_PROB)
        self.assertEqual(c.target_timestep, 200)
        self.assertEqual(c.event_name, "pendulum-lower-half")
        self.assertEqual(c.name, "timestep-prob-pendulum-lower-half-t200")

    def test_episode_value_angle(self):
        c = make_constraint("episode-value", epsilon=1e-2, value_fn="abs-angle")
        self.assertAlmostEqual(evaluate(c, upright(), np.zeros(1), 17), 0.01)

    def test_final_step_angle(self):
        c = make_constraint("timestep-value", target_timestep=200, epsilon=1e-2, value_fn="abs-angle")
        self.assertEqual(evaluate(c, upright(), np.zeros(1), 199), 0.0)
        self.assertAlmostEqual(evaluate(c, upright(), np.zeros(1), 200), 0.01)

    def test_errors_name_the_field(self):
        cases = [
            (dict(kind="timestep-prob", p_epsilon=0.1, event=always), "target_timestep"),
            (dict(kind="timestep-prob", target_timestep=-1, p_epsilon=0.1, event=always), "target_timestep"),
            (dict(kind="episode-prob", target_timestep=3, p_epsilon=0.1, event=always), "target_timestep"),
            (dict(kind="episode-prob", p_epsilon=0.1), "event"),
            (dict(kind="episode-prob", event=always), "p_epsilon"),
            (dict(kind="episode-prob", p_epsilon=1.5, event=always), "p_epsilon"),
            (dict(kind="episode-prob", p_epsilon=0.1, epsilon=0.1, event=always), "epsilon"),
            (dict(kind="episode-prob", p_epsilon=0.1, event=always, value_fn=first_coordinate), "value_fn"),
            (dict(kind="episode-value", epsilon=0.1), "value_fn"),
            (dict(kind="episode-value", value_fn=first_coordinate), "epsilon"),
            (dict(kind="episode-value", epsilon=math.inf, value_fn=first_coordinate), "epsilon"),
            (dict(kind="episode-value", epsilon=0.1, value_fn=first_coordinate, event=always), "event"),
            (dict(kind="episode-value", epsilon=0.1, value_fn="no-such-function"), "value_fn"),
            (dict(kind="episode-prob", p_epsilon=0.1, event="no-such-predicate"), "event"),
            (dict(kind="sometimes"), "kind"),
        ]
        for kwargs, field in cases:
            with self.subTest(kwargs=kwargs):
                with self.assertRaises(ConstraintError) as cm:
                    make_constraint(**kwargs)
                self.assertEqual(cm.exception.field, field)
                self.assertTrue(str(cm.exception).startswith(f"{field}:"))

    def test_target_beyond_horizon(self):
        with self.assertRaises(ConstraintError):
            make_constraint("timestep-value", target_timestep=11, epsilon=0.0, value_fn=first_coordinate, horizon=10)

    def test_registered_builtins(self):
        # importing carl.envs registers the environments' callables
        get_predicate("pendulum-lower-half")
        self.assertIn("tabular-last-state", PREDICATES)
        for name in ("abs-angle", "abs-angular-velocity", "abs-torque", "tabular-position"):
            self.assertIn(name, VALUE_FUNCTIONS)

    def test_register_value_fn(self):
        @register_value_fn("test-double-first")
        def double_first(state, action):
            return 2 * state[0]

        try:
            c = make_constraint("episode-value", epsilon=1.0, value_fn="test-double-first")
            self.assertEqual(evaluate(c, np.array([0.25]), None, 0), 0.5)
            self.assertEqual(c.value_fn_name, "test-double-first")
        finally:
            del VALUE_FUNCTIONS["test-double-first"]


class EvaluateTest(SimpleTestCase):
    def test_timestep_prob_off_target(self):
        c = make_constraint("timestep-prob", target_timestep=5, p_epsilon=0.1, event=never)
        self.assertEqual(evaluate(c, None, None, 3), 0.0)

    def test_timestep_prob_on_target(self):
        c = make_constraint("timestep-prob", target_timestep=5, p_epsilon=0.1, event=always)
        self.assertAlmostEqual(evaluate(c, None, None, 5), -0.9)

    def test_episode_value_at_zero(self):
        c = make_constraint("episode-value", epsilon=1e-2, value_fn=first_coordinate)
        for t in (0, 7, 200):
            self.assertEqual(evaluate(c, np.array([0.0]), None, t), 0.01)

    def test_probability_constraints_are_two_valued(self):
        rng = np.random.default_rng(0)
        for p in rng.uniform(0, 1, size=20):
            c = make_constraint("episode-prob", p_epsilon=p, event=lambda s, a: s[0] > 0)
            for state in rng.normal(size=(10, 1)):
                self.assertIn(evaluate(c, state, None, 0), (p, p - 1.0))

    def test_timestep_constraints_vanish_elsewhere(self):
        c = make_constraint("timestep-value", target_timestep=4, epsilon=0.3, value_fn=first_coordinate)
        for t in range(10):
            value = evaluate(c, np.array([5.0]), None, t)
            self.assertEqual(value == 0.0, t != 4)

    def test_negative_timestep(self):
        c = make_constraint("episode-prob", p_epsilon=0.1, event=always)
        with self.assertRaises(StructuralError):
            evaluate(c, None, None, -1)

    def test_non_finite_value(self):
        c = make_constraint("episode-value", epsilon=0.1, value_fn=lambda s, a: math.nan)
        with self.assertRaises(NumericFault):
            evaluate(c, None, None, 2)

    def test_callable(self):
        c = make_constraint("episode-value", epsilon=0.5, value_fn=first_coordinate)
        self.assertEqual(c(np.array([0.25]), None, 0), 0.25)


class ReverseTest(SimpleTestCase):
    def test_reverse_value(self):
        c = reverse(make_constraint("episode-value", epsilon=0.01, value_fn=lambda s, a: 0.04))
        self.assertAlmostEqual(evaluate(c, None, None, 0), 0.03, places=15)

    def test_reverse_keeps_zero_branch(self):
        c = reverse(make_constraint("timestep-prob", target_timestep=2, p_epsilon=0.3, event=always))
        self.assertEqual(evaluate(c, None, None, 1), 0.0)

    def test_reverse_is_negation(self):
        rng = np.random.default_rng(1)
        c = make_constraint("episode-value", epsilon=0.2, value_fn=first_coordinate)
        flipped = reverse(c)
        self.assertTrue(flipped.reversed)
        self.assertFalse(reverse(flipped).reversed)
        for state in rng.normal(size=(20, 1)):
            self.assertEqual(evaluate(flipped, state, None, 0), -evaluate(c, state, None, 0))
