import enum
import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

from carl.exceptions import ConstraintError, NumericFault, StructuralError

logger = logging.getLogger(__name__)


class ConstraintKind(str, enum.Enum):
    TIMESTEP_PROB = "timestep-prob"
    TIMESTEP_VALUE = "timestep-value"
    EPISODE_PROB = "episode-prob"
    EPISODE_VALUE = "episode-value"

    @property
    def is_timestep(self):
        return self in (ConstraintKind.TIMESTEP_PROB, ConstraintKind.TIMESTEP_VALUE)

    @property
    def is_prob(self):
        return self in (ConstraintKind.TIMESTEP_PROB, ConstraintKind.EPISODE_PROB)


def get_constraint_kind(kind):
    try:
        return ConstraintKind(kind)
    except ValueError:
        expected = [k.value for k in ConstraintKind]
        raise ConstraintError("kind", f"unknown constraint kind {kind!r}, expected one of {expected}")


# Host callables referenced by name from configuration files. Predicates map
# (state, action) to bool, value functions map (state, action) to a real.
PREDICATES = {}
VALUE_FUNCTIONS = {}


def register_predicate(name):
    def decorator(func):
        PREDICATES[name] = func
        return func

    return decorator


def register_value_fn(name):
    def decorator(func):
        VALUE_FUNCTIONS[name] = func
        return func

    return decorator


def _ensure_builtins():
    # the built-in environments register their callables on import
    import carl.envs  # noqa: F401


def get_predicate(name):
    _ensure_builtins()
    try:
        return PREDICATES[name]
    except KeyError:
        raise ConstraintError("event", f"unknown predicate {name!r}, registered: {sorted(PREDICATES)}")


def get_value_fn(name):
    _ensure_builtins()
    try:
        return VALUE_FUNCTIONS[name]
    except KeyError:
        raise ConstraintError("value_fn", f"unknown value function {name!r}, registered: {sorted(VALUE_FUNCTIONS)}")


@dataclass(frozen=True)
class ConstraintFn:
    kind: ConstraintKind
    name: str
    target_timestep: Optional[int] = None
    p_epsilon: Optional[float] = None
    epsilon: Optional[float] = None
    event: Optional[Callable] = None
    value_fn: Optional[Callable] = None
    reversed: bool = False
    # registry names, kept so the constraint can be written back to a config
    event_name: Optional[str] = None
    value_fn_name: Optional[str] = None

    def __call__(self, state, action, t):
        return evaluate(self, state, action, t)


def _callable_name(func):
    return getattr(func, "__name__", repr(func))


def make_constraint(
    kind,
    name=None,
    target_timestep=None,
    p_epsilon=None,
    epsilon=None,
    event=None,
    value_fn=None,
    reversed=False,
    horizon=None,
):
    """
    Build one of the four constraint designs. ``event`` and ``value_fn`` may be
    callables or names registered with ``register_predicate`` /
    ``register_value_fn``. ``horizon``, when given, bounds ``target_timestep``.
    """
    kind = get_constraint_kind(kind)

    if kind.is_timestep:
        if target_timestep is None:
            raise ConstraintError("target_timestep", f"required for {kind.value}")
        if isinstance(target_timestep, bool) or int(target_timestep) != target_timestep or target_timestep < 0:
            raise ConstraintError("target_timestep", f"must be a non-negative integer, got {target_timestep!r}")
        if horizon is not None and target_timestep > horizon:
            raise ConstraintError("target_timestep", f"{target_timestep} lies beyond the horizon {horizon}")
        target_timestep = int(target_timestep)
    elif target_timestep is not None:
        raise ConstraintError("target_timestep", f"not accepted by {kind.value}")

    event_name = value_fn_name = None
    if kind.is_prob:
        if value_fn is not None:
            raise ConstraintError("value_fn", f"not accepted by {kind.value}")
        if epsilon is not None:
            raise ConstraintError("epsilon", f"not accepted by {kind.value}, use p_epsilon")
        if event is None:
            raise ConstraintError("event", f"required for {kind.value}")
        if p_epsilon is None:
            raise ConstraintError("p_epsilon", f"required for {kind.value}")
        if not 0.0 <= p_epsilon <= 1.0:
            raise ConstraintError("p_epsilon", f"must lie in [0, 1], got {p_epsilon}")
        if isinstance(event, str):
            event_name, event = event, get_predicate(event)
        else:
            event_name = _callable_name(event)
        p_epsilon = float(p_epsilon)
    else:
        if event is not None:
            raise ConstraintError("event", f"not accepted by {kind.value}")
        if p_epsilon is not None:
            raise ConstraintError("p_epsilon", f"not accepted by {kind.value}, use epsilon")
        if value_fn is None:
            raise ConstraintError("value_fn", f"required for {kind.value}")
        if epsilon is None:
            raise ConstraintError("epsilon", f"required for {kind.value}")
        if not math.isfinite(epsilon):
            raise ConstraintError("epsilon", f"must be finite, got {epsilon}")
        if isinstance(value_fn, str):
            value_fn_name, value_fn = value_fn, get_value_fn(value_fn)
        else:
            value_fn_name = _callable_name(value_fn)
        epsilon = float(epsilon)

    if name is None:
        name = f"{kind.value}-{event_name or value_fn_name}"
        if kind.is_timestep:
            name = f"{name}-t{target_timestep}"

    return ConstraintFn(
        kind=kind,
        name=name,
        target_timestep=target_timestep,
        p_epsilon=p_epsilon,
        epsilon=epsilon,
        event=event,
        value_fn=value_fn,
        reversed=bool(reversed),
        event_name=event_name,
        value_fn_name=value_fn_name,
    )


def evaluate(c, state, action, t):
    if t < 0:
        raise StructuralError(f"negative timestep {t}")
    if c.kind.is_timestep and t != c.target_timestep:
        return 0.0
    if c.kind.is_prob:
        value = c.p_epsilon - (1.0 if c.event(state, action) else 0.0)
    else:
        measured = float(c.value_fn(state, action))
        if not math.isfinite(measured):
            raise NumericFault(f"value function of constraint {c.name!r} returned {measured}", step=t)
        value = c.epsilon - measured
    return -value if c.reversed else value


def reverse(c):
    """
    The same constraint with its inequality flipped: evaluates to -g.
    """
    return replace(c, reversed=not c.reversed)
