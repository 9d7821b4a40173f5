from django.core.exceptions import ImproperlyConfigured

# exit codes used by the management commands
CATEGORY_GENERIC = 1
CATEGORY_CONFIG = 2
CATEGORY_NUMERIC = 3
CATEGORY_CHECKPOINT = 4
CATEGORY_LOCK = 5


class CarlError(Exception):
    category = CATEGORY_GENERIC


class StructuralError(CarlError, ValueError):
    """
    Raised when lengths or shapes of related values disagree.
    """


class ConstraintError(StructuralError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class NumericFault(CarlError, ArithmeticError):
    category = CATEGORY_NUMERIC

    def __init__(self, message, step=None):
        self.step = step
        if step is not None:
            message = f"{message} (step {step})"
        super().__init__(message)


class EmptyWindowError(CarlError):
    pass


class EnumerationBudgetError(CarlError):
    def __init__(self, count, budget):
        self.count = count
        self.budget = budget
        super().__init__(f"enumeration would visit up to {count} trajectories, budget is {budget}")


class ConfigError(CarlError, ImproperlyConfigured):
    category = CATEGORY_CONFIG


class CheckpointError(CarlError):
    category = CATEGORY_CHECKPOINT


class RunLockedError(CarlError):
    category = CATEGORY_LOCK


class TrainingFault(CarlError):
    """
    A fault raised inside the training loop. ``iteration`` is the last
    completed iteration; ``state`` is the trainer state as the fault left it,
    possibly part way through an iteration. ``checkpoint_iteration`` is the
    iteration of the last good state written out, None if there is none.
    """

    def __init__(self, cause, state, iteration, checkpoint_iteration=None):
        self.cause = cause
        self.state = state
        self.iteration = iteration
        self.checkpoint_iteration = checkpoint_iteration
        self.category = getattr(cause, "category", CATEGORY_GENERIC)
        super().__init__(f"training halted at iteration {iteration}: {cause}")
