"""Exception hierarchy shared by all modules."""


class NfulaError(Exception):
    """Base class for every error raised by the package."""


class NonFiniteError(NfulaError, FloatingPointError):
    """A NaN or Inf appeared where finite values are required."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class NonConvergenceError(NfulaError, RuntimeError):
    pass


class SingularScaleError(NfulaError, ValueError):
    pass


class BadKernelError(NfulaError, ValueError):
    pass


class BadShapeError(NfulaError, ValueError):
    pass


class ShapeMismatchError(BadShapeError):
    pass


class WrongOperatorError(NfulaError, TypeError):
    pass


class CapabilityMissingError(NfulaError, AttributeError):
    """The prior does not provide the requested capability (grad, prox, density)."""


class DegenerateSeriesError(NfulaError, ValueError):
    pass


class EmptyStoreError(NfulaError, ValueError):
    pass


class ChainAbortedError(NfulaError, RuntimeError):
    """A Markov chain stopped early; carries the iteration and the partial results."""

    def __init__(self, message, iteration, state=None, store=None):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration
        self.state = state
        self.store = store


class ChainDivergedError(ChainAbortedError):
    pass


class FormatError(NfulaError, ValueError):
    """Malformed file; ``offset`` is the byte position where parsing failed."""

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


class ConfigError(NfulaError, ValueError):
    pass
