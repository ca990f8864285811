"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array dimensions do not match what an operation expects."""


class NumericError(ArithmeticError):
    """A NaN or infinite value showed up where only finite values are allowed."""


class PlanningError(RuntimeError):
    """The expert planner or pose sampler could not produce a result."""


class FormatError(ValueError):
    """A persisted artifact has the wrong magic, version, or length."""
