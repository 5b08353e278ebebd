"""Exception types shared across the package.

The CLI maps these onto exit codes: :class:`DataError` -> 2,
:class:`NumericalError` -> 3.
"""


class DataError(ValueError):
    """Input data violates a structural contract (file, shape, values)."""


class NumericalError(RuntimeError):
    """A numerical procedure failed (singular design, optimizer failure...)."""


class StageError(RuntimeError):
    """Wraps an error raised inside a named pipeline stage."""

    def __init__(self, stage, error):
        self.stage = stage
        self.error = error
        super().__init__(f"[{stage}] {error}")
