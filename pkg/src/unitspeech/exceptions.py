"""Exception types shared across the package."""


class ContractError(ValueError):
    """An input violated an operation's precondition."""


class ShapeError(ContractError):
    """Array shapes are incompatible."""


class NonFiniteError(FloatingPointError):
    """A computation produced NaN or Inf."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, step, loss, stage=None):
        self.step = step
        self.loss = loss
        self.stage = stage
        where = f"stage {stage!r}, " if stage else ""
        super().__init__(f"training diverged ({where}step {step}, loss={loss})")


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, message, raw=None):
        self.stage = stage
        self.raw = raw
        super().__init__(f"[{stage}] {message}")


class NotFittedError(ValueError, AttributeError):
    """Estimator used before ``fit``."""
