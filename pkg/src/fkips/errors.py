"""Exception types shared across the package."""


class FkipsError(Exception):
    """Base class for all package errors."""


class InputError(FkipsError, ValueError):
    """Invalid argument: wrong shape, out-of-range value, dimension mismatch."""


class DegenerateMeasureError(FkipsError):
    """A reweighting step hit total mass zero (mu(G) = 0)."""


class ExtinctionError(FkipsError):
    """Every particle carries zero selection weight; the flow is extinct."""

    def __init__(self, step: int):
        super().__init__(f"particle system extinct at step {step}")
        self.step = step


class RatioOverflowError(FkipsError):
    """A composed potential underflowed below 1e-300; its ratio is not reportable."""


class BudgetExceededError(FkipsError):
    """A tuned MCMC iteration count exceeds the 2^63 budget.

    The unrounded lower bound is attached as ``raw``.
    """

    def __init__(self, raw: float, context: str = ""):
        msg = f"required iteration count {raw:.6g} exceeds 2^63"
        if context:
            msg += f" ({context})"
        super().__init__(msg)
        self.raw = raw


class NoMinorizationError(FkipsError):
    """The iterated proposal admits no common component (delta = 0)."""


class ConfigError(FkipsError):
    """Config text failed validation; ``errors`` lists field-level messages."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
