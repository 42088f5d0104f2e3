"""Exception and warning types raised across the package."""


class KamError(Exception):
    """Base class for every error raised by toralkam."""


class DimensionError(KamError, ValueError):
    pass


class UnsupportedSpectrumError(KamError):
    """The selected eigenvalue is complex, repeated, or otherwise unusable."""


class AliasingError(KamError):
    """A sampling grid is too coarse for the cutoff it is asked to carry."""


class ResonanceError(KamError):
    """A small divisor 2*pi*<n, v> fell below the configured floor."""

    def __init__(self, mode, divisor, floor):
        self.mode = tuple(int(x) for x in mode)
        self.divisor = float(divisor)
        self.floor = float(floor)
        super().__init__(
            f"resonant frequency n={self.mode}: |2*pi*<n,v>| = {self.divisor:.3e} "
            f"< floor {self.floor:.1e}"
        )


class ErgodicityError(KamError):
    """A - Id is singular, so the zero mode cannot be solved."""


class NonInvertibleError(KamError):
    pass


class ConvergenceError(KamError):
    pass


class InputError(KamError, ValueError):
    pass


class ParameterError(KamError, ValueError):
    pass


class StepRejected(KamError):
    """A safeguard inequality failed before or during an inductive step."""

    def __init__(self, inequality, message):
        self.inequality = inequality
        super().__init__(f"{inequality}: {message}")


class DivergenceError(KamError):
    def __init__(self, message, trace=None):
        self.trace = trace
        super().__init__(message)


class AliasingWarning(UserWarning):
    pass


class DegenerateDivisorWarning(UserWarning):
    pass


class RelationWarning(UserWarning):
    """The input pair does not satisfy the semidirect-product relation."""
