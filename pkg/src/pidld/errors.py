"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class PIDLDError(Exception):
    pass


class InvalidInputError(PIDLDError, ValueError):
    pass


class ConfigError(PIDLDError, ValueError):
    """Bad configuration; ``path`` names the offending key when known."""

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class DivergenceError(PIDLDError, ArithmeticError):
    """A particle left the finite range during sampling."""

    def __init__(self, step: int, particle: int, detail: str = "non-finite or overflowing position"):
        self.step = step
        self.particle = particle
        super().__init__(f"{detail} at step {step}, particle {particle}")


class EstimationError(PIDLDError):
    pass


class DegenerateClusterError(EstimationError):
    pass


class DivergentSystemError(PIDLDError, ArithmeticError):
    """A linear recursion has no stationary regime (spectral radius >= 1)."""
