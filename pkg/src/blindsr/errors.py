"""Exception hierarchy shared across the library.

The CLI maps these onto distinct exit codes: configuration errors (1),
file I/O errors (2), denoiser transport errors (3), solver internals (4).
"""


class BlindSRError(Exception):
    """Base class for all library errors."""


class DimensionMismatchError(BlindSRError):
    """Operands with incompatible grid shapes, or shapes violating a precondition."""


class InvalidParameterError(BlindSRError):
    """A scalar parameter outside its admissible range (e.g. a step size <= 0)."""


class InfeasibleSpecError(BlindSRError):
    """A constraint set specification describing an empty set."""


class ConvergenceError(BlindSRError):
    """An iterative routine exhausted its iteration budget without converging."""


class SolverError(BlindSRError):
    """An internal solver failure (should be unreachable on valid inputs)."""


class TransportError(BlindSRError):
    """External denoiser endpoint failure; `phase` records what was being done."""

    def __init__(self, phase: str, message: str):
        super().__init__(f"[{phase}] {message}")
        self.phase = phase


class ConfigError(BlindSRError):
    """Invalid or inconsistent run configuration."""
