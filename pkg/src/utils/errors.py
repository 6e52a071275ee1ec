"""
Exception hierarchy for the lab.
Library code raises these; the command line maps them to exit codes.
"""
from typing import Optional


class LabError(Exception):
    """Base class for every error the lab raises on purpose."""
    exit_code = 1


class ConfigError(LabError):
    """Malformed or unknown configuration."""
    exit_code = 2

    def __init__(self, message: str, field: Optional[str] = None,
                 line: Optional[int] = None):
        self.field = field
        self.line = line
        where = []
        if field:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class UnknownFamilyError(ConfigError):
    """A coefficient or initial-condition family name is not registered."""


class DomainError(LabError):
    """A request outside the mathematical domain of an operation."""
    exit_code = 3


class ScaleDomainError(DomainError):
    """Scale functions need u > e."""

    def __init__(self, u: float):
        self.u = u
        super().__init__(f"scale u={u!r} violates the u > e domain rule")


class ScaleHorizonError(DomainError):
    """Scale beyond the horizon covered by the simulated path."""

    def __init__(self, u: float, horizon: float):
        self.u = u
        self.horizon = horizon
        super().__init__(f"scale u={u!r} exceeds the path horizon {horizon!r}")


class ParameterRangeError(DomainError):
    """A numeric parameter is out of its admissible range."""


class TargetEnergyError(DomainError):
    """A recurrence target must have control energy strictly below 1."""

    def __init__(self, target_id: str, energy: float):
        self.target_id = target_id
        self.energy = energy
        super().__init__(
            f"target '{target_id}' has energy {energy:.6g} >= 1 and is not an interior point of the limit set"
        )


class UnboundedFieldsError(DomainError):
    """A sup-norm bound was requested from a field declared unbounded."""


class NumericalError(LabError):
    """Numerical failure: blow-up, rank deficiency, non-convergence."""
    exit_code = 4


class BlowUpError(NumericalError):
    """State left the admissible region during integration."""

    def __init__(self, time: float, scale: Optional[float] = None,
                 seed: Optional[int] = None, index: Optional[int] = None):
        self.time = time
        self.scale = scale
        self.seed = seed
        self.index = index
        parts = [f"state blew up at t={time:.6g}"]
        if scale is not None:
            parts.append(f"scale={scale:.6g}")
        if seed is not None:
            parts.append(f"seed={seed}")
        if index is not None:
            parts.append(f"i={index}")
        super().__init__(", ".join(parts))


class RankDeficiencyError(NumericalError):
    """Diffusion matrix lost full row rank along a target path."""

    def __init__(self, time: float, sigma_min: float):
        self.time = time
        self.sigma_min = sigma_min
        super().__init__(
            f"diffusion matrix rank-deficient at t={time:.6g} (smallest singular value {sigma_min:.3g})"
        )


class NonConvergenceError(NumericalError):
    """Optimizer stalled with a residual above tolerance."""

    def __init__(self, method: str, residual: float, tol: float):
        self.method = method
        self.residual = residual
        self.tol = tol
        super().__init__(f"{method} search stalled with residual {residual:.3g} above tolerance {tol:g}")
