"""
Exceptions raised by the platoon dispatching library
"""

from typing import Optional, Sequence


class PlatoonError(Exception):
    """Base exception for platoon dispatching errors"""
    pass


class ParameterError(PlatoonError, ValueError):
    """An input is outside its validity range"""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class DomainError(PlatoonError):
    """An operation was applied outside its domain"""
    pass


class ConvergenceError(PlatoonError):
    """Value iteration hit its sweep cap"""

    def __init__(self, residual: float, sweeps: int):
        super().__init__(
            f"Value iteration did not converge after {sweeps} sweeps (residual {residual:.3e})"
        )
        self.residual = residual
        self.sweeps = sweeps


class StructureViolation(PlatoonError):
    """A policy table is not of threshold type"""

    def __init__(self, message: str, states: Sequence[int]):
        super().__init__(f"{message}: states {list(states)}")
        self.states = list(states)


class ThresholdSearchError(PlatoonError):
    """No first increase of the cost curve was found below the cap"""

    def __init__(self, m_cap: int, curve: Sequence[float]):
        super().__init__(f"No threshold with J(m) < J(m+1) found for m <= {m_cap}")
        self.m_cap = m_cap
        self.curve = list(curve)


class SingularSystemError(PlatoonError):
    """The stationary balance system could not be solved"""
    pass


class ConfigError(PlatoonError):
    """Config file is unreadable or holds unknown keys"""

    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
