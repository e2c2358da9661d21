"""Exception hierarchy.

Every family carries a distinct ``exit_code`` which the command line
interface returns when the error escapes a task.
"""

from __future__ import annotations


class HybridLQRError(Exception):
    """Base class for all solver errors."""

    exit_code = 1


class ConfigError(HybridLQRError, ValueError):
    """Malformed configuration document or invalid arguments."""

    exit_code = 2


class SingularJumpMap(HybridLQRError, ValueError):
    """The jump matrix C is numerically singular where invertibility is required."""

    exit_code = 3


class BlockedState(HybridLQRError):
    """Repeated resets never leave the guard (state in or near the blocking set)."""

    exit_code = 4

    def __init__(self, message: str, orbit=None):
        super().__init__(message)
        self.orbit = [] if orbit is None else list(orbit)


class SuspectedZeno(HybridLQRError):
    """The jump counter exceeded ``max_jumps``; ``report`` holds the jump times."""

    exit_code = 5

    def __init__(self, message: str, report):
        super().__init__(message)
        self.report = report


class DivergenceError(HybridLQRError, ArithmeticError):
    """A state or Riccati sweep became non-finite."""

    exit_code = 6

    def __init__(self, message: str, t: float | None = None):
        super().__init__(message)
        self.t = t


class TangentialImpact(HybridLQRError):
    """WAR impact with vanishing normal velocity (state on the invariant guard)."""

    exit_code = 7


class NoExtremalJump(HybridLQRError):
    """Negative discriminant: no co-state jump conserves the Hamiltonian."""

    exit_code = 8

    def __init__(self, message: str, discriminant: float | None = None, t: float | None = None):
        super().__init__(message)
        self.discriminant = discriminant
        self.t = t


class IllConditioned(HybridLQRError):
    """Discriminant numerically zero: the two extremal jumps coalesce."""

    exit_code = 9

    def __init__(self, message: str, discriminant: float | None = None, t: float | None = None):
        super().__init__(message)
        self.discriminant = discriminant
        self.t = t


class BeatingEncountered(HybridLQRError):
    """An optimal arc hit the first beating set; the co-state problem is not solved there."""

    exit_code = 10

    def __init__(self, message: str, t: float, x_pre, depth: int):
        super().__init__(message)
        self.t = t
        self.x_pre = x_pre
        self.depth = depth


class NonConvergence(HybridLQRError):
    """The forward-backward iteration did not reach its tolerances."""

    exit_code = 11

    def __init__(self, message: str, best=None):
        super().__init__(message)
        self.best = best


EXIT_CODES = {
    cls.__name__: cls.exit_code
    for cls in (
        HybridLQRError,
        ConfigError,
        SingularJumpMap,
        BlockedState,
        SuspectedZeno,
        DivergenceError,
        TangentialImpact,
        NoExtremalJump,
        IllConditioned,
        BeatingEncountered,
        NonConvergence,
    )
}
