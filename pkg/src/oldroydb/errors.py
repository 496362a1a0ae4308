"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration problems exit
with 2, solver non-convergence with 3, runtime invariant violations with 4.
"""


class OldroydError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(OldroydError):
    """Invalid configuration or initial data failing a hypothesis check."""


class InvariantViolation(OldroydError):
    """A runtime invariant of the scheme was violated."""


class NonDirichletError(InvariantViolation):
    """A velocity that must vanish on the boundary does not."""


class DensityBandError(InvariantViolation):
    """Total density alpha + eps^2*sigma left its admissible band."""

    def __init__(self, node, value, lo, hi, context=""):
        self.node = tuple(int(i) for i in node)
        self.value = float(value)
        self.lo = float(lo)
        self.hi = float(hi)
        msg = (f"density {self.value:.6g} at node {self.node} outside "
               f"[{self.lo:.6g}, {self.hi:.6g}]")
        if context:
            msg = f"{context}: {msg}"
        super().__init__(msg)


class SingularStressSystemError(InvariantViolation):
    """The per-node implicit stress system is (numerically) singular."""

    def __init__(self, node, det):
        self.node = tuple(int(i) for i in node)
        self.det = float(det)
        super().__init__(f"singular stress system at node {self.node} "
                         f"(det {self.det:.3g}); reduce dt or the velocity")


class LinearSolveError(OldroydError):
    """An inner linear solve failed to reach its tolerance."""


class NonConvergenceError(OldroydError):
    """The fixed-point iteration exhausted max_iter without converging."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history
