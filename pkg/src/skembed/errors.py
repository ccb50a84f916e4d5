"""Exception types shared across the package."""


class SkembedError(Exception):
    """Base class for solver errors."""


class LatticeError(SkembedError):
    """Invalid grid geometry or horizon selection."""


class QuantizeError(SkembedError):
    """Target measure cannot be placed on the grid."""


class CaveShapeError(SkembedError):
    """Reward fails the convex-concave shape checks."""


class RewardError(SkembedError):
    """Reward table is unusable (non-finite entries, bad domain)."""


class InfeasibleError(SkembedError):
    """No stopping rule meets the marginal constraint.

    ``levels`` carries the violated level set when known.
    """

    def __init__(self, message, levels=None):
        super().__init__(message)
        self.levels = list(levels) if levels is not None else []


class UnboundedError(SkembedError):
    """LP objective unbounded (cannot happen for mass-bounded flows)."""


class DivergenceError(SkembedError):
    """Subgradient loop diverged; carries the objective trajectory."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class BarrierError(SkembedError):
    """Stopping region is not representable as a cave barrier.

    ``nodes`` lists offending (k, j) pairs when known.
    """

    def __init__(self, message, nodes=None):
        super().__init__(message)
        self.nodes = list(nodes) if nodes is not None else []


class SurfaceError(SkembedError):
    """Verification surface violates one of its defining inequalities."""

    def __init__(self, message, nodes=None):
        super().__init__(message)
        self.nodes = list(nodes) if nodes is not None else []
