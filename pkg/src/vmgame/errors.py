"""Exception types shared across the package."""


class VmgError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(VmgError):
    pass


class AbsoluteContinuityViolation(VmgError):
    """KL(p || q) requested with q_i = 0 but p_i > 0."""


class IndexOutOfRange(VmgError):
    pass


class NonFiniteInput(VmgError):
    pass


class NonConvergence(VmgError):
    """An iterative solver hit its cap without meeting its tolerance."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class AsymmetricFeatures(VmgError):
    """Feature table does not induce antisymmetric payoff matrices."""


class BetaZeroUnsupported(VmgError):
    pass


class NonFiniteKL(VmgError):
    """Policy support violates the reference support with beta > 0."""


class ZeroLikelihood(VmgError):
    """A dataset transition has (materially) non-positive model probability."""


class LpFailure(VmgError):
    pass


class LpInfeasible(VmgError):
    pass


class SpaceTooLarge(VmgError):
    pass


class CapExceeded(VmgError):
    pass


class SingularSystem(VmgError):
    pass


class NonFiniteObjective(VmgError):
    pass


class TraceTooShort(VmgError):
    pass


class NonPositiveRegret(VmgError):
    pass


class ConfigInvalid(VmgError):
    pass
