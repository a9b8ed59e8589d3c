"""Exception types raised by the solver stack."""


class SgoptError(Exception):
    """Base class for all errors raised by this package."""


class InfeasibleConstraint(SgoptError):
    """A hard-constraint row reduced to 0 = c with c significantly nonzero."""


class RankDeficient(SgoptError):
    """A frontal block could not be triangularized with a nonzero diagonal."""


class SingularDiagonal(SgoptError):
    """A triangular solve hit a zero diagonal entry."""


class UnknownVariable(SgoptError):
    """A variable key was referenced that the graph does not contain."""


class DimensionMismatch(SgoptError):
    """Block, vector, or ordering dimensions are inconsistent."""


class UnconstrainedUnboundedVariable(SgoptError):
    """An eliminated variable has no factor rows spanning it, so its
    subproblem is unbounded below."""


class SingularInnovation(SgoptError):
    """The control-innovation matrix in a Riccati step is singular."""


class SingularKKT(SgoptError):
    """The dense KKT system of the reference solver is singular."""


class NoProgress(SgoptError):
    """The damped outer loop hit its damping cap without an accepted step."""


class ConfigError(SgoptError):
    """A problem configuration file or CLI argument is invalid."""
