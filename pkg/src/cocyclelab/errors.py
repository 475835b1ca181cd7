"""Exception hierarchy.

Two families matter to callers: ``InputError`` (bad arguments, violated
preconditions) and ``NumericalFailure`` (a computation ran but the object it
looks for was not found or a certificate failed).  The CLI exits with 1 for
configuration errors and with 2 for anything raised while a command runs.
"""

from __future__ import annotations


class CocycleLabError(Exception):
    """Base class for all package errors."""


class InputError(CocycleLabError, ValueError):
    """Bad arguments or a violated precondition."""


class NumericalFailure(CocycleLabError, ArithmeticError):
    """A computation ran but did not certify what it was asked for."""


# torus dynamics
class NotUnimodular(InputError):
    """Integer matrix with |det| != 1."""


class NotHyperbolic(InputError):
    """Matrix has an eigenvalue on the unit circle."""


class LatticeNotInvariant(InputError):
    """M or M^-1 does not preserve the lattice."""


class IterateOverflow(InputError):
    """Exact matrix power exceeds the big-integer budget."""


class LeafRadiusExceeded(InputError):
    """Leaf parameter outside the local leaf."""


class OutsideProductChart(InputError):
    """Points too far apart for a local su-path."""


class TooManyPeriodicPoints(InputError):
    """Periodic point count above the cap."""



# cocycles
class SingularFiberMap(NumericalFailure):
    """Fiber map numerically singular."""


class CongruenceViolated(InputError):
    """Base matrix is not congruent to Id mod 4."""


class EpsilonOutOfRange(InputError):
    """Perturbation size outside [0, 1)."""



# conformal geometry
class DimensionMismatch(InputError):
    """Structures of different dimension."""


class SingularMatrix(InputError):
    """Matrix is not invertible."""


class HypothesisViolated(InputError):
    """Perturbation too large for the estimate."""


class NoConvergence(NumericalFailure):
    """Iteration did not converge."""



# holonomy
class NotFiberBunched(InputError):
    """Fiber bunching margin is >= 1."""


class NotOnLeaf(InputError):
    """Points are not on a common local leaf."""


class ToleranceUnreachable(NumericalFailure):
    """Series tail did not drop below tol."""


class LeafEscape(NumericalFailure):
    """Leaf segment never contracts into the local chart."""



# lyapunov, subadditive, reduction
class NotPeriodic(InputError):
    """Point is not periodic with the given period."""


class NotFound(NumericalFailure):
    """No negative level found up to N_max (inconclusive)."""


class NoInvariantPair(NumericalFailure):
    """No invariant pair of lines detected."""


class NotQuasiconformalOnWindow(NumericalFailure):
    """Distortion exceeded the cap on the window."""


class ObstructionNonzero(NumericalFailure):
    """Periodic (Livsic) obstruction is nonzero."""



# cli
class ConfigError(InputError):
    """Malformed or incomplete configuration."""


class UnknownCommand(InputError):
    """Unknown CLI command."""
