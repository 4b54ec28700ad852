"""Exception hierarchy shared by all modules.

Every error carries an optional ``diagnostic`` payload (a number or a small
dict) so callers and the command line can report what went wrong without
parsing messages.
"""


class ConcentrateError(Exception):
    """Base class for all library errors."""

    def __init__(self, message, diagnostic=None):
        super().__init__(message)
        self.diagnostic = diagnostic


# profile
class NoBracket(ConcentrateError):
    """Shooting could not bracket the decaying trajectory."""


class ToleranceNotMet(ConcentrateError):
    """A solver finished without reaching the requested tolerance."""


class NegativeRadius(ConcentrateError):
    """A radial evaluator was asked for r < 0."""


class InvalidProblem(ConcentrateError):
    """Parameters outside the supported range (dimension, exponent)."""


# linop
class SpectrumOrderViolation(ConcentrateError):
    """The radial sector has no negative eigenvalue."""


class GridMismatch(ConcentrateError):
    """A grid function does not live on the operator grid."""


class FredholmViolation(ConcentrateError):
    """Right-hand side not orthogonal to the kernel."""


class NonPositiveCoercivity(ConcentrateError):
    """Coercivity estimate on the orthogonal complement is not positive."""


class ProjectionDefect(ConcentrateError):
    """A right-hand side that should be projected has a large projection."""


# geom / potential
class UnsupportedManifold(ConcentrateError):
    """Requested submanifold or ambient model is not implemented."""


class OutsideChart(ConcentrateError):
    """Point lies outside the validity radius of the Fermi chart."""


class BoundViolation(ConcentrateError):
    """Potential leaves its admissible band [V1, V2]."""


# k_ops
class NoSignChange(ConcentrateError):
    """Root bracket does not contain a sign change."""


class NotStationary(ConcentrateError):
    """Submanifold does not satisfy the stationary condition."""


class DegenerateOperator(ConcentrateError):
    """Operator has a (near) kernel where invertibility is required."""


# ansatz
class ChartRadiusExceeded(ConcentrateError):
    """Cutoff tube does not fit inside the Fermi chart."""


class SolverDivergence(ConcentrateError):
    """A linear or nonlinear solve produced non-finite output."""


class NotContracting(ConcentrateError):
    """Fixed-point iteration failed to contract."""


class ResonantEpsilon(ConcentrateError):
    """Scale parameter violates the spectral gap condition."""


# cli
class ParseError(ConcentrateError):
    """Malformed or incomplete scenario file."""
