"""Exception types raised across the package."""


class ParameterError(ValueError):
    """A parameter tuple lies outside the admissible regime."""


class UnsupportedRegimeError(ParameterError):
    """The requested quantity is only defined for a narrower range of p."""


class GridError(ValueError):
    """Invalid grid construction or incompatible grids."""


class TruncationError(ValueError):
    """An integrand does not decay at the ends of the truncated domain."""


class DilationClipError(ValueError):
    """A log-grid shift would push nonnegligible values off the grid."""


class AxisRegularityError(ValueError):
    """A zonal field has a nonzero angular derivative on the polar axis."""


class ZeroFieldError(ValueError):
    """The field vanishes identically, so the quotient is undefined."""


class SingularGradientError(ValueError):
    """The unregularized p-nonlinearity is singular where the Laplacian vanishes."""


class GaugeError(RuntimeError):
    """Mass accumulated at the grid boundary despite gauge fixing."""


class NormalizationError(ValueError):
    """A routine that requires d(u) = 1 received an unnormalized field."""


class ResidualTooLargeError(ValueError):
    """The profile is not a converged extremal; carries the partial report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class OverlapError(ValueError):
    """The support of a translated bump meets the shifted singularity."""


class ConfigError(ValueError):
    """Malformed or unknown entries in a run configuration."""
