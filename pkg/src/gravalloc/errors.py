"""Exception types shared across the package."""


class GravallocError(Exception):
    """Base class for all package-specific errors."""


class PoleSingularity(GravallocError):
    """Stereographic projection requested too close to the projection pole."""


class SourceSingularity(GravallocError):
    """Field evaluation requested essentially on top of a source point."""


class TreeNotBuilt(GravallocError):
    """A tree-accelerated force query was made without a built force tree."""


class RootFindingFailed(GravallocError):
    """Simultaneous root iteration did not reach the residual target."""


class NonFiniteState(GravallocError):
    """A trajectory produced NaN or infinite coordinates (internal bug)."""


class NotCritical(GravallocError):
    """Critical-point classification requested at a point with a large gradient."""


class DegenerateWeights(GravallocError):
    """Empirical coupling matrix has an unhit row or column; increase samples."""


class EmptySample(GravallocError):
    """A statistic was requested for a sample that is too small."""


class ConfigInvalid(GravallocError):
    """A study configuration failed schema validation."""


class StudyFailed(GravallocError):
    """A study started but could not be completed."""
