"""Exception types raised across the package."""


class FbmcfError(Exception):
    """Base class for all package errors."""


# barrier geometry
class NoConvergence(FbmcfError):
    """Closest-point iteration did not converge."""


class OutsideTubular(FbmcfError):
    """Query point lies outside the declared tubular neighborhood."""


class DegenerateGradient(FbmcfError):
    """Level-set gradient vanishes (or nearly so) at the query point."""


class InsufficientSamples(FbmcfError):
    pass


class NonpositiveK(FbmcfError):
    pass


# mesh
class NonManifold(FbmcfError):
    """An edge is shared by more than two faces."""


class InconsistentOrientation(FbmcfError):
    """Two faces traverse a shared edge in the same direction."""


class QuadricFitSingular(FbmcfError):
    pass


class BoundaryOffSurface(FbmcfError):
    """A boundary vertex is not on the barrier surface."""


class InvalidParams(FbmcfError):
    pass


# flow
class MeshDegenerate(FbmcfError):
    pass


# diagnostics
class NonpositiveHtilde(FbmcfError):
    def __init__(self, vertex, value):
        super().__init__(f"perturbed mean curvature {value:.6g} <= 0 at vertex {vertex}")
        self.vertex = vertex
        self.value = value


class InsufficientRecords(FbmcfError):
    pass


class FitFailed(FbmcfError):
    pass


class NonpositiveRemaining(FbmcfError):
    pass


# oracles
class PastSingularTime(FbmcfError):
    pass


# configuration and io
class ParseError(FbmcfError):
    pass


class ValidationError(FbmcfError):
    pass


class IoError(FbmcfError):
    pass
