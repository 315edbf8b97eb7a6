"""Exception hierarchy for the mdest package."""


class MdestError(Exception):
    """Base class for all package errors."""


# -- domain description --
class DomainError(MdestError):
    pass


class CouplingDimensionError(DomainError):
    pass


class MissingDirichletError(DomainError):
    pass


class NonSpdError(DomainError):
    pass


class GeometryMismatchError(DomainError):
    pass


class BoundaryOverlapError(DomainError):
    pass


# -- grids --
class GridError(MdestError):
    pass


class InvalidGridError(GridError):
    pass


class EmptyBoundaryError(GridError):
    pass


class InvalidPerturbationError(GridError):
    pass


class MeshGenerationError(GridError):
    pass


# -- transfer grids --
class TransferError(MdestError):
    pass


class CoverageMismatchError(TransferError):
    pass


class DegenerateClipError(TransferError):
    pass


class OutOfDomainError(TransferError):
    pass


# -- projections --
class ProjectionError(MdestError):
    pass


class GridMismatchError(ProjectionError):
    pass


class SingularMassMatrixError(ProjectionError):
    pass


# -- solver / estimator --
class InconsistentBundleError(MdestError):
    pass


class SingularSystemError(MdestError):
    pass


class OutOfCellError(MdestError):
    pass


class MissingReferenceError(MdestError):
    pass


class ConfigError(MdestError):
    pass
