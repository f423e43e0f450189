"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes, so raising the right class matters:
config problems exit 2, I/O and file-format problems exit 3, unknown
sample/variant exits 4, numerical failures exit 5.
"""


class PortionError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatchError(PortionError):
    """Two grids or tensors that must agree in shape do not."""


class GeometryError(PortionError):
    """Invalid geometric input (empty cloud, negative depth, bad mesh)."""


class OrientationError(GeometryError):
    """Mesh triangles are inconsistently oriented or wound inward."""


class WatertightError(GeometryError):
    """Mesh is not a closed 2-manifold, so volume is undefined."""


class FormatError(PortionError):
    """A file does not conform to its documented on-disk format."""


class ConfigError(PortionError):
    """A run configuration is malformed or fails schema validation."""


class RenderError(PortionError):
    """The camera sees nothing: mesh behind the camera or no pixel hit."""


class NumericalError(PortionError):
    """Training produced a non-finite loss; carries the offending batch."""

    def __init__(self, message, epoch=None, step=None, sample_ids=None):
        super().__init__(message)
        self.epoch = epoch
        self.step = step
        self.sample_ids = list(sample_ids) if sample_ids is not None else None
