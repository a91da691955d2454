"""Exception hierarchy shared by every ddcn module."""


class DDCNError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(DDCNError, ValueError):
    """Tensor shapes or channel counts do not line up."""


class DataError(DDCNError):
    """Input data (frames, manifests, datasets) is malformed or inconsistent."""


class CorruptFileError(DataError):
    """A binary file has a bad magic, version, or truncated payload."""


class ManifestError(DataError):
    """A checkpoint's parameter table does not match the expected manifest."""


class GradCheckError(DDCNError):
    """The function under gradient check is not finite at the probe point."""
