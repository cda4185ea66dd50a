"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class LCoolError(Exception):
    """Base class for all library errors."""


class DimensionError(LCoolError, ValueError):
    """Array shapes do not chain or do not match a model's dimensions."""


class NumericalError(LCoolError, FloatingPointError):
    """A computation produced (or would produce) non-finite values."""


class DivergenceError(NumericalError):
    """A Langevin trail or chain ran away (score norm above the guard)."""


class DatasetFormatError(LCoolError, ValueError):
    """A dataset or checkpoint file could not be parsed."""


class OnManifoldError(LCoolError, ValueError):
    """An off-manifold test point actually lies inside the data band."""
