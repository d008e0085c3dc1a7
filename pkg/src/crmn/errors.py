"""Exception types shared across the package."""


class CrmnError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(CrmnError):
    """Shapes or widths that cannot be combined."""


class InputError(CrmnError):
    """A value outside its documented domain (e.g. label out of range)."""


class ContractError(CrmnError):
    """A precondition violation (wrong mode, empty sequence, non-scalar loss)."""


class FormatError(CrmnError):
    """A malformed file or record layout."""


class TrainingError(CrmnError):
    """A numeric failure during optimization (NaN/inf gradients)."""
