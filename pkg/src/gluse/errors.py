"""Exception taxonomy shared across the kit."""


class GluseError(Exception):
    """Base class for all kit errors."""


class DimensionError(GluseError, ValueError):
    """Shapes or dimensions are incompatible for the requested operation."""


class DomainError(GluseError, ValueError):
    """Input lies outside an operation's mathematical domain (e.g. log of <= 0)."""


class ParameterError(GluseError, ValueError):
    """A hyperparameter or structural parameter violates its constraint."""


class ContractError(GluseError, ValueError):
    """A caller broke an API contract (non-scalar backward, empty batch, ...)."""


class FormatError(GluseError, IOError):
    """A binary or text file violates its on-disk format contract."""
