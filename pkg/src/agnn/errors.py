class AgnnError(Exception):
    pass


class DimensionError(AgnnError, ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(AgnnError, FloatingPointError):
    """An operation produced NaN or Inf."""


class ConfigError(AgnnError, ValueError):
    pass


class InputError(AgnnError, ValueError):
    """Malformed graph, file, or label input."""


class ContractError(AgnnError, ValueError):
    """A precondition of an operation was violated."""
