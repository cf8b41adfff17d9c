"""Exception taxonomy shared across the package."""


class LayerfedError(Exception):
    """Base class for all layerfed errors."""


class ConfigError(LayerfedError, ValueError):
    """Invalid configuration value or inconsistent setup."""


class InputError(LayerfedError, ValueError):
    """Malformed runtime input: bad shapes, empty batches, out-of-range values."""


class StructureError(LayerfedError, ValueError):
    """Structurally incompatible models or parameter collections."""


class NumericError(LayerfedError, ArithmeticError):
    """Non-finite values where finite numbers are required."""


class EncodingError(LayerfedError, ValueError):
    """Value cannot be represented by the fixed-point codec."""


class ProtocolError(LayerfedError, ValueError):
    """Ciphertexts under different keys or codecs were combined."""
