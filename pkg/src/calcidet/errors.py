"""Exception types shared across the package.

Each error carries a short machine-parsable ``category`` used by the CLI to
map failures onto documented exit codes.
"""


class CalcidetError(Exception):
    """Base class for all package errors."""

    category = "internal"


class GridError(CalcidetError):
    """Inconsistent grid geometry (spacing, extents, alignment)."""

    category = "data-format"


class HeaderError(GridError):
    """Malformed or incomplete container header."""

    category = "data-format"


class PayloadSizeError(GridError):
    """Raw payload size does not match the declared dimensions."""

    category = "data-format"


class ClassCodeError(GridError):
    """Label data contains a code outside the supported range."""

    category = "data-format"


class NeuralError(CalcidetError):
    """Invalid tensor/layer state (shapes, non-finite values, modes)."""

    category = "internal"


class FingerprintError(CalcidetError):
    """Stored weights do not match the expected architecture fingerprint."""

    category = "fingerprint"


class ConfigError(CalcidetError):
    """Configuration file failed schema validation."""

    category = "schema"


class CorpusError(CalcidetError):
    """Invalid training corpus (empty strata, subject leakage, bad splits)."""

    category = "data-format"


class PhantomError(CalcidetError):
    """Phantom generation could not satisfy the requested layout."""

    category = "internal"
