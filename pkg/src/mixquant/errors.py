"""Exception hierarchy shared across the toolkit.

File-format errors carry a short machine-readable ``code`` so the CLI can
report distinct failures without string matching.
"""


class MixquantError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(MixquantError):
    """Shape or divisibility constraint violated."""


class FormatError(MixquantError):
    """Base class for activation-file format errors."""

    code = "format"


class BadMagicError(FormatError):
    code = "bad_magic"


class VersionMismatchError(FormatError):
    code = "version_mismatch"


class UnsupportedDtypeError(FormatError):
    code = "unsupported_dtype"


class TruncatedPayloadError(FormatError):
    code = "truncated_payload"


class NonFiniteError(FormatError):
    code = "non_finite"


class DegenerateFitError(MixquantError):
    """Per-token distribution fit is undefined (zero-variance row)."""


class UndefinedDeltaError(MixquantError):
    """Mass-concentration ratio is undefined (all-zero row or block)."""


class ConstructionError(MixquantError):
    """No Hadamard construction available for the requested order."""


class NotRotationEquivariantError(MixquantError):
    """Attempted to merge a rotation across a non-rotation-equivariant region."""
