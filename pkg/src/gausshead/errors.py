"""Exception types shared across the package.

The CLI maps these onto exit codes: AssetError -> 3, NumericError -> 4.
"""


class GaussHeadError(Exception):
    """Base class for all package errors."""


class AssetError(GaussHeadError):
    """A file, wire format, or schema problem (missing, corrupt, inconsistent)."""


class ValidationError(AssetError):
    """Loaded data violates a structural invariant."""


class NumericError(GaussHeadError):
    """A computation produced non-finite or otherwise unusable values."""
