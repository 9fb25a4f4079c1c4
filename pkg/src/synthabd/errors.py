"""Exception types shared across the package."""


class SynthAbdError(Exception):
    """Base class for all package-specific errors."""


class ContractError(SynthAbdError, ValueError):
    """An argument violates a documented precondition (bad shape, geometry
    mismatch, invalid parameter)."""


class FormatError(SynthAbdError):
    """A file is not a well-formed NIfTI-1 file."""


class UnsupportedFormatError(FormatError):
    """The file is recognizably NIfTI but uses features outside the
    supported subset (datatype code, byte order, dimensionality)."""


class ValidationError(SynthAbdError, ValueError):
    """Decoded or constructed data violates a domain invariant
    (e.g. non-integer values in a label volume)."""


class ConfigurationError(SynthAbdError, ValueError):
    """A configuration is internally inconsistent or incomplete."""


class DegenerateFitError(SynthAbdError):
    """A mixture fit cannot proceed (more components than distinct values)."""


class DegenerateNormalizationError(SynthAbdError):
    """Min-max normalization of a constant image (min == max)."""


class DegenerateRankingError(SynthAbdError):
    """Rank test on values that are all identical."""
