"""Exception and warning types shared across the library."""


class MetaGPError(Exception):
    """Base class for all library-specific errors."""


class DimensionMismatch(MetaGPError, ValueError):
    """Array shapes are inconsistent with the operation's contract."""


class AsymmetricInput(MetaGPError, ValueError):
    """A matrix that must be symmetric is not, beyond tolerance."""


class NotPositiveDefinite(MetaGPError, ValueError):
    """Cholesky factorization failed even at the maximum permitted jitter."""


class SingularTriangular(MetaGPError, ValueError):
    """A triangular solve hit a (numerically) zero diagonal entry."""


class NonFiniteEvaluation(MetaGPError, FloatingPointError):
    """A user-supplied or internal function returned a non-finite value."""


class ArityMismatch(MetaGPError, ValueError):
    """Number of latent-function inputs does not match the likelihood family."""


class UnsupportedObservation(MetaGPError, ValueError):
    """Observation lies outside the likelihood family's support."""


class IncompatibleModules(MetaGPError, ValueError):
    """A module dictionary mixes modules that cannot be ensembled together."""


class ChecksumMismatch(MetaGPError, ValueError):
    """Stored checksum does not match the file's canonical content."""


class UnknownSchemaVersion(MetaGPError, ValueError):
    """Module file declares a schema version this build does not know."""


class InvariantViolation(MetaGPError, ValueError):
    """Deserialized object violates a structural invariant."""


class IoFailure(MetaGPError, OSError):
    """Reading or writing a module file failed at the OS level."""


class ParseError(MetaGPError, ValueError):
    """Malformed cell or line in an input file; message names the location."""


class MissingValue(MetaGPError, ValueError):
    """Empty cell where a numeric value is required."""


class UnknownColumn(MetaGPError, ValueError):
    """Schema references a column the file does not provide."""


class InvalidK(MetaGPError, ValueError):
    """Requested partition count is outside 1..N."""


class LengthMismatch(MetaGPError, ValueError):
    """Prediction and target sequences differ in length."""


class CapExceeded(MetaGPError, ValueError):
    """Dense-GP operation requested beyond the configured size cap."""


class IndexOutOfRange(MetaGPError, IndexError):
    """Output index outside the multi-output model's range."""


class DegenerateDataWarning(UserWarning):
    """Data had fewer distinct inputs than requested inducing points."""
