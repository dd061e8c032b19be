"""Exception hierarchy shared across the package."""


class SalevalError(Exception):
    """Base class for all errors raised by this package."""


class TensorFormatError(SalevalError):
    """A serialized tensor or image could not be decoded."""


class BadMagicError(TensorFormatError):
    """The file does not start with the expected magic bytes."""


class DimensionOverflowError(TensorFormatError):
    """Declared dimensions are zero or imply an absurdly large payload."""


class TruncatedPayloadError(TensorFormatError):
    """The payload is shorter or longer than the header promises."""


class MalformedHeaderError(TensorFormatError):
    """A PGM/PPM header could not be parsed."""


class UnsupportedMaxvalError(TensorFormatError):
    """PGM/PPM maxval is not one of the supported values (255, 65535)."""


class DimensionMismatchError(SalevalError):
    """Image and saliency-map shapes are incompatible."""


class DegenerateVarianceError(SalevalError):
    """A correlation is undefined because one input has zero variance."""


class DegenerateRankingError(SalevalError):
    """Rank correlation is undefined because a vector is fully tied."""


class ScorerError(SalevalError):
    """Base class for failures while obtaining scores from a model."""


class ScorerProtocolError(ScorerError):
    """The external scorer violated the wire protocol or reported an error."""


class ScorerTimeoutError(ScorerError):
    """The external scorer did not answer within the configured timeout."""


class MalformedResponseError(ScorerError):
    """The external scorer answered with an undecodable or invalid message."""


class PerplexityError(SalevalError):
    """Requested perplexity is infeasible for the number of points."""


class DivergenceError(SalevalError):
    """The embedding optimizer produced non-finite coordinates."""
