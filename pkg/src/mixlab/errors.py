"""Exception hierarchy shared across the package."""


class MixlabError(Exception):
    """Base class for all package-specific errors."""


class LengthMismatchError(MixlabError):
    pass


class NegativeMassError(MixlabError):
    pass


class BadSumError(MixlabError):
    pass


class UnknownDimensionError(MixlabError):
    pass


class DuplicateGroupError(MixlabError):
    pass


class EmptyContextError(MixlabError):
    pass


class ShapeMismatchError(MixlabError):
    pass


class NonFiniteGradientError(MixlabError):
    pass


class NonFiniteLossError(MixlabError):
    pass


class TransportError(MixlabError):
    pass


class VocabMismatchError(MixlabError):
    pass


class MalformedReplyError(MixlabError):
    pass


class EmptyExpertListError(MixlabError):
    pass


class ZeroProbabilityTokenError(MixlabError):
    pass


class MissingReferenceError(MixlabError):
    pass


class AllTiesError(MixlabError):
    pass


class VersionMismatchError(MixlabError):
    pass


class CorruptCheckpointError(MixlabError):
    pass


class DiagnosticFailureError(MixlabError):
    pass
