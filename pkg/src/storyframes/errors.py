"""Exception hierarchy shared by every stage of the pipeline."""


class StoryError(Exception):
    """Base class for all pipeline errors."""


# -- ingestion ---------------------------------------------------------------

class IngestError(StoryError):
    pass


class FileUnreadable(IngestError):
    pass


class FetchFailed(IngestError):
    pass


class EmptySource(IngestError):
    pass


class EmptyAfterCleaning(IngestError):
    pass


class InvalidSpec(StoryError, ValueError):
    """Bad chunking/mask/config parameters."""


# -- translation ---------------------------------------------------------------

class TranslationError(StoryError):
    pass


class ClientError(TranslationError):
    pass


class UnknownText(TranslationError):
    pass


class EmptyTranslation(TranslationError):
    pass


# -- masks and images ----------------------------------------------------------

class BadDims(InvalidSpec):
    pass


class DimMismatch(StoryError, ValueError):
    pass


class EmptyObject(StoryError, ValueError):
    pass


class NoObject(StoryError):
    pass


class OutOfBounds(StoryError, ValueError):
    pass


# -- generation backend --------------------------------------------------------

class BackendError(StoryError):
    pass


class AuthError(BackendError):
    pass


class RateLimited(BackendError):
    pass


class ProviderError(BackendError):
    pass


class NetworkError(BackendError):
    pass


class NothingEditable(BackendError):
    pass
