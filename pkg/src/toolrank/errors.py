"""Exception hierarchy shared by all toolrank modules."""


class ToolrankError(Exception):
    """Base class for every error raised by this package."""


class CorpusFormatError(ToolrankError):
    """A corpus or task file could not be parsed.

    ``line`` is the 1-based line number of the offending record, when known.
    """

    def __init__(self, message: str, *, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class DuplicateToolError(CorpusFormatError):
    pass


class ConfigError(ToolrankError):
    """Invalid or inconsistent configuration, detected before any work runs."""


class EmbeddingError(ToolrankError):
    """The embedding provider returned something that violates the vector contract."""


class ProviderTransportError(EmbeddingError):
    """The remote embedding service could not be reached or answered with an error."""


class DimensionMismatchError(ToolrankError):
    pass


class FingerprintMismatchError(ToolrankError):
    """Query provider and index were built with different embedding models."""


class IndexFormatError(ToolrankError):
    """Index file has a bad magic, unsupported version, or is truncated."""


class ChecksumError(IndexFormatError):
    pass


class LLMError(ToolrankError):
    """Base for reranker transport failures. Never escapes :func:`toolrank.rerank.rerank`."""


class LLMTimeout(LLMError):
    pass


class LLMTransportError(LLMError):
    pass
