"""Exception hierarchy shared by all pipeline stages.

Grouping matters for the CLI exit codes: ValidationError maps to exit 1,
BackendError to exit 2, and StageError (a preset halted mid-way) to exit 3.
"""


class KnowadaError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(KnowadaError):
    """Bad input data, bad configuration, or a violated value contract."""


class DatasetError(ValidationError):
    """A record file failed to parse; message carries path and line number."""


class ConfigError(ValidationError):
    """The run configuration is missing or inconsistent."""


class BackendError(KnowadaError):
    """Base class for failures of a model backend."""


class TransportError(BackendError):
    """Endpoint unreachable after the configured retries."""


class StatusError(BackendError):
    """Non-success HTTP status from a backend."""

    def __init__(self, status: int, excerpt: str):
        super().__init__(f"backend returned status {status}: {excerpt}")
        self.status = status
        self.excerpt = excerpt


class UnscriptedRequestError(BackendError):
    """A mock backend received a request it has no script entry for."""

    def __init__(self, key: str, role: str):
        super().__init__(f"unscripted request for role '{role}' (key {key})")
        self.key = key
        self.role = role


class StructuredOutputError(BackendError):
    """A backend response could not be parsed into the expected structure."""

    def __init__(self, message: str, raw: str):
        super().__init__(f"{message}; raw response: {raw[:200]!r}")
        self.raw = raw


class ContractError(BackendError):
    """A backend returned a value outside its declared range."""


class NoJudgeableSamplesError(KnowadaError):
    """Every sampled answer for a question stayed unjudged."""


class StageError(KnowadaError):
    """A pipeline stage failed; the manifest records completed stages."""

    def __init__(self, stage: str, cause: Exception, manifest=None):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.manifest = manifest
