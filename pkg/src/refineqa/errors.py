"""Exception hierarchy shared across the package."""


class RefineQAError(Exception):
    """Base class for all package errors."""


# --- backend ---------------------------------------------------------------

class BackendError(RefineQAError):
    """Base class for generation-backend failures."""


class NetworkError(BackendError):
    """Transport failure that survived the retry budget."""


class MissingLogprobs(BackendError):
    """The endpoint answered without per-token probabilities."""


class EmptyGeneration(BackendError):
    """The endpoint returned zero generated tokens."""


class UnknownRequest(BackendError):
    """A scripted backend was asked for a request it has no entry for."""


# --- confidence ------------------------------------------------------------

class EmptyTokenList(RefineQAError):
    """Confidence requested over an empty probability list."""


class OutOfRangeProb(RefineQAError):
    """A token probability fell outside (0, 1]."""


# --- prompts ---------------------------------------------------------------

class PromptError(RefineQAError):
    """Base class for template rendering failures."""


class MissingBinding(PromptError):
    """A placeholder required by the template has no bound value."""


class UnknownPlaceholder(PromptError):
    """The template body names a placeholder outside the vocabulary."""


class NoQuestionsParsed(PromptError):
    """Sub-question extraction found nothing usable."""


# --- pipeline --------------------------------------------------------------

class PipelineError(RefineQAError):
    """Base class for per-instance pipeline failures."""


class BankGenerationFailed(PipelineError):
    """Sub-question generation produced nothing, even after one retry."""


class InfeasibleCuration(PipelineError):
    """More subsets requested than distinct combinations exist."""


class AllPathsFailed(PipelineError):
    """Every refinement path hit a backend error."""


class JudgeParseFailed(PipelineError):
    """The judge output named no valid sub-QA pairs."""


# --- harness ---------------------------------------------------------------

class SchemaError(RefineQAError):
    """A dataset row violated the JSONL schema (carries line and field)."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        super().__init__(message)
        self.line = line
        self.field = field


class EmptyDataset(RefineQAError):
    """The dataset file contained no instances."""


class StoreIOError(RefineQAError):
    """The run store could not be read or written."""


# --- analysis --------------------------------------------------------------

class AnalysisError(RefineQAError):
    """Base class for post-hoc analysis failures."""


class IncompleteRecord(AnalysisError):
    """A record lacks the refined candidates replay needs."""


class TooFewRecords(AnalysisError):
    """Not enough records for the requested binning."""


class IdMismatch(AnalysisError):
    """Two record sets do not share the same instance-id set."""


# --- cli -------------------------------------------------------------------

class ConfigError(RefineQAError):
    """Invalid configuration; carries the offending field path."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field
