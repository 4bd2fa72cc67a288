"""Confidence-guided refinement reasoning for question answering.

A model-agnostic engine that decomposes a question into sub-question/answer
pairs, explores confidence-scored refinement paths, and selects the final
answer with two thresholds: tau1 skips refinement when the base answer is
already confident, and tau2 demands a confidence margin before a refined
answer may replace the base one. Ships with comparison methods, a
resumable evaluation harness, and an offline analysis suite (threshold
sweeps, calibration, confidence inflation, bootstrap significance, cost
accounting).
"""

from .backend import (
    Attachment,
    BackendConfig,
    GenerationRequest,
    GenerationResult,
    HttpBackend,
    ScriptedBackend,
    generate,
    open_backend,
    request_key,
    script_backend,
)
from .confidence import ConfidenceMetric, ConfidenceScore, score
from .harness import (
    InstanceKind,
    QAInstance,
    MemoryRunStore,
    RunRecord,
    RunStore,
    Split,
    load_dataset,
    match_answer,
    run_eval,
)
from .pipeline import (
    AnswerCandidate,
    Method,
    PipelineParams,
    SelectionRecord,
    SkipReason,
    SubQABank,
    SubQAPair,
    base_answer,
    curate_subsets,
    generate_bank,
    refined_answers,
    run_confidence_guided,
    run_method,
    select,
)
from .prompts import PromptBinding, PromptLibrary, TemplateId, default_library, parse_subquestions

__version__ = "0.1.0"

__all__ = [
    "Attachment",
    "AnswerCandidate",
    "BackendConfig",
    "ConfidenceMetric",
    "ConfidenceScore",
    "GenerationRequest",
    "GenerationResult",
    "HttpBackend",
    "InstanceKind",
    "MemoryRunStore",
    "Method",
    "PipelineParams",
    "PromptBinding",
    "PromptLibrary",
    "QAInstance",
    "RunRecord",
    "RunStore",
    "ScriptedBackend",
    "SelectionRecord",
    "SkipReason",
    "Split",
    "SubQABank",
    "SubQAPair",
    "TemplateId",
    "base_answer",
    "curate_subsets",
    "default_library",
    "generate",
    "generate_bank",
    "load_dataset",
    "match_answer",
    "open_backend",
    "parse_subquestions",
    "refined_answers",
    "request_key",
    "run_confidence_guided",
    "run_eval",
    "run_method",
    "score",
    "script_backend",
    "select",
]
