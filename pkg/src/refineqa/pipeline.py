"""Per-instance reasoning pipeline and the comparison methods.

The flagship method, ``confidence_guided``, runs in five stages:

1. ask for a base answer and score its confidence;
2. if the base confidence clears the skip threshold tau1, stop there
   (easy questions are not overcomplicated);
3. otherwise generate a bank of N sub-question/sub-answer pairs;
4. curate K distinct M-sized subsets of the bank (a seeded uniform draw
   over the combination space) and query one answer candidate per subset;
5. pick the max-confidence candidate r*; accept it only if its confidence
   beats the base confidence by at least the margin tau2, which guards
   against confidence inflation from sub-QA context. Otherwise fall back
   to the base answer.

The comparison methods reuse the same machinery: ``baseline`` stops at
stage 1; ``single_subqa`` and ``every_subqa`` build one refinement path
(one pair / all pairs) and always accept it; the ``judge_*`` methods ask
the model itself to pick the M most useful pairs, build one path from
them, and always accept it.
"""

from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import TYPE_CHECKING, Sequence

from .backend import GenerationRequest, GenerationResult
from .confidence import ConfidenceMetric, ConfidenceScore, score
from .errors import (
    AllPathsFailed,
    BackendError,
    BankGenerationFailed,
    InfeasibleCuration,
    JudgeParseFailed,
    NoQuestionsParsed,
)
from .matching import normalize_answer
from .prompts import PromptBinding, PromptLibrary, TemplateId, default_library, parse_subquestions

if TYPE_CHECKING:
    from .harness import QAInstance

DEFAULT_N = 5
DEFAULT_M = 2
DEFAULT_K = 4
DEFAULT_TAU1 = 0.7
DEFAULT_TAU2 = 0.1
DEFAULT_MAX_TOKENS_ANSWER = 512
DEFAULT_MAX_TOKENS_SUBQUESTION = 1024


class Method(str, Enum):
    BASELINE = "baseline"
    CONFIDENCE_GUIDED = "confidence_guided"
    SINGLE_SUBQA = "single_subqa"
    EVERY_SUBQA = "every_subqa"
    JUDGE_SUB_Q = "judge_sub_q"
    JUDGE_SUB_A = "judge_sub_a"
    JUDGE_SUB_QA = "judge_sub_qa"


JUDGE_METHODS = frozenset({Method.JUDGE_SUB_Q, Method.JUDGE_SUB_A, Method.JUDGE_SUB_QA})

_JUDGE_TEMPLATE = {
    Method.JUDGE_SUB_Q: TemplateId.JUDGE_SUB_Q,
    Method.JUDGE_SUB_A: TemplateId.JUDGE_SUB_A,
    Method.JUDGE_SUB_QA: TemplateId.JUDGE_SUB_QA,
}


class SkipReason(str, Enum):
    HIGH_BASE_CONFIDENCE = "high_base_confidence"
    REFINED_ACCEPTED = "refined_accepted"
    REFINED_REJECTED = "refined_rejected"


@dataclass(frozen=True)
class PipelineParams:
    """Knobs for one run: counts, thresholds, metric, method, seed."""

    n: int = DEFAULT_N
    m: int = DEFAULT_M
    k: int = DEFAULT_K
    tau1: float = DEFAULT_TAU1
    tau2: float = DEFAULT_TAU2
    early_stop: float | None = None
    metric: ConfidenceMetric = ConfidenceMetric.MIN_TOKEN_PROB
    method: Method = Method.CONFIDENCE_GUIDED
    seed: int = 0
    max_tokens_answer: int = DEFAULT_MAX_TOKENS_ANSWER
    max_tokens_subquestion: int = DEFAULT_MAX_TOKENS_SUBQUESTION

    def normalized(self) -> "PipelineParams":
        """Apply the per-method forcing rules and validate.

        single_subqa forces n=m=k=1, every_subqa forces m=n and k=1, the
        judge methods force k=1, and baseline pins tau1=0 so the skip
        branch always fires (no refinement ever runs).
        """
        params = self
        if params.method is Method.SINGLE_SUBQA:
            params = replace(params, n=1, m=1, k=1)
        elif params.method is Method.EVERY_SUBQA:
            params = replace(params, m=params.n, k=1)
        elif params.method in JUDGE_METHODS:
            params = replace(params, k=1)
        elif params.method is Method.BASELINE:
            params = replace(params, tau1=0.0)
        params.validate()
        return params

    def validate(self) -> None:
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not (1 <= self.m <= self.n):
            raise ValueError(f"m must be in [1, n={self.n}], got {self.m}")
        limit = math.comb(self.n, self.m)
        if not (1 <= self.k <= limit):
            raise ValueError(f"k must be in [1, C({self.n},{self.m})={limit}], got {self.k}")
        if not (0.0 <= self.tau1 <= 1.0):
            raise ValueError(f"tau1 must be in [0, 1], got {self.tau1}")
        if not (-1.0 <= self.tau2 <= 1.0):
            raise ValueError(f"tau2 must be in [-1, 1], got {self.tau2}")
        if self.early_stop is not None and not (0.0 < self.early_stop <= 1.0):
            raise ValueError(f"early_stop must be in (0, 1], got {self.early_stop}")
        if not (-(2**63) <= self.seed < 2**63):
            raise ValueError("seed must fit in 64 bits")
        if self.max_tokens_answer < 1 or self.max_tokens_subquestion < 1:
            raise ValueError("max_tokens budgets must be >= 1")

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "k": self.k,
            "tau1": self.tau1,
            "tau2": self.tau2,
            "early_stop": self.early_stop,
            "metric": self.metric.value,
            "method": self.method.value,
            "seed": self.seed,
            "max_tokens_answer": self.max_tokens_answer,
            "max_tokens_subquestion": self.max_tokens_subquestion,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineParams":
        return cls(
            n=int(d.get("n", DEFAULT_N)),
            m=int(d.get("m", DEFAULT_M)),
            k=int(d.get("k", DEFAULT_K)),
            tau1=float(d.get("tau1", DEFAULT_TAU1)),
            tau2=float(d.get("tau2", DEFAULT_TAU2)),
            early_stop=None if d.get("early_stop") is None else float(d["early_stop"]),
            metric=ConfidenceMetric(d.get("metric", ConfidenceMetric.MIN_TOKEN_PROB.value)),
            method=Method(d.get("method", Method.CONFIDENCE_GUIDED.value)),
            seed=int(d.get("seed", 0)),
            max_tokens_answer=int(d.get("max_tokens_answer", DEFAULT_MAX_TOKENS_ANSWER)),
            max_tokens_subquestion=int(
                d.get("max_tokens_subquestion", DEFAULT_MAX_TOKENS_SUBQUESTION)
            ),
        )


@dataclass(frozen=True)
class SubQAPair:
    question: str
    answer: str
    answer_probs: tuple[float, ...]


@dataclass(frozen=True)
class SubQABank:
    """The generated sub-question/sub-answer pairs, in generation order."""

    pairs: tuple[SubQAPair, ...]

    def __len__(self) -> int:
        return len(self.pairs)

    def qa_tuples(self, indices: Sequence[int] | None = None) -> tuple[tuple[str, str], ...]:
        pairs = self.pairs if indices is None else [self.pairs[i] for i in indices]
        return tuple((p.question, p.answer) for p in pairs)


@dataclass(frozen=True)
class AnswerCandidate:
    """One answer from one reasoning path (path_index 0 is the base)."""

    text: str
    normalized: str
    confidence: ConfidenceScore
    path_index: int
    subset_indices: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "normalized": self.normalized,
            "confidence": self.confidence.to_dict(),
            "path_index": self.path_index,
            "subset_indices": list(self.subset_indices),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnswerCandidate":
        return cls(
            text=str(d["text"]),
            normalized=str(d["normalized"]),
            confidence=ConfidenceScore.from_dict(d["confidence"]),
            path_index=int(d["path_index"]),
            subset_indices=tuple(int(i) for i in d.get("subset_indices", [])),
        )


@dataclass
class SelectionRecord:
    """The full trace for one instance: every candidate plus the choice."""

    instance_id: str
    base: AnswerCandidate
    refined_paths: list[AnswerCandidate]
    chosen_path_index: int
    skip_reason: SkipReason
    paths_explored: int
    input_tokens: int
    output_tokens: int
    warnings: list[str] = field(default_factory=list)

    @property
    def chosen(self) -> AnswerCandidate:
        if self.chosen_path_index == 0:
            return self.base
        for candidate in self.refined_paths:
            if candidate.path_index == self.chosen_path_index:
                return candidate
        raise ValueError(f"chosen_path_index {self.chosen_path_index} not in record")

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "base": self.base.to_dict(),
            "refined": [c.to_dict() for c in self.refined_paths],
            "chosen_path_index": self.chosen_path_index,
            "skip_reason": self.skip_reason.value,
            "paths_explored": self.paths_explored,
            "token_cost": {"input": self.input_tokens, "output": self.output_tokens},
            "warnings": list(self.warnings),
        }


@dataclass
class CallTally:
    """Accumulates token usage across every backend call for an instance."""

    input_tokens: int = 0
    output_tokens: int = 0
    calls: int = 0

    def add(self, result: GenerationResult) -> None:
        self.input_tokens += result.input_token_count
        self.output_tokens += result.output_token_count
        self.calls += 1


# --- request builders -------------------------------------------------------
# Shared by the pipeline and by anything that needs to pre-script a backend
# (tests, demos): both sides must form byte-identical requests.

def build_base_request(instance: "QAInstance", params: PipelineParams,
                       library: PromptLibrary) -> GenerationRequest:
    template = TemplateId.BASE_MULTIPLE_CHOICE if instance.options else TemplateId.BASE_OPEN_ENDED
    prompt = library.render(
        template,
        PromptBinding(main_question=instance.question, options=tuple(instance.options)),
    )
    return GenerationRequest(
        system_text="",
        user_text=prompt,
        attachments=tuple(instance.attachments),
        max_tokens=params.max_tokens_answer,
    )


def build_subquestion_request(instance: "QAInstance", params: PipelineParams,
                              library: PromptLibrary) -> GenerationRequest:
    prompt = library.render(
        TemplateId.SUB_QUESTION_GEN,
        PromptBinding(
            main_question=instance.question,
            n_subquestions=params.n,
            has_attachments=bool(instance.attachments),
        ),
    )
    return GenerationRequest(
        system_text="",
        user_text=prompt,
        attachments=tuple(instance.attachments),
        max_tokens=params.max_tokens_subquestion,
    )


def build_subanswer_request(instance: "QAInstance", question: str, params: PipelineParams,
                            library: PromptLibrary) -> GenerationRequest:
    prompt = library.render(TemplateId.SUB_ANSWER, PromptBinding(sub_question=question))
    return GenerationRequest(
        system_text="",
        user_text=prompt,
        attachments=tuple(instance.attachments),
        max_tokens=params.max_tokens_answer,
    )


def build_refined_request(instance: "QAInstance", bank: SubQABank, subset: Sequence[int],
                          params: PipelineParams, library: PromptLibrary) -> GenerationRequest:
    # Sub-QAs appear in bank order regardless of draw order.
    prompt = library.render(
        TemplateId.REFINED,
        PromptBinding(
            main_question=instance.question,
            options=tuple(instance.options),
            sub_qas=bank.qa_tuples(sorted(subset)),
        ),
    )
    return GenerationRequest(
        system_text="",
        user_text=prompt,
        attachments=tuple(instance.attachments),
        max_tokens=params.max_tokens_answer,
    )


def build_judge_request(instance: "QAInstance", bank: SubQABank, params: PipelineParams,
                        library: PromptLibrary) -> GenerationRequest:
    template = _JUDGE_TEMPLATE[params.method]
    prompt = library.render(
        template,
        PromptBinding(
            main_question=instance.question,
            n_subquestions=params.m,
            sub_qas=bank.qa_tuples(),
        ),
    )
    return GenerationRequest(
        system_text="",
        user_text=prompt,
        attachments=tuple(instance.attachments),
        max_tokens=params.max_tokens_answer,
    )


# --- operations -------------------------------------------------------------

def _candidate(result: GenerationResult, metric: ConfidenceMetric, path_index: int,
               subset: Sequence[int] = ()) -> AnswerCandidate:
    return AnswerCandidate(
        text=result.text,
        normalized=normalize_answer(result.text),
        confidence=score(result.token_probs(), metric),
        path_index=path_index,
        subset_indices=tuple(sorted(subset)),
    )


def base_answer(instance: "QAInstance", params: PipelineParams, backend,
                library: PromptLibrary | None = None,
                tally: CallTally | None = None) -> AnswerCandidate:
    """Single-step answer with no sub-QA context (path index 0)."""
    library = library or default_library()
    result = backend.generate(build_base_request(instance, params, library))
    if tally is not None:
        tally.add(result)
    return _candidate(result, params.metric, path_index=0)


def generate_bank(instance: "QAInstance", params: PipelineParams, backend,
                  library: PromptLibrary | None = None,
                  tally: CallTally | None = None) -> SubQABank:
    """One sub-question generation call, then one sub-answer call per question.

    A parse yielding fewer than n questions is retried once with the
    identical request, keeping the longer of the two parses; a bank of
    fewer than n pairs is then not an error (the caller clamps m and k to
    what exists). Zero questions after the retry raises
    BankGenerationFailed.
    """
    library = library or default_library()
    request = build_subquestion_request(instance, params, library)

    questions: list[str] = []
    last_error: NoQuestionsParsed | None = None
    for _ in range(2):
        result = backend.generate(request)
        if tally is not None:
            tally.add(result)
        try:
            parsed = parse_subquestions(result.text, params.n)
        except NoQuestionsParsed as exc:
            last_error = exc
            continue
        if len(parsed) > len(questions):
            questions = parsed
        if len(questions) == params.n:
            break
    if not questions:
        raise BankGenerationFailed(f"no sub-questions parsed after retry: {last_error}")

    pairs = []
    for question in questions:
        answer = backend.generate(build_subanswer_request(instance, question, params, library))
        if tally is not None:
            tally.add(answer)
        pairs.append(
            SubQAPair(question=question, answer=answer.text,
                      answer_probs=tuple(answer.token_probs()))
        )
    return SubQABank(pairs=tuple(pairs))


def unrank_combination(rank: int, n: int, m: int) -> list[int]:
    """The rank-th m-combination of range(n) in lexicographic order."""
    if not (0 <= rank < math.comb(n, m)):
        raise ValueError(f"rank {rank} out of range for C({n},{m})")
    combo: list[int] = []
    x = 0
    remaining = n
    need = m
    r = rank
    while need > 0:
        with_x = math.comb(remaining - 1, need - 1)
        if r < with_x:
            combo.append(x)
            need -= 1
        else:
            r -= with_x
        x += 1
        remaining -= 1
    return combo


def curate_subsets(bank_size: int, m: int, k: int, seed: int) -> list[list[int]]:
    """Draw k distinct m-subsets of range(bank_size), uniformly, seeded.

    Implemented as a without-replacement draw of k ranks into the
    lexicographic enumeration of all C(bank_size, m) combinations, so no
    rejection loop is needed and the draw is reproducible.
    """
    if m < 1 or m > bank_size:
        raise ValueError(f"m must be in [1, bank_size={bank_size}], got {m}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    total = math.comb(bank_size, m)
    if k > total:
        raise InfeasibleCuration(
            f"cannot curate {k} distinct subsets: only C({bank_size},{m})={total} exist"
        )
    rng = random.Random(seed)
    ranks = rng.sample(range(total), k)
    return [unrank_combination(rank, bank_size, m) for rank in ranks]


@dataclass
class PathExploration:
    candidates: list[AnswerCandidate]
    paths_explored: int
    warnings: list[str]


def explore_paths(instance: "QAInstance", bank: SubQABank, subsets: Sequence[Sequence[int]],
                  params: PipelineParams, backend, library: PromptLibrary | None = None,
                  tally: CallTally | None = None) -> PathExploration:
    """Query one answer candidate per subset, in order.

    With ``params.early_stop`` set, exploration halts as soon as a
    candidate reaches that confidence. A failed path is recorded as a
    warning and skipped; only all paths failing is fatal.
    """
    library = library or default_library()
    candidates: list[AnswerCandidate] = []
    warnings: list[str] = []
    explored = 0
    for path_index, subset in enumerate(subsets, start=1):
        explored += 1
        try:
            result = backend.generate(
                build_refined_request(instance, bank, subset, params, library)
            )
        except BackendError as exc:
            warnings.append(f"path {path_index} failed: {exc.__class__.__name__}: {exc}")
            continue
        if tally is not None:
            tally.add(result)
        candidate = _candidate(result, params.metric, path_index, subset)
        candidates.append(candidate)
        if params.early_stop is not None and candidate.confidence.value >= params.early_stop:
            break
    if subsets and not candidates:
        raise AllPathsFailed(f"all {len(subsets)} refinement paths failed: {warnings}")
    return PathExploration(candidates=candidates, paths_explored=explored, warnings=warnings)


def refined_answers(instance: "QAInstance", bank: SubQABank, subsets: Sequence[Sequence[int]],
                    params: PipelineParams, backend,
                    library: PromptLibrary | None = None) -> list[AnswerCandidate]:
    """Answer candidates for the curated subsets, in path order."""
    return explore_paths(instance, bank, subsets, params, backend, library).candidates


def select(base: AnswerCandidate, refined: Sequence[AnswerCandidate],
           tau1: float, tau2: float) -> tuple[AnswerCandidate, SkipReason]:
    """Pick the final answer from the base and refined candidates.

    Base confidence at or above tau1 keeps the base outright. Otherwise
    the max-confidence refined candidate r* (ties go to the lowest path
    index) wins only if c(r*) >= c(base) + tau2.
    """
    if base.confidence.value >= tau1:
        return base, SkipReason.HIGH_BASE_CONFIDENCE
    if not refined:
        raise ValueError("select requires refined candidates when base confidence < tau1")
    best = max(refined, key=lambda c: (c.confidence.value, -c.path_index))
    if best.confidence.value >= base.confidence.value + tau2:
        return best, SkipReason.REFINED_ACCEPTED
    return base, SkipReason.REFINED_REJECTED


def _parse_judge_selection(raw: str, bank: SubQABank, m: int) -> list[int]:
    indices: list[int] = []
    for match in re.findall(r"(?<![\w.])(\d+)(?![\w.])", raw):
        idx = int(match) - 1
        if 0 <= idx < len(bank) and idx not in indices:
            indices.append(idx)
    if len(indices) < m:
        normalized_questions = {normalize_answer(p.question): i for i, p in enumerate(bank.pairs)}
        for quoted in re.findall(r'"([^"]+)"', raw):
            idx = normalized_questions.get(normalize_answer(quoted))
            if idx is not None and idx not in indices:
                indices.append(idx)
    if len(indices) < m:
        raise JudgeParseFailed(
            f"judge output names {len(indices)} valid pairs, needed {m}: {raw[:80]!r}"
        )
    return sorted(indices[:m])


def _effective_sizes(params: PipelineParams, bank_size: int,
                     warnings: list[str]) -> tuple[int, int]:
    m = min(params.m, bank_size)
    k = min(params.k, math.comb(bank_size, m))
    if (m, k) != (params.m, params.k):
        warnings.append(
            f"bank of {bank_size} pairs clamped m,k from ({params.m},{params.k}) to ({m},{k})"
        )
    return m, k


def run_confidence_guided(instance: "QAInstance", params: PipelineParams, backend,
                          library: PromptLibrary | None = None,
                          exhaustive: bool = False) -> SelectionRecord:
    """The full confidence-guided procedure for one instance.

    With ``exhaustive`` set, the tau1 skip and early stopping are disabled
    so every path's candidate lands in the record; that makes the record
    replayable offline under any threshold pair.
    """
    library = library or default_library()
    params = params.normalized()
    tally = CallTally()
    warnings: list[str] = []

    base = base_answer(instance, params, backend, library, tally)
    if not exhaustive and base.confidence.value >= params.tau1:
        return SelectionRecord(
            instance_id=instance.id,
            base=base,
            refined_paths=[],
            chosen_path_index=0,
            skip_reason=SkipReason.HIGH_BASE_CONFIDENCE,
            paths_explored=0,
            input_tokens=tally.input_tokens,
            output_tokens=tally.output_tokens,
            warnings=warnings,
        )

    try:
        bank = generate_bank(instance, params, backend, library, tally)
    except BankGenerationFailed as exc:
        warnings.append(f"degraded to base answer: {exc}")
        return SelectionRecord(
            instance_id=instance.id,
            base=base,
            refined_paths=[],
            chosen_path_index=0,
            skip_reason=SkipReason.REFINED_REJECTED,
            paths_explored=0,
            input_tokens=tally.input_tokens,
            output_tokens=tally.output_tokens,
            warnings=warnings,
        )

    m, k = _effective_sizes(params, len(bank), warnings)
    subsets = curate_subsets(len(bank), m, k, params.seed)
    effective = replace(params, early_stop=None) if exhaustive else params
    exploration = explore_paths(instance, bank, subsets, effective, backend, library, tally)
    warnings.extend(exploration.warnings)

    selection_tau1 = math.inf if exhaustive else params.tau1
    chosen, reason = select(base, exploration.candidates, selection_tau1, params.tau2)
    return SelectionRecord(
        instance_id=instance.id,
        base=base,
        refined_paths=exploration.candidates,
        chosen_path_index=chosen.path_index,
        skip_reason=reason,
        paths_explored=exploration.paths_explored,
        input_tokens=tally.input_tokens,
        output_tokens=tally.output_tokens,
        warnings=warnings,
    )


def _run_always_accept(instance: "QAInstance", params: PipelineParams, backend,
                       library: PromptLibrary) -> SelectionRecord:
    # single_subqa / every_subqa / judge_*: one refinement path whose answer
    # is always accepted, with no threshold comparison.
    tally = CallTally()
    warnings: list[str] = []
    base = base_answer(instance, params, backend, library, tally)
    bank = generate_bank(instance, params, backend, library, tally)
    m, _ = _effective_sizes(params, len(bank), warnings)

    if params.method is Method.SINGLE_SUBQA:
        subset = [0]
    elif params.method is Method.EVERY_SUBQA:
        subset = list(range(len(bank)))
    else:
        judge_result = backend.generate(build_judge_request(instance, bank, params, library))
        tally.add(judge_result)
        try:
            subset = _parse_judge_selection(judge_result.text, bank, m)
        except JudgeParseFailed as exc:
            warnings.append(f"judge fallback to first {m} pairs: {exc}")
            subset = list(range(m))

    exploration = explore_paths(instance, bank, [subset], params, backend, library, tally)
    warnings.extend(exploration.warnings)
    chosen = exploration.candidates[0]
    return SelectionRecord(
        instance_id=instance.id,
        base=base,
        refined_paths=exploration.candidates,
        chosen_path_index=chosen.path_index,
        skip_reason=SkipReason.REFINED_ACCEPTED,
        paths_explored=exploration.paths_explored,
        input_tokens=tally.input_tokens,
        output_tokens=tally.output_tokens,
        warnings=warnings,
    )


def run_method(instance: "QAInstance", params: PipelineParams, backend,
               library: PromptLibrary | None = None,
               exhaustive: bool = False) -> SelectionRecord:
    """Dispatch one instance to the configured reasoning method."""
    library = library or default_library()
    params = params.normalized()

    if params.method is Method.BASELINE:
        tally = CallTally()
        base = base_answer(instance, params, backend, library, tally)
        return SelectionRecord(
            instance_id=instance.id,
            base=base,
            refined_paths=[],
            chosen_path_index=0,
            skip_reason=SkipReason.HIGH_BASE_CONFIDENCE,
            paths_explored=0,
            input_tokens=tally.input_tokens,
            output_tokens=tally.output_tokens,
        )
    if params.method is Method.CONFIDENCE_GUIDED:
        return run_confidence_guided(instance, params, backend, library, exhaustive=exhaustive)
    return _run_always_accept(instance, params, backend, library)
