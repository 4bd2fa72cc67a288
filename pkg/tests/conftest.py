"""Shared builders for scripted test universes.

A ScriptedWorld pre-computes every request the pipeline could make for a
set of instances (base answer, sub-question generation, sub-answers, one
refined call per *possible* subset, optional judge call) and registers a
scripted result for each. Because request keys ignore thresholds and path
counts, one world serves any (tau1, tau2, k, seed, early_stop) setting.

The raw per-call probability lists are kept on InstanceScript so oracle
code can recompute selections from first principles, independent of the
pipeline's own confidence and selection code.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import pytest

from refineqa.backend import Attachment, GenerationRequest, GenerationResult, ScriptedBackend, request_key
from refineqa.harness import InstanceKind, QAInstance, Split
from refineqa.pipeline import (
    PipelineParams,
    SubQABank,
    SubQAPair,
    build_base_request,
    build_judge_request,
    build_refined_request,
    build_subanswer_request,
    build_subquestion_request,
)
from refineqa.prompts import default_library


def make_result(text: str, probs: list[float], input_tokens: int | None = None) -> GenerationResult:
    """A GenerationResult whose token texts concatenate exactly to text."""
    n = len(probs)
    size, extra = divmod(len(text), n)
    pieces = []
    pos = 0
    for i in range(n):
        width = size + (1 if i < extra else 0)
        pieces.append(text[pos:pos + width])
        pos += width
    return GenerationResult(
        text=text,
        tokens=tuple(zip(pieces, probs)),
        input_token_count=len(text.split()) if input_tokens is None else input_tokens,
        output_token_count=n,
    )


def make_mc_instance(instance_id: str, question: str | None = None, gold: str = "A",
                     n_options: int = 4, attachments: tuple[Attachment, ...] = (),
                     split: Split = Split.TEST) -> QAInstance:
    labels = [chr(ord("A") + i) for i in range(n_options)]
    return QAInstance(
        id=instance_id,
        kind=InstanceKind.MULTIPLE_CHOICE,
        question=question or f"Main question {instance_id}?",
        gold=gold,
        options=tuple((label, f"option {label.lower()} text") for label in labels),
        attachments=attachments,
        split=split,
    )


@dataclass
class InstanceScript:
    """Raw scripted material for one instance, for oracle recomputation."""

    instance: QAInstance
    base_text: str
    base_probs: list[float]
    questions: list[str]
    sub_answer_texts: list[str]
    # subset (sorted tuple of bank indices) -> (text, probs)
    refined: dict[tuple[int, ...], tuple[str, list[float]]] = field(default_factory=dict)
    judge_text: str | None = None


class ScriptedWorld:
    """Builds scripted backend entries from per-instance scripts."""

    def __init__(self, params: PipelineParams):
        self.params = params.normalized()
        self.library = default_library()
        self.entries: dict[str, GenerationResult] = {}
        self.scripts: dict[str, InstanceScript] = {}

    def _register(self, request: GenerationRequest, result: GenerationResult) -> str:
        key = request_key(request)
        self.entries[key] = result
        return key

    def add_instance(
        self,
        instance: QAInstance,
        base: tuple[str, list[float]],
        bank: list[tuple[str, str]] | None = None,
        refined: dict[tuple[int, ...], tuple[str, list[float]]] | None = None,
        judge_text: str | None = None,
        subquestion_raw: str | None = None,
        script_all_subsets: bool = True,
    ) -> InstanceScript:
        """Script every call the pipeline might make for this instance.

        bank entries are (question, answer) pairs; refined maps a sorted
        index tuple to (text, probs). With script_all_subsets, any subset
        not named in refined gets a default low-confidence entry so any
        curation seed finds its call scripted.
        """
        params = self.params
        script = InstanceScript(
            instance=instance,
            base_text=base[0],
            base_probs=list(base[1]),
            questions=[q for q, _ in (bank or [])],
            sub_answer_texts=[a for _, a in (bank or [])],
            refined=dict(refined or {}),
            judge_text=judge_text,
        )
        self._register(build_base_request(instance, params, self.library),
                       make_result(base[0], list(base[1])))

        if bank:
            raw = subquestion_raw or "\n".join(
                f"{i}. {q}" for i, q in enumerate(script.questions, start=1)
            )
            self._register(build_subquestion_request(instance, params, self.library),
                           make_result(raw, [0.9]))
            for question, answer in bank:
                self._register(
                    build_subanswer_request(instance, question, params, self.library),
                    make_result(answer, [0.9]),
                )
            bank_obj = SubQABank(pairs=tuple(
                SubQAPair(question=q, answer=a, answer_probs=(0.9,)) for q, a in bank
            ))
            if script_all_subsets:
                for combo in itertools.combinations(range(len(bank)), min(params.m, len(bank))):
                    script.refined.setdefault(tuple(combo), ("Z", [0.05]))
            for subset, (text, probs) in script.refined.items():
                self._register(
                    build_refined_request(instance, bank_obj, list(subset), params, self.library),
                    make_result(text, list(probs)),
                )
            if judge_text is not None:
                self._register(build_judge_request(instance, bank_obj, params, self.library),
                               make_result(judge_text, [0.9]))
        self.scripts[instance.id] = script
        return script

    def backend(self) -> ScriptedBackend:
        return ScriptedBackend(self.entries)


def instance_row(instance: QAInstance) -> dict:
    """Dataset JSONL row for a QAInstance."""
    return {
        "id": instance.id,
        "kind": instance.kind.value,
        "question": instance.question,
        "options": [{"label": l, "text": t} for l, t in instance.options],
        "gold": instance.gold,
        "attachments": [a.to_dict() for a in instance.attachments],
        "split": instance.split.value,
    }


# Planted confidence groups: replay accuracy over these records is uniquely
# maximized at (tau1=0.7, tau2=0.1). Gold is always "A".
#   (base_text, base_conf, refined_text, refined_conf)
PLANT_GROUPS = [
    ("B", 0.65, "A", 0.75),   # explore-and-accept wins only when tau1 >= 0.7, tau2 <= 0.1
    ("A", 0.72, "B", 0.95),   # must skip: exploring at tau1 >= 0.8 flips to a wrong answer
    ("A", 0.50, "B", 0.55),   # small inflation: tau2 <= 0.0 accepts the wrong refined
    ("B", 0.55, "A", 0.80),   # punishes tau1 <= 0.5 (skip keeps the wrong base)
]


def plant_params(**overrides) -> PipelineParams:
    defaults = dict(n=2, m=1, k=2, tau1=0.7, tau2=0.1, seed=0)
    defaults.update(overrides)
    return PipelineParams(**defaults)


def build_planted_world(copies: int = 3, params: PipelineParams | None = None):
    """A scripted world whose exhaustive records peak at (0.7, 0.1).

    Every possible refinement subset of an instance shares one text and
    confidence, so the max-confidence refined candidate is the same no
    matter which subsets a seed curates.
    """
    params = params or plant_params()
    world = ScriptedWorld(params)
    dataset = []
    for copy in range(copies):
        for g, (base_text, base_conf, refined_text, refined_conf) in enumerate(PLANT_GROUPS):
            inst = make_mc_instance(f"plant-{g}-{copy}", gold="A")
            bank = [(f"Sub {g}.{copy}.{j}?", f"fact {j}") for j in range(1, params.n + 1)]
            refined = {
                (i,): (refined_text, [refined_conf]) for i in range(params.n)
            }
            world.add_instance(inst, base=(base_text, [base_conf]), bank=bank,
                               refined=refined, script_all_subsets=False)
            dataset.append(inst)
    return world, params, dataset


class BudgetExhausted(KeyboardInterrupt):
    """Simulates a process kill between backend calls."""


class BudgetedBackend:
    """Passes calls through until the budget runs out, then interrupts."""

    def __init__(self, inner, budget: int):
        self.inner = inner
        self.budget = budget
        self.calls = 0

    def generate(self, request):
        if self.calls >= self.budget:
            raise BudgetExhausted(f"budget of {self.budget} calls exhausted")
        self.calls += 1
        return self.inner.generate(request)


@pytest.fixture
def library():
    return default_library()
