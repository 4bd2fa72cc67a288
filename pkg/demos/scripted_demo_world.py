"""Helpers the demo scripts share: a tiny scripted universe builder.

A scripted backend replays canned results keyed by a hash of the request
content, so a whole pipeline run works offline and deterministically. The
builder here pre-registers every call the pipeline could make for an
instance: the base answer, the sub-question generation, one sub-answer per
question, and one refined answer per possible subset.
"""

from __future__ import annotations

import itertools

from refineqa import (
    GenerationResult,
    InstanceKind,
    PipelineParams,
    QAInstance,
    ScriptedBackend,
    SubQABank,
    SubQAPair,
    request_key,
)
from refineqa.pipeline import (
    build_base_request,
    build_refined_request,
    build_subanswer_request,
    build_subquestion_request,
)
from refineqa.prompts import default_library


def result_for(text: str, probs: list[float]) -> GenerationResult:
    n = len(probs)
    size, extra = divmod(len(text), n)
    pieces, pos = [], 0
    for i in range(n):
        width = size + (1 if i < extra else 0)
        pieces.append(text[pos:pos + width])
        pos += width
    return GenerationResult(text=text, tokens=tuple(zip(pieces, probs)),
                            input_token_count=len(text.split()), output_token_count=n)


def mc_instance(instance_id: str, question: str, gold: str,
                option_texts: list[str]) -> QAInstance:
    labels = [chr(ord("A") + i) for i in range(len(option_texts))]
    return QAInstance(
        id=instance_id, kind=InstanceKind.MULTIPLE_CHOICE, question=question,
        gold=gold, options=tuple(zip(labels, option_texts)),
    )


class DemoWorld:
    """Collects scripted entries for a set of instances."""

    def __init__(self, params: PipelineParams):
        self.params = params.normalized()
        self.library = default_library()
        self.entries: dict[str, GenerationResult] = {}

    def script(self, instance: QAInstance, base: tuple[str, list[float]],
               bank: list[tuple[str, str]] | None = None,
               refined: dict[tuple[int, ...], tuple[str, list[float]]] | None = None):
        params, lib = self.params, self.library
        self.entries[request_key(build_base_request(instance, params, lib))] = \
            result_for(*base)
        if not bank:
            return
        raw = "\n".join(f"{i}. {q}" for i, (q, _) in enumerate(bank, start=1))
        self.entries[request_key(build_subquestion_request(instance, params, lib))] = \
            result_for(raw, [0.9])
        for question, answer in bank:
            self.entries[request_key(
                build_subanswer_request(instance, question, params, lib))] = \
                result_for(answer, [0.9])
        bank_obj = SubQABank(pairs=tuple(
            SubQAPair(question=q, answer=a, answer_probs=(0.9,)) for q, a in bank))
        refined = dict(refined or {})
        for combo in itertools.combinations(range(len(bank)), min(params.m, len(bank))):
            refined.setdefault(tuple(combo), ("(no help)", [0.2]))
        for subset, payload in refined.items():
            self.entries[request_key(
                build_refined_request(instance, bank_obj, list(subset), params, lib))] = \
                result_for(*payload)

    def backend(self) -> ScriptedBackend:
        return ScriptedBackend(self.entries)
