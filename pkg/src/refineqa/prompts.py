"""Prompt template registry, rendering, and sub-question parsing.

Templates live as UTF-8 text files (one per template id) so they can be
swapped without touching code; golden tests pin the rendered bytes. The
file format:

* leading lines starting with ``#`` are header comments, stripped;
* the body follows, with one trailing newline stripped;
* ``{placeholder}`` marks a substitution point;
* ``{{#attachments}}...{{/attachments}}`` wraps a segment rendered only
  for instances that carry attachments (text-only instances omit it).

The placeholder vocabulary is fixed: main_question, n_subquestions,
options, sub_qas, sub_question, base_prompt. ``base_prompt`` expands to
the rendered base template for the binding's instance kind (multiple
choice when options are present, open-ended otherwise).
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

from .errors import MissingBinding, NoQuestionsParsed, UnknownPlaceholder


class TemplateId(str, Enum):
    SUB_QUESTION_GEN = "sub_question_gen"
    SUB_ANSWER = "sub_answer"
    BASE_OPEN_ENDED = "base_open_ended"
    BASE_MULTIPLE_CHOICE = "base_multiple_choice"
    REFINED = "refined"
    JUDGE_SUB_Q = "judge_sub_q"
    JUDGE_SUB_A = "judge_sub_a"
    JUDGE_SUB_QA = "judge_sub_qa"


PLACEHOLDER_VOCABULARY = frozenset(
    {"main_question", "n_subquestions", "options", "sub_qas", "sub_question", "base_prompt"}
)

_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")
_COND_RE = re.compile(r"\{\{#attachments\}\}(.*?)\{\{/attachments\}\}", re.DOTALL)


@dataclass(frozen=True)
class PromptTemplate:
    """One template: id, raw body, and whether it has an attachment block."""

    id: TemplateId
    body: str
    requires_attachments: bool
    source_bytes: bytes = b""

    def placeholders(self) -> set[str]:
        flat = _COND_RE.sub(lambda m: m.group(1), self.body)
        return set(_PLACEHOLDER_RE.findall(flat))

    def version_hash(self) -> str:
        return hashlib.sha256(self.source_bytes or self.body.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class PromptBinding:
    """Values available to a render call.

    Only the fields a template actually names need to be set; rendering a
    template whose placeholder has no usable value raises MissingBinding.
    """

    main_question: str | None = None
    n_subquestions: int | None = None
    options: tuple[tuple[str, str], ...] = ()
    sub_qas: tuple[tuple[str, str], ...] = ()
    sub_question: str | None = None
    has_attachments: bool = False


def _load_body(raw: str) -> str:
    lines = raw.split("\n")
    start = 0
    while start < len(lines) and lines[start].startswith("#"):
        start += 1
    body = "\n".join(lines[start:])
    if body.endswith("\n"):
        body = body[:-1]
    return body


def _serialize_options(options: tuple[tuple[str, str], ...]) -> str:
    return " ".join(f"{label}. {text}" for label, text in options)


def _serialize_sub_qas(template_id: TemplateId, sub_qas: tuple[tuple[str, str], ...]) -> str:
    if template_id is TemplateId.JUDGE_SUB_Q:
        return "\n".join(f"{i}. {q}" for i, (q, _) in enumerate(sub_qas, start=1))
    if template_id in (TemplateId.JUDGE_SUB_A, TemplateId.JUDGE_SUB_QA):
        return "\n".join(
            f"{i}. Sub-question: {q} Sub-answer: {a}"
            for i, (q, a) in enumerate(sub_qas, start=1)
        )
    return "\n".join(f"Sub-question: {q}\nSub-answer: {a}" for q, a in sub_qas)


class PromptLibrary:
    """All eight templates, loaded from a directory or package data."""

    def __init__(self, templates: dict[TemplateId, PromptTemplate]):
        missing = set(TemplateId) - set(templates)
        if missing:
            raise ValueError(f"missing templates: {sorted(t.value for t in missing)}")
        for template in templates.values():
            unknown = template.placeholders() - PLACEHOLDER_VOCABULARY
            if unknown:
                raise UnknownPlaceholder(
                    f"template {template.id.value!r} names unknown placeholders {sorted(unknown)}"
                )
        self._templates = dict(templates)

    @classmethod
    def from_dir(cls, directory: str | Path) -> "PromptLibrary":
        templates = {}
        for tid in TemplateId:
            path = Path(directory) / f"{tid.value}.txt"
            raw_bytes = path.read_bytes()
            body = _load_body(raw_bytes.decode("utf-8"))
            templates[tid] = PromptTemplate(
                id=tid,
                body=body,
                requires_attachments="{{#attachments}}" in body,
                source_bytes=raw_bytes,
            )
        return cls(templates)

    @classmethod
    def packaged(cls) -> "PromptLibrary":
        root = resources.files(__package__) / "templates"
        with resources.as_file(root) as directory:
            return cls.from_dir(directory)

    def get(self, template_id: TemplateId) -> PromptTemplate:
        return self._templates[template_id]

    def version_hashes(self) -> dict[str, str]:
        return {tid.value: self._templates[tid].version_hash() for tid in TemplateId}

    def render(self, template_id: TemplateId, binding: PromptBinding) -> str:
        return render(self._templates[template_id], binding, library=self)


_default_library: PromptLibrary | None = None


def default_library() -> PromptLibrary:
    global _default_library
    if _default_library is None:
        _default_library = PromptLibrary.packaged()
    return _default_library


def _resolve(template_id: TemplateId, name: str, binding: PromptBinding,
             library: PromptLibrary | None) -> str:
    if name == "main_question":
        if not binding.main_question:
            raise MissingBinding(f"{template_id.value} needs main_question")
        return binding.main_question
    if name == "n_subquestions":
        if binding.n_subquestions is None or binding.n_subquestions < 1:
            raise MissingBinding(f"{template_id.value} needs a positive n_subquestions")
        return str(binding.n_subquestions)
    if name == "options":
        if not binding.options:
            raise MissingBinding(f"{template_id.value} needs at least one option")
        return _serialize_options(binding.options)
    if name == "sub_qas":
        if not binding.sub_qas:
            raise MissingBinding(f"{template_id.value} needs at least one sub-QA pair")
        return _serialize_sub_qas(template_id, binding.sub_qas)
    if name == "sub_question":
        if not binding.sub_question:
            raise MissingBinding(f"{template_id.value} needs sub_question")
        return binding.sub_question
    if name == "base_prompt":
        lib = library or default_library()
        base_id = (
            TemplateId.BASE_MULTIPLE_CHOICE if binding.options else TemplateId.BASE_OPEN_ENDED
        )
        return render(lib.get(base_id), binding, library=lib)
    raise UnknownPlaceholder(f"template {template_id.value!r} names unknown placeholder {name!r}")


def render(template: PromptTemplate, binding: PromptBinding,
           library: PromptLibrary | None = None) -> str:
    """Render a template to its final prompt string.

    Deterministic; raises MissingBinding when a named placeholder has no
    usable value and UnknownPlaceholder for names outside the vocabulary.
    The result never contains placeholder residue.
    """
    body = _COND_RE.sub(
        lambda m: m.group(1) if binding.has_attachments else "", template.body
    )
    out = _PLACEHOLDER_RE.sub(
        lambda m: _resolve(template.id, m.group(1), binding, library), body
    )
    return out


_NUMBERED_RE = re.compile(r"^\s*\d+\s*[.):]\s*(.+?)\s*$")
_BULLETED_RE = re.compile(r"^\s*[-*•]\s+(.+?)\s*$")


def parse_subquestions(raw: str, n_expected: int) -> list[str]:
    """Extract up to ``n_expected`` sub-questions from generator output.

    Accepts numbered lists ("1. ...", "2) ..."), bulleted lists, or bare
    lines ending in a question mark; numbering and surrounding whitespace
    are stripped and order is preserved. Raises NoQuestionsParsed when
    nothing extracts.
    """
    if n_expected < 1:
        raise ValueError("n_expected must be >= 1")
    lines = raw.split("\n")
    for pattern in (_NUMBERED_RE, _BULLETED_RE):
        found = [m.group(1) for line in lines if (m := pattern.match(line))]
        if found:
            return found[:n_expected]
    bare = [s for line in lines if (s := line.strip()).endswith("?")]
    if bare:
        return bare[:n_expected]
    raise NoQuestionsParsed(f"no sub-questions found in {raw[:80]!r}")
