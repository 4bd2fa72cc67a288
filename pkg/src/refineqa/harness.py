"""Dataset ingestion, answer matching, and resumable run orchestration.

Datasets are JSONL, one instance per line:

    {"id": ..., "kind": "multiple_choice" | "open_ended" | "boolean",
     "question": ..., "options": [{"label": ..., "text": ...}],
     "gold": ..., "attachments": [{"uri": ..., "media_type": ...}],
     "split": "validation" | "test" | "train"}

Unknown fields are ignored; missing required fields are fatal with the
line number. Runs persist to an append-only ``records.jsonl`` plus a
``summary.json`` under ``<store_dir>/<run_id>/``; restarting a run with
the same id skips instances whose records already exist, so a killed run
resumes where it left off.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from .backend import Attachment, BackendConfig
from .errors import ConfigError, EmptyDataset, SchemaError, StoreIOError
from .matching import extract_option_letter, leading_yes_no, normalize_answer
from .pipeline import PipelineParams, SelectionRecord, run_method
from .prompts import PromptLibrary, default_library

HOLDOUT_FRACTION = 0.10


class InstanceKind(str, Enum):
    MULTIPLE_CHOICE = "multiple_choice"
    OPEN_ENDED = "open_ended"
    BOOLEAN = "boolean"


class Split(str, Enum):
    VALIDATION = "validation"
    TEST = "test"
    TRAIN = "train"


@dataclass(frozen=True)
class QAInstance:
    """One benchmark item."""

    id: str
    kind: InstanceKind
    question: str
    gold: str
    options: tuple[tuple[str, str], ...] = ()
    attachments: tuple[Attachment, ...] = ()
    split: Split = Split.TEST

    def validate(self) -> None:
        if not self.question:
            raise SchemaError("question must be non-empty", field="question")
        if self.kind is InstanceKind.MULTIPLE_CHOICE:
            if len(self.options) < 2:
                raise SchemaError("multiple_choice needs >= 2 options", field="options")
            labels = [label for label, _ in self.options]
            if len(set(labels)) != len(labels):
                raise SchemaError("option labels must be unique", field="options")
            if self.gold not in labels:
                raise SchemaError(
                    f"gold {self.gold!r} not among option labels {labels}", field="gold"
                )
        elif self.options:
            raise SchemaError(f"{self.kind.value} must not carry options", field="options")
        if self.kind is InstanceKind.BOOLEAN and self.gold not in ("yes", "no"):
            raise SchemaError(f"boolean gold must be yes/no, got {self.gold!r}", field="gold")

    def without_attachments(self) -> "QAInstance":
        return replace(self, attachments=())


def _parse_instance(row: dict, line_number: int) -> QAInstance:
    for required in ("id", "kind", "question", "gold"):
        if required not in row:
            raise SchemaError(
                f"line {line_number}: missing required field {required!r}",
                line=line_number, field=required,
            )
    try:
        kind = InstanceKind(row["kind"])
    except ValueError:
        raise SchemaError(
            f"line {line_number}: unknown kind {row['kind']!r}",
            line=line_number, field="kind",
        ) from None
    try:
        split = Split(row.get("split", "test"))
    except ValueError:
        raise SchemaError(
            f"line {line_number}: unknown split {row['split']!r}",
            line=line_number, field="split",
        ) from None
    options = tuple(
        (str(o["label"]), str(o["text"])) for o in row.get("options", [])
    )
    attachments = tuple(Attachment.from_dict(a) for a in row.get("attachments", []))
    instance = QAInstance(
        id=str(row["id"]),
        kind=kind,
        question=str(row["question"]),
        gold=str(row["gold"]),
        options=options,
        attachments=attachments,
        split=split,
    )
    try:
        instance.validate()
    except SchemaError as exc:
        raise SchemaError(f"line {line_number}: {exc}", line=line_number, field=exc.field) from None
    return instance


def load_dataset(path: str | Path, format_hint: str = "jsonl",
                 holdout_seed: int = 0) -> list[QAInstance]:
    """Load and validate a JSONL dataset, preserving file order.

    When no row is labeled ``validation``, a seeded 10% of the training
    rows is relabeled as the validation holdout (deterministic in
    ``holdout_seed``).
    """
    if format_hint != "jsonl":
        raise ValueError(f"unsupported dataset format {format_hint!r}")
    text = Path(path).read_text(encoding="utf-8")
    instances: list[QAInstance] = []
    for line_number, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"line {line_number}: invalid JSON: {exc}", line=line_number) from None
        instances.append(_parse_instance(row, line_number))
    if not instances:
        raise EmptyDataset(f"{path} contains no instances")

    ids = [i.id for i in instances]
    if len(set(ids)) != len(ids):
        raise SchemaError("duplicate instance ids in dataset", field="id")

    if not any(i.split is Split.VALIDATION for i in instances):
        train_positions = [pos for pos, i in enumerate(instances) if i.split is Split.TRAIN]
        count = round(len(train_positions) * HOLDOUT_FRACTION)
        if count:
            rng = random.Random(holdout_seed)
            held_out = set(rng.sample(train_positions, count))
            instances = [
                replace(inst, split=Split.VALIDATION) if pos in held_out else inst
                for pos, inst in enumerate(instances)
            ]
    return instances


def dataset_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def match_answer(candidate_text: str, instance: QAInstance) -> bool:
    """Whether a generated answer matches the instance's gold answer.

    Multiple choice: first standalone option letter, falling back to a
    normalized match against option texts. Boolean: the leading yes/no
    token. Open-ended: normalized exact match. Unmatchable text is simply
    wrong, never an error.
    """
    if instance.kind is InstanceKind.MULTIPLE_CHOICE:
        labels = [label for label, _ in instance.options]
        letter = extract_option_letter(candidate_text, labels)
        if letter is not None:
            return letter == instance.gold
        normalized = normalize_answer(candidate_text)
        for label, text in instance.options:
            if normalized == normalize_answer(text):
                return label == instance.gold
        return False
    if instance.kind is InstanceKind.BOOLEAN:
        return leading_yes_no(candidate_text) == instance.gold
    return normalize_answer(candidate_text) == normalize_answer(instance.gold)


# --- run store ---------------------------------------------------------------

class RunStore:
    """Append-only JSONL record store plus a summary, under one directory."""

    def __init__(self, root: str | Path, run_id: str):
        if not run_id or any(c in run_id for c in "/\\:\0") or run_id in (".", ".."):
            raise ConfigError(f"run_id {run_id!r} is not filesystem-safe", field="run_id")
        self.run_id = run_id
        self.directory = Path(root) / run_id
        self.records_path = self.directory / "records.jsonl"
        self.summary_path = self.directory / "summary.json"
        self._lock = threading.Lock()

    def open(self, config_snapshot: dict) -> None:
        """Create the run directory, or verify config when resuming."""
        try:
            self.directory.mkdir(parents=True, exist_ok=True)
            if self.summary_path.exists():
                existing = json.loads(self.summary_path.read_text(encoding="utf-8"))
                if existing.get("config") != config_snapshot:
                    raise ConfigError(
                        f"run {self.run_id!r} exists with a different config; "
                        "choose a new run_id", field="run_id",
                    )
            else:
                self._write_summary({
                    "run_id": self.run_id,
                    "status": "running",
                    "config": config_snapshot,
                })
        except OSError as exc:
            raise StoreIOError(f"cannot open run store: {exc}") from exc

    def completed_ids(self) -> set[str]:
        return {record["instance_id"] for record in self.read_records()}

    def read_records(self) -> list[dict]:
        if not self.records_path.exists():
            return []
        try:
            lines = self.records_path.read_text(encoding="utf-8").split("\n")
        except OSError as exc:
            raise StoreIOError(f"cannot read records: {exc}") from exc
        records = []
        for idx, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError:
                if idx == len(lines) - 1 or all(not l.strip() for l in lines[idx + 1:]):
                    # Torn final line from a crashed writer; the instance
                    # simply does not count as completed.
                    break
                raise StoreIOError(f"corrupt record at line {idx + 1} of {self.records_path}")
        return records

    def append(self, record: dict) -> None:
        line = json.dumps(record, sort_keys=True, ensure_ascii=False)
        try:
            with self._lock:
                with self.records_path.open("a", encoding="utf-8") as handle:
                    handle.write(line + "\n")
                    handle.flush()
                    os.fsync(handle.fileno())
        except OSError as exc:
            raise StoreIOError(f"cannot append record: {exc}") from exc

    def finalize(self, aggregates: dict) -> dict:
        summary = json.loads(self.summary_path.read_text(encoding="utf-8"))
        summary["status"] = "complete"
        summary["aggregates"] = aggregates
        summary["timestamps"] = {"finalized_at": time.strftime("%Y-%m-%dT%H:%M:%S%z")}
        self._write_summary(summary)
        return summary

    def read_summary(self) -> dict:
        try:
            return json.loads(self.summary_path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise StoreIOError(f"cannot read summary: {exc}") from exc

    def _write_summary(self, summary: dict) -> None:
        try:
            self.summary_path.write_text(
                json.dumps(summary, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
                encoding="utf-8",
            )
        except OSError as exc:
            raise StoreIOError(f"cannot write summary: {exc}") from exc


class MemoryRunStore:
    """In-memory store with the RunStore interface, for tests and sweeps."""

    def __init__(self, run_id: str = "memory"):
        self.run_id = run_id
        self.records: list[dict] = []
        self.summary: dict = {}
        self._lock = threading.Lock()

    def open(self, config_snapshot: dict) -> None:
        self.summary = {"run_id": self.run_id, "status": "running", "config": config_snapshot}

    def completed_ids(self) -> set[str]:
        return {record["instance_id"] for record in self.records}

    def read_records(self) -> list[dict]:
        return list(self.records)

    def append(self, record: dict) -> None:
        with self._lock:
            self.records.append(record)

    def finalize(self, aggregates: dict) -> dict:
        self.summary["status"] = "complete"
        self.summary["aggregates"] = aggregates
        return self.summary

    def read_summary(self) -> dict:
        return self.summary


# --- evaluation --------------------------------------------------------------

@dataclass
class RunRecord:
    """Finalized run: config snapshot, aggregates, and the stored records."""

    run_id: str
    config: dict
    aggregates: dict
    records: list[dict] = field(default_factory=list)


def config_snapshot(params: PipelineParams, backend_config: BackendConfig | None,
                    library: PromptLibrary, *, dataset_path: str | Path | None = None,
                    dataset_count: int | None = None, blind: bool = False,
                    exhaustive: bool = False, workers: int = 1) -> dict:
    """The reproducibility snapshot stored with every run (no secrets)."""
    dataset: dict = {}
    if dataset_path is not None:
        dataset = {
            "digest": dataset_digest(dataset_path),
            "path_basename": Path(dataset_path).name,
        }
    if dataset_count is not None:
        dataset["count"] = dataset_count
    return {
        "params": params.to_dict(),
        "backend": backend_config.to_dict() if backend_config else None,
        "templates": library.version_hashes(),
        "dataset": dataset,
        "blind": blind,
        "exhaustive": exhaustive,
        "workers": workers,
    }


def record_to_row(record: SelectionRecord, instance: QAInstance) -> dict:
    """Serialize a selection record, annotating every candidate with
    correctness against the instance's gold answer."""
    row = record.to_dict()
    row["base"]["correct"] = match_answer(record.base.text, instance)
    for candidate, serialized in zip(record.refined_paths, row["refined"]):
        serialized["correct"] = match_answer(candidate.text, instance)
    chosen = record.chosen
    row["correct"] = match_answer(chosen.text, instance)
    row["error"] = None
    return row


def _error_row(instance: QAInstance, exc: Exception) -> dict:
    return {
        "instance_id": instance.id,
        "correct": False,
        "error": {"class": exc.__class__.__name__, "message": str(exc)},
        "base": None,
        "refined": [],
        "chosen_path_index": None,
        "skip_reason": None,
        "paths_explored": 0,
        "token_cost": {"input": 0, "output": 0},
        "warnings": [],
    }


def compute_aggregates(records: list[dict]) -> dict:
    total = len(records)
    correct = sum(1 for r in records if r.get("correct"))
    errors = sum(1 for r in records if r.get("error"))
    paths = [1 + int(r.get("paths_explored", 0)) for r in records]
    base_confs = [
        r["base"]["confidence"]["value"] for r in records if r.get("base")
    ]
    refined_confs = [
        max(c["confidence"]["value"] for c in r["refined"])
        for r in records if r.get("refined")
    ]
    return {
        "total": total,
        "correct": correct,
        "errors": errors,
        "accuracy": (correct / total) if total else 0.0,
        "mean_paths": (sum(paths) / total) if total else 0.0,
        "mean_base_confidence": (sum(base_confs) / len(base_confs)) if base_confs else None,
        "mean_refined_confidence": (
            sum(refined_confs) / len(refined_confs) if refined_confs else None
        ),
        "input_tokens": sum(r["token_cost"]["input"] for r in records),
        "output_tokens": sum(r["token_cost"]["output"] for r in records),
    }


def run_eval(dataset: list[QAInstance], params: PipelineParams, backend, store,
             *, workers: int = 1, blind: bool = False, exhaustive: bool = False,
             library: PromptLibrary | None = None,
             backend_config: BackendConfig | None = None,
             dataset_path: str | Path | None = None) -> RunRecord:
    """Evaluate every dataset instance, flushing each record as it lands.

    Resumable: reopening the same run id skips instances that already have
    records. Per-instance failures are recorded (and scored incorrect)
    without aborting the run; only store IO failures abort. Aggregates are
    recomputed from the stored records at the end.
    """
    if not dataset:
        raise EmptyDataset("run_eval needs at least one instance")
    params = params.normalized()
    library = library or default_library()
    snapshot = config_snapshot(
        params, backend_config, library,
        dataset_path=dataset_path, dataset_count=len(dataset),
        blind=blind, exhaustive=exhaustive, workers=workers,
    )
    store.open(snapshot)
    done = store.completed_ids()
    pending = [inst for inst in dataset if inst.id not in done]

    def evaluate(instance: QAInstance) -> dict:
        pipeline_view = instance.without_attachments() if blind else instance
        try:
            record = run_method(pipeline_view, params, backend, library, exhaustive=exhaustive)
            return record_to_row(record, instance)
        except Exception as exc:  # recorded, scored incorrect, never aborts the run
            return _error_row(instance, exc)

    if workers <= 1:
        for instance in pending:
            store.append(evaluate(instance))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for row in pool.map(evaluate, pending):
                store.append(row)

    records = store.read_records()
    aggregates = compute_aggregates(records)
    store.finalize(aggregates)
    return RunRecord(run_id=store.run_id, config=snapshot, aggregates=aggregates,
                     records=records)
