"""Post-hoc analytics over stored run records.

Everything here is pure computation over records already on disk; no
backend is ever queried. Threshold sweeps work by *replaying* the
selection rule: for records captured in exhaustive mode (skip and early
stopping disabled, so every path's confidence is stored), re-applying the
rule at any (tau1, tau2) gives exactly the accuracy a live run with those
thresholds would have produced.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IdMismatch, IncompleteRecord, TooFewRecords, StoreIOError

OUTPUT_TOKEN_COST_FACTOR = 4.0


@dataclass(frozen=True)
class CandidateView:
    confidence: float
    correct: bool
    path_index: int


@dataclass(frozen=True)
class RecordView:
    """The slice of a stored record that analysis needs.

    ``correct`` is the run-time correctness of the *chosen* answer;
    per-candidate correctness lives on ``base`` and ``refined`` so the
    selection rule can be replayed under different thresholds.
    """

    instance_id: str
    correct: bool
    base: CandidateView | None
    refined: tuple[CandidateView, ...]
    paths_explored: int
    input_tokens: int
    output_tokens: int
    errored: bool = False

    @classmethod
    def from_row(cls, row: dict) -> "RecordView":
        if row.get("error"):
            return cls(
                instance_id=row["instance_id"], correct=False, base=None, refined=(),
                paths_explored=int(row.get("paths_explored", 0)),
                input_tokens=int(row["token_cost"]["input"]),
                output_tokens=int(row["token_cost"]["output"]),
                errored=True,
            )
        base = CandidateView(
            confidence=float(row["base"]["confidence"]["value"]),
            correct=bool(row["base"]["correct"]),
            path_index=0,
        )
        refined = tuple(
            CandidateView(
                confidence=float(c["confidence"]["value"]),
                correct=bool(c["correct"]),
                path_index=int(c["path_index"]),
            )
            for c in row.get("refined", [])
        )
        return cls(
            instance_id=row["instance_id"], correct=bool(row.get("correct")),
            base=base, refined=refined,
            paths_explored=int(row.get("paths_explored", 0)),
            input_tokens=int(row["token_cost"]["input"]),
            output_tokens=int(row["token_cost"]["output"]),
        )


def load_run(run_dir: str | Path) -> tuple[list[RecordView], dict]:
    """Records plus summary from a run directory."""
    run_dir = Path(run_dir)
    records_path = run_dir / "records.jsonl"
    summary_path = run_dir / "summary.json"
    if not records_path.exists():
        raise StoreIOError(f"{records_path} does not exist")
    views = []
    for line in records_path.read_text(encoding="utf-8").split("\n"):
        if line.strip():
            views.append(RecordView.from_row(json.loads(line)))
    summary = {}
    if summary_path.exists():
        summary = json.loads(summary_path.read_text(encoding="utf-8"))
    return views, summary


def _best_refined(record: RecordView) -> CandidateView:
    return max(record.refined, key=lambda c: (c.confidence, -c.path_index))


def _replay_one(record: RecordView, tau1: float, tau2: float) -> bool:
    if record.errored or record.base is None:
        return False
    if record.base.confidence >= tau1:
        return record.base.correct
    if not record.refined:
        raise IncompleteRecord(
            f"record {record.instance_id} has no refined candidates but base "
            f"confidence {record.base.confidence} is below tau1={tau1}; "
            "capture records in exhaustive mode to replay"
        )
    best = _best_refined(record)
    if best.confidence >= record.base.confidence + tau2:
        return best.correct
    return record.base.correct


def replay_select(records: list[RecordView], tau1: float, tau2: float,
                  policy: str = "threshold") -> float:
    """Accuracy of the selection rule re-applied offline at (tau1, tau2).

    ``policy="normalized"`` is the ablation variant: both confidence
    populations are z-scored over the record set and the larger z wins,
    with tau2 ignored (tau1 skipping still applies).
    """
    if not records:
        raise ValueError("replay_select needs at least one record")
    if policy == "threshold":
        hits = sum(1 for record in records if _replay_one(record, tau1, tau2))
        return hits / len(records)
    if policy == "normalized":
        return _replay_normalized(records, tau1)
    raise ValueError(f"unknown replay policy {policy!r}")


def _replay_normalized(records: list[RecordView], tau1: float) -> float:
    usable = [r for r in records if not r.errored and r.base is not None]
    base_confs = np.array([r.base.confidence for r in usable])
    refined_confs = np.array(
        [_best_refined(r).confidence if r.refined else np.nan for r in usable]
    )
    needs_refined = [r for r in usable if r.base.confidence < tau1]
    if any(not r.refined for r in needs_refined):
        raise IncompleteRecord("normalized replay needs refined candidates below tau1")

    def z(values: np.ndarray) -> np.ndarray:
        finite = values[~np.isnan(values)]
        std = float(np.std(finite)) if finite.size else 0.0
        mean = float(np.mean(finite)) if finite.size else 0.0
        if std == 0.0:
            return np.zeros_like(values)
        return (values - mean) / std

    base_z = z(base_confs)
    refined_z = z(refined_confs)
    hits = 0
    for idx, record in enumerate(usable):
        if record.base.confidence >= tau1 or not record.refined:
            hits += record.base.correct
        elif refined_z[idx] > base_z[idx]:
            hits += _best_refined(record).correct
        else:
            hits += record.base.correct
    return hits / len(records)


@dataclass
class SweepResult:
    """Accuracy over the whole (tau1, tau2) lattice, plus the best cell."""

    grid: list[tuple[float, float, float]]
    best: tuple[float, float]
    tie_break: str = "lowest_tau1_then_tau2"

    def to_dict(self) -> dict:
        return {
            "grid": [{"tau1": a, "tau2": b, "accuracy": acc} for a, b, acc in self.grid],
            "best": {"tau1": self.best[0], "tau2": self.best[1]},
            "tie_break": self.tie_break,
        }


def _lattice(lo: float, hi: float, step: float) -> list[float]:
    count = int(round((hi - lo) / step)) + 1
    return [round(lo + i * step, 10) for i in range(count)]


def grid_search(records: list[RecordView],
                tau1_range: tuple[float, float] = (0.0, 1.0),
                tau2_range: tuple[float, float] = (-1.0, 1.0),
                step: float = 0.1,
                tau1_step: float | None = None,
                tau2_step: float | None = None) -> SweepResult:
    """Replay the selection rule at every lattice point.

    Defaults cover tau1 in [0, 1] and tau2 in [-1, 1] at step 0.1, an
    11 x 21 = 231 point lattice. Ties resolve to the smallest tau1, then
    the smallest tau2.
    """
    tau1_values = _lattice(tau1_range[0], tau1_range[1], tau1_step or step)
    tau2_values = _lattice(tau2_range[0], tau2_range[1], tau2_step or step)
    grid = []
    best_cell: tuple[float, float] | None = None
    best_accuracy = -1.0
    for tau1 in tau1_values:
        for tau2 in tau2_values:
            accuracy = replay_select(records, tau1, tau2)
            grid.append((tau1, tau2, accuracy))
            if accuracy > best_accuracy:
                best_accuracy = accuracy
                best_cell = (tau1, tau2)
    assert best_cell is not None
    return SweepResult(grid=grid, best=best_cell)


@dataclass
class CalibrationReport:
    """Equal-count bins of base confidence vs accuracy, plus Pearson r."""

    bins: list[tuple[float, float, int]]
    pearson_r: float
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {
            "bins": [
                {"mean_confidence": c, "accuracy": a, "count": n} for c, a, n in self.bins
            ],
            "pearson_r": None if math.isnan(self.pearson_r) else self.pearson_r,
            "degenerate": self.degenerate,
        }


def calibration(records: list[RecordView], bins: int = 10) -> CalibrationReport:
    """Sort by base confidence and bin into near-equal counts.

    The first ``total mod bins`` bins take one extra record. Pearson r is
    computed over the (mean confidence, accuracy) points of the bins; zero
    variance on either axis yields NaN with the degenerate flag set.
    """
    usable = [r for r in records if not r.errored and r.base is not None]
    if len(usable) < bins:
        raise TooFewRecords(f"need >= {bins} records, got {len(usable)}")
    ordered = sorted(usable, key=lambda r: r.base.confidence)
    quotient, remainder = divmod(len(ordered), bins)
    report_bins = []
    start = 0
    for b in range(bins):
        size = quotient + (1 if b < remainder else 0)
        chunk = ordered[start:start + size]
        start += size
        mean_conf = sum(r.base.confidence for r in chunk) / len(chunk)
        accuracy = sum(1 for r in chunk if r.base.correct) / len(chunk)
        report_bins.append((mean_conf, accuracy, len(chunk)))

    xs = np.array([b[0] for b in report_bins])
    ys = np.array([b[1] for b in report_bins])
    if float(np.std(xs)) == 0.0 or float(np.std(ys)) == 0.0:
        return CalibrationReport(bins=report_bins, pearson_r=float("nan"), degenerate=True)
    pearson = float(np.corrcoef(xs, ys)[0, 1])
    return CalibrationReport(bins=report_bins, pearson_r=pearson)


@dataclass
class InflationReport:
    """Base vs max-confidence refined answers: confidence means and accuracy."""

    mean_base_confidence: float
    mean_refined_confidence: float
    delta: float
    base_accuracy: float
    refined_accuracy: float

    def to_dict(self) -> dict:
        return {
            "mean_base_confidence": self.mean_base_confidence,
            "mean_refined_confidence": self.mean_refined_confidence,
            "delta": self.delta,
            "base_accuracy": self.base_accuracy,
            "refined_accuracy": self.refined_accuracy,
        }


def inflation_report(records: list[RecordView]) -> InflationReport:
    """How much sub-QA context shifts confidence relative to the base answer.

    The refined confidence of an instance is the max over its refined
    candidates. Every record must carry at least one refined candidate
    (exhaustive-mode capture).
    """
    usable = [r for r in records if not r.errored and r.base is not None]
    if not usable:
        raise IncompleteRecord("no usable records")
    for record in usable:
        if not record.refined:
            raise IncompleteRecord(
                f"record {record.instance_id} has no refined candidates; "
                "inflation needs exhaustive-mode records"
            )
    base_confs = [r.base.confidence for r in usable]
    best = [_best_refined(r) for r in usable]
    refined_confs = [c.confidence for c in best]
    mean_base = sum(base_confs) / len(usable)
    mean_refined = sum(refined_confs) / len(usable)
    return InflationReport(
        mean_base_confidence=mean_base,
        mean_refined_confidence=mean_refined,
        delta=mean_refined - mean_base,
        base_accuracy=sum(1 for r in usable if r.base.correct) / len(usable),
        refined_accuracy=sum(1 for c in best if c.correct) / len(usable),
    )


@dataclass
class BootstrapResult:
    """Paired bootstrap comparison of two correctness vectors."""

    b: int
    delta_orig: float
    p_value: float
    seed: int

    def formatted_p(self) -> str:
        if self.p_value == 0.0:
            return f"<{1.0 / self.b:.4g}"
        return f"{self.p_value:.4f}"

    def to_dict(self) -> dict:
        return {
            "b": self.b,
            "delta_orig": self.delta_orig,
            "p_value": self.p_value,
            "p_value_formatted": self.formatted_p(),
            "seed": self.seed,
            "resampling": "paired_by_instance_id",
        }


def _paired_correctness(records_a: list[RecordView],
                        records_b: list[RecordView]) -> tuple[np.ndarray, np.ndarray]:
    by_id_a = {r.instance_id: r for r in records_a}
    by_id_b = {r.instance_id: r for r in records_b}
    if len(by_id_a) != len(records_a) or len(by_id_b) != len(records_b):
        raise IdMismatch("duplicate instance ids in a record set")
    if set(by_id_a) != set(by_id_b):
        missing = set(by_id_a) ^ set(by_id_b)
        raise IdMismatch(f"record sets differ on {len(missing)} instance ids")
    ids = sorted(by_id_a)
    a = np.array([1.0 if by_id_a[i].correct else 0.0 for i in ids])
    b = np.array([1.0 if by_id_b[i].correct else 0.0 for i in ids])
    return a, b


def bootstrap_deltas(a: np.ndarray, b: np.ndarray, count: int, seed: int) -> np.ndarray:
    """The resampled accuracy gaps (one per bootstrap replicate)."""
    n = len(a)
    rng = np.random.default_rng(seed)
    indices = rng.integers(0, n, size=(count, n))
    return np.mean(a[indices], axis=1) - np.mean(b[indices], axis=1)


def bootstrap_test(records_a: list[RecordView], records_b: list[RecordView],
                   b: int = 10000, seed: int = 0) -> BootstrapResult:
    """Paired bootstrap significance test on the accuracy gap.

    delta_orig is acc_a - acc_b over the full paired set. Each replicate
    resamples instance ids with replacement (the same draw applies to both
    systems) and recomputes the gap delta_i. The p-value counts replicates
    with delta_i >= delta_orig, exactly: p = #{delta_i >= delta_orig} / B.
    """
    if b < 1:
        raise ValueError(f"b must be a positive integer, got {b}")
    vec_a, vec_b = _paired_correctness(records_a, records_b)
    delta_orig = float(np.mean(vec_a) - np.mean(vec_b))
    deltas = bootstrap_deltas(vec_a, vec_b, b, seed)
    p_value = float(np.count_nonzero(deltas >= delta_orig)) / b
    return BootstrapResult(b=b, delta_orig=delta_orig, p_value=p_value, seed=seed)


@dataclass
class CostLedger:
    """Average reasoning paths and token spend, normalized to a baseline."""

    avg_paths: float
    avg_input_tokens: float
    avg_output_tokens: float
    normalized_cost: float

    def to_dict(self) -> dict:
        return {
            "avg_paths": self.avg_paths,
            "avg_input_tokens": self.avg_input_tokens,
            "avg_output_tokens": self.avg_output_tokens,
            "normalized_cost": self.normalized_cost,
            "output_token_cost_factor": OUTPUT_TOKEN_COST_FACTOR,
        }


def cost_report(records: list[RecordView], baseline_records: list[RecordView]) -> CostLedger:
    """Token and path accounting relative to a baseline record set.

    Generated tokens are weighted four times input tokens, matching common
    API pricing: cost = avg_input + 4 * avg_output, normalized by the
    baseline's same quantity. The base answer counts as one path, so
    avg_paths = mean(1 + paths_explored).
    """

    def averages(views: list[RecordView]) -> tuple[float, float, float]:
        total = len(views)
        if total == 0:
            raise ValueError("cost_report needs non-empty record sets")
        paths = sum(1 + v.paths_explored for v in views) / total
        avg_in = sum(v.input_tokens for v in views) / total
        avg_out = sum(v.output_tokens for v in views) / total
        return paths, avg_in, avg_out

    paths, avg_in, avg_out = averages(records)
    _, base_in, base_out = averages(baseline_records)
    cost = avg_in + OUTPUT_TOKEN_COST_FACTOR * avg_out
    base_cost = base_in + OUTPUT_TOKEN_COST_FACTOR * base_out
    return CostLedger(
        avg_paths=paths,
        avg_input_tokens=avg_in,
        avg_output_tokens=avg_out,
        normalized_cost=cost / base_cost,
    )


# --- report emission ----------------------------------------------------------

def write_sweep_outputs(result: SweepResult, out_dir: str | Path) -> tuple[Path, Path]:
    """SweepResult as JSON plus a (tau1, tau2, accuracy) heatmap CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "sweep.json"
    csv_path = out_dir / "sweep_heatmap.csv"
    json_path.write_text(json.dumps(result.to_dict(), indent=2) + "\n", encoding="utf-8")
    with csv_path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["tau1", "tau2", "accuracy"])
        for tau1, tau2, accuracy in result.grid:
            writer.writerow([tau1, tau2, accuracy])
    return json_path, csv_path


def write_calibration_outputs(report: CalibrationReport, out_dir: str | Path) -> tuple[Path, Path]:
    """CalibrationReport as JSON plus a per-bin curve CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / "calibration.json"
    csv_path = out_dir / "calibration_curve.csv"
    json_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    with csv_path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["bin", "mean_confidence", "accuracy", "count"])
        for index, (conf, acc, count) in enumerate(report.bins):
            writer.writerow([index, conf, acc, count])
    return json_path, csv_path
