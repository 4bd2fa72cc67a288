"""Command-line surface: run, sweep, analyze, replay, print-config.

Configuration comes from a YAML file (``--config``) with every value
overridable by a flag; each flag maps to exactly one config field.
``print-config`` emits the fully resolved configuration, and running from
that emitted file reproduces the run. Exit codes: 0 ok, 2 configuration
error, 3 run failure, 4 analysis error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import yaml

from . import analysis
from .backend import BackendConfig, open_backend
from .confidence import ConfidenceMetric
from .errors import AnalysisError, ConfigError, RefineQAError, StoreIOError
from .harness import RunStore, load_dataset, run_eval
from .pipeline import Method, PipelineParams

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUN = 3
EXIT_ANALYSIS = 4


@dataclass
class Config:
    """Everything one run needs, YAML-serializable and secret-free."""

    backend: BackendConfig
    params: PipelineParams
    dataset_path: str
    run_id: str
    store_dir: str = "runs"
    workers: int = 1
    blind: bool = False
    exhaustive: bool = False

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "dataset": self.dataset_path,
            "store_dir": self.store_dir,
            "workers": self.workers,
            "blind": self.blind,
            "exhaustive": self.exhaustive,
            "backend": self.backend.to_dict(),
            "params": self.params.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        try:
            return cls(
                backend=BackendConfig.from_dict(data.get("backend") or {}),
                params=PipelineParams.from_dict(data.get("params") or {}),
                dataset_path=str(data.get("dataset") or ""),
                run_id=str(data.get("run_id") or ""),
                store_dir=str(data.get("store_dir", "runs")),
                workers=int(data.get("workers", 1)),
                blind=bool(data.get("blind", False)),
                exhaustive=bool(data.get("exhaustive", False)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"malformed config: {exc}") from exc

    def validate(self) -> None:
        if not self.run_id:
            raise ConfigError("run_id is required", field="run_id")
        if not self.dataset_path:
            raise ConfigError("dataset path is required", field="dataset_path")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1", field="workers")
        if not (0.0 <= self.params.tau1 <= 1.0):
            raise ConfigError(
                f"tau1 must be in [0, 1], got {self.params.tau1}", field="params.tau1"
            )
        if not (-1.0 <= self.params.tau2 <= 1.0):
            raise ConfigError(
                f"tau2 must be in [-1, 1], got {self.params.tau2}", field="params.tau2"
            )
        try:
            self.params.normalized()
        except ValueError as exc:
            raise ConfigError(str(exc), field="params") from exc
        try:
            self.backend.validate()
        except ValueError as exc:
            raise ConfigError(str(exc), field="backend") from exc


# Each entry maps one flag destination onto one config path.
_FLAG_FIELDS = {
    "dataset": ("dataset",),
    "run_id": ("run_id",),
    "store_dir": ("store_dir",),
    "workers": ("workers",),
    "blind": ("blind",),
    "exhaustive": ("exhaustive",),
    "endpoint": ("backend", "endpoint_url"),
    "model": ("backend", "model_name"),
    "api_key_env": ("backend", "api_key_env_var"),
    "timeout": ("backend", "timeout_seconds"),
    "max_retries": ("backend", "max_retries"),
    "method": ("params", "method"),
    "n": ("params", "n"),
    "m": ("params", "m"),
    "k": ("params", "k"),
    "tau1": ("params", "tau1"),
    "tau2": ("params", "tau2"),
    "early_stop": ("params", "early_stop"),
    "metric": ("params", "metric"),
    "seed": ("params", "seed"),
    "max_tokens_answer": ("params", "max_tokens_answer"),
    "max_tokens_subquestion": ("params", "max_tokens_subquestion"),
}


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML config file; flags override its values")
    parser.add_argument("--dataset", help="dataset JSONL path")
    parser.add_argument("--run-id", dest="run_id", help="run identifier (filesystem-safe)")
    parser.add_argument("--store-dir", dest="store_dir", help="run store root (default: runs)")
    parser.add_argument("--workers", type=int, help="concurrent instances (default: 1)")
    parser.add_argument("--blind", action="store_true", default=None,
                        help="omit attachments from every request")
    parser.add_argument("--exhaustive", action="store_true", default=None,
                        help="force full path exploration so records replay offline")
    parser.add_argument("--endpoint", help="chat-completion URL, or scripted:<file>")
    parser.add_argument("--model", help="model name sent to the endpoint")
    parser.add_argument("--api-key-env", dest="api_key_env",
                        help="environment variable holding the API key")
    parser.add_argument("--timeout", type=float, help="request timeout in seconds")
    parser.add_argument("--max-retries", dest="max_retries", type=int)
    parser.add_argument("--method", choices=[m.value for m in Method])
    parser.add_argument("--n", type=int, help="sub-QAs generated per instance")
    parser.add_argument("--m", type=int, help="sub-QAs per reasoning path")
    parser.add_argument("--k", type=int, help="reasoning paths")
    parser.add_argument("--tau1", type=float, help="skip threshold on base confidence")
    parser.add_argument("--tau2", type=float, help="acceptance margin for refined answers")
    parser.add_argument("--early-stop", dest="early_stop", type=float,
                        help="stop exploring paths at this confidence (e.g. 0.85)")
    parser.add_argument("--metric", choices=[m.value for m in ConfidenceMetric])
    parser.add_argument("--seed", type=int, help="seed for subset curation and holdout")
    parser.add_argument("--max-tokens-answer", dest="max_tokens_answer", type=int)
    parser.add_argument("--max-tokens-subquestion", dest="max_tokens_subquestion", type=int)


def resolve_config(args: argparse.Namespace) -> Config:
    """Merge the YAML config file (if any) with flag overrides."""
    data: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist", field="config")
        loaded = yaml.safe_load(path.read_text(encoding="utf-8"))
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError("config file must hold a mapping", field="config")
        data = loaded or {}
    for flag, path_parts in _FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        target = data
        for part in path_parts[:-1]:
            target = target.setdefault(part, {})
        target[path_parts[-1]] = value
    config = Config.from_dict(data)
    config.validate()
    return config


def cmd_run(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    dataset_file = Path(config.dataset_path)
    if not dataset_file.exists():
        raise ConfigError(
            f"dataset_path {config.dataset_path!r} does not exist", field="dataset_path"
        )
    dataset = load_dataset(dataset_file, holdout_seed=config.params.seed)
    backend = open_backend(config.backend)
    store = RunStore(config.store_dir, config.run_id)

    try:
        already_done = store.completed_ids() if store.records_path.exists() else set()
        if already_done:
            print(f"resuming run {config.run_id!r}: "
                  f"{len(already_done)} of {len(dataset)} instances already complete")
        result = run_eval(
            dataset, config.params, backend, store,
            workers=config.workers, blind=config.blind, exhaustive=config.exhaustive,
            backend_config=config.backend, dataset_path=dataset_file,
        )
    except (StoreIOError, RefineQAError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN

    agg = result.aggregates
    print(f"run {config.run_id}: {agg['total']} instances, "
          f"{agg['errors']} errors")
    print(f"accuracy: {agg['accuracy']:.4f} ({agg['correct']}/{agg['total']})")
    print(f"mean paths: {agg['mean_paths']:.4f}")
    print(f"tokens: input={agg['input_tokens']} output={agg['output_tokens']}")
    print(f"records: {store.records_path}")
    return EXIT_OK


def _require_exhaustive(summary: dict, run_dir: str) -> None:
    config = summary.get("config") or {}
    if not config.get("exhaustive", False):
        raise analysis.IncompleteRecord(
            f"run {run_dir} was not captured in exhaustive mode; "
            "re-run it with --exhaustive to make its records replayable"
        )


def cmd_sweep(args: argparse.Namespace) -> int:
    records, summary = analysis.load_run(args.run)
    _require_exhaustive(summary, args.run)
    result = analysis.grid_search(
        records,
        tau1_range=(args.tau1_min, args.tau1_max),
        tau2_range=(args.tau2_min, args.tau2_max),
        tau1_step=args.tau1_step,
        tau2_step=args.tau2_step,
        step=0.1,
    )
    out_dir = Path(args.out) if args.out else Path(args.run) / "sweep"
    json_path, csv_path = analysis.write_sweep_outputs(result, out_dir)
    best_tau1, best_tau2 = result.best
    best_acc = max(acc for _, _, acc in result.grid)
    print(f"swept {len(result.grid)} threshold pairs")
    print(f"best: tau1={best_tau1} tau2={best_tau2} accuracy={best_acc:.4f}")
    print(f"wrote {json_path} and {csv_path}")
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    records, summary = analysis.load_run(args.run)
    _require_exhaustive(summary, args.run)
    accuracy = analysis.replay_select(records, args.tau1, args.tau2, policy=args.policy)
    print(f"replay tau1={args.tau1} tau2={args.tau2} policy={args.policy}: "
          f"accuracy {accuracy:.4f}")
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    run_a = args.runs[0]
    records_a, _ = analysis.load_run(run_a)
    out_dir = Path(args.out) if args.out else Path(run_a) / "analysis"
    out_dir.mkdir(parents=True, exist_ok=True)
    failures: list[str] = []

    try:
        report = analysis.calibration(records_a, bins=args.bins)
        analysis.write_calibration_outputs(report, out_dir)
        print(f"calibration: pearson_r="
              f"{'NaN (degenerate)' if report.degenerate else f'{report.pearson_r:.4f}'}")
    except AnalysisError as exc:
        failures.append(f"calibration: {exc}")

    try:
        inflation = analysis.inflation_report(records_a)
        (out_dir / "inflation.json").write_text(
            _as_json(inflation.to_dict()), encoding="utf-8")
        print(f"inflation: mean base {inflation.mean_base_confidence:.4f}, "
              f"mean refined {inflation.mean_refined_confidence:.4f}, "
              f"delta {inflation.delta:+.4f}")
    except AnalysisError as exc:
        failures.append(f"inflation: {exc}")

    if len(args.runs) > 1:
        records_b, _ = analysis.load_run(args.runs[1])
        try:
            ledger = analysis.cost_report(records_a, records_b)
            (out_dir / "cost.json").write_text(_as_json(ledger.to_dict()), encoding="utf-8")
            print(f"cost: avg paths {ledger.avg_paths:.4f}, "
                  f"normalized {ledger.normalized_cost:.4f} (vs {args.runs[1]})")
        except (AnalysisError, ValueError) as exc:
            failures.append(f"cost: {exc}")
        try:
            boot = analysis.bootstrap_test(
                records_a, records_b, b=args.bootstrap_b, seed=args.bootstrap_seed)
            (out_dir / "bootstrap.json").write_text(_as_json(boot.to_dict()), encoding="utf-8")
            print(f"bootstrap: delta_orig {boot.delta_orig:+.4f}, "
                  f"p={boot.formatted_p()} (B={boot.b})")
        except AnalysisError as exc:
            failures.append(f"bootstrap: {exc}")
    else:
        ledger = analysis.cost_report(records_a, records_a)
        (out_dir / "cost.json").write_text(_as_json(ledger.to_dict()), encoding="utf-8")
        print(f"cost: avg paths {ledger.avg_paths:.4f} "
              "(normalized against itself: 1.0)")
        print("bootstrap: skipped (needs two record sets)")

    for failure in failures:
        print(f"analysis failed for {failure}", file=sys.stderr)
    print(f"reports under {out_dir}")
    return EXIT_ANALYSIS if failures else EXIT_OK


def _as_json(payload: dict) -> str:
    return json.dumps(payload, indent=2) + "\n"


def cmd_print_config(args: argparse.Namespace) -> int:
    config = resolve_config(args)
    text = yaml.safe_dump(config.to_dict(), sort_keys=True, default_flow_style=False)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="refineqa",
        description="Confidence-guided refinement reasoning: runs, sweeps, and analyses.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", help="evaluate a dataset and store records")
    _add_run_flags(run_parser)
    run_parser.set_defaults(handler=cmd_run)

    sweep = sub.add_parser("sweep", help="grid-search tau1/tau2 by replaying records")
    sweep.add_argument("--run", required=True, help="run directory with records.jsonl")
    sweep.add_argument("--out", help="output directory (default: <run>/sweep)")
    sweep.add_argument("--tau1-min", type=float, default=0.0)
    sweep.add_argument("--tau1-max", type=float, default=1.0)
    sweep.add_argument("--tau1-step", type=float, default=0.1)
    sweep.add_argument("--tau2-min", type=float, default=-1.0)
    sweep.add_argument("--tau2-max", type=float, default=1.0)
    sweep.add_argument("--tau2-step", type=float, default=0.1)
    sweep.set_defaults(handler=cmd_sweep)

    replay = sub.add_parser("replay", help="replay stored records at one threshold pair")
    replay.add_argument("--run", required=True)
    replay.add_argument("--tau1", type=float, required=True)
    replay.add_argument("--tau2", type=float, required=True)
    replay.add_argument("--policy", choices=["threshold", "normalized"], default="threshold")
    replay.set_defaults(handler=cmd_replay)

    analyze = sub.add_parser(
        "analyze", help="calibration, inflation, cost, and (with two runs) bootstrap")
    analyze.add_argument("runs", nargs="+", help="one or two run directories")
    analyze.add_argument("--bins", type=int, default=10)
    analyze.add_argument("--bootstrap-b", dest="bootstrap_b", type=int, default=10000)
    analyze.add_argument("--bootstrap-seed", dest="bootstrap_seed", type=int, default=0)
    analyze.add_argument("--out", help="output directory (default: <first run>/analysis)")
    analyze.set_defaults(handler=cmd_analyze)

    print_config = sub.add_parser(
        "print-config", help="resolve flags + file into a reproducible config")
    _add_run_flags(print_config)
    print_config.add_argument("--out", help="write YAML here instead of stdout")
    print_config.set_defaults(handler=cmd_print_config)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        field_note = f" (field: {exc.field})" if exc.field else ""
        print(f"config error: {exc}{field_note}", file=sys.stderr)
        return EXIT_CONFIG
    except AnalysisError as exc:
        print(f"analysis error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS
    except StoreIOError as exc:
        print(f"run failure: {exc}", file=sys.stderr)
        return EXIT_RUN
    except RefineQAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUN


if __name__ == "__main__":
    sys.exit(main())
