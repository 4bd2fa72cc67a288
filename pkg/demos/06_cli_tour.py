"""The same workflow through the command-line surface.

Builds a scripted backend file, a dataset JSONL, and a config YAML under
demo_output/cli, then drives every subcommand in-process: print-config,
run (twice, to show resume), replay, sweep, and analyze.
"""

import json
from pathlib import Path

import yaml

from refineqa import PipelineParams
from refineqa.cli import main as cli

from scripted_demo_world import DemoWorld, mc_instance

OUT = Path(__file__).parent / "demo_output" / "cli"

POPULATION = [
    ("B", 0.65, "A", 0.75),
    ("A", 0.72, "B", 0.95),
    ("A", 0.50, "B", 0.55),
    ("B", 0.55, "A", 0.80),
]


def build_files() -> Path:
    OUT.mkdir(parents=True, exist_ok=True)
    params = PipelineParams(n=2, m=1, k=2, tau1=0.7, tau2=0.1, seed=0)
    world = DemoWorld(params)
    rows = []
    for copy in range(4):
        for g, (base_text, base_conf, ref_text, ref_conf) in enumerate(POPULATION):
            inst = mc_instance(f"cli-{g}-{copy}", f"Question {g}-{copy}?",
                               gold="A", option_texts=["alpha", "beta", "gamma"])
            bank = [(f"Sub {g}.{copy}.1?", "a fact"), (f"Sub {g}.{copy}.2?", "more")]
            refined = {(0,): (ref_text, [ref_conf]), (1,): (ref_text, [ref_conf])}
            world.script(inst, base=(base_text, [base_conf]), bank=bank, refined=refined)
            rows.append({
                "id": inst.id, "kind": "multiple_choice", "question": inst.question,
                "options": [{"label": l, "text": t} for l, t in inst.options],
                "gold": inst.gold, "split": "test",
            })
    world.backend().to_file(OUT / "script.json")
    (OUT / "dataset.jsonl").write_text(
        "\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")
    config = {
        "run_id": "tour",
        "dataset": str(OUT / "dataset.jsonl"),
        "store_dir": str(OUT / "runs"),
        "exhaustive": True,
        "backend": {"endpoint_url": f"scripted:{OUT / 'script.json'}",
                    "model_name": "scripted"},
        "params": {"method": "confidence_guided", "n": 2, "m": 1, "k": 2,
                   "tau1": 0.7, "tau2": 0.1, "seed": 0},
    }
    config_path = OUT / "config.yaml"
    config_path.write_text(yaml.safe_dump(config), encoding="utf-8")
    return config_path


def step(title: str, argv: list[str]) -> None:
    print(f"\n$ refineqa {' '.join(argv)}")
    code = cli(argv)
    print(f"[exit {code}]")


def main() -> None:
    config_path = build_files()
    step("print-config", ["print-config", "--config", str(config_path)])
    step("run", ["run", "--config", str(config_path)])
    step("run again (resumes)", ["run", "--config", str(config_path)])
    run_dir = str(OUT / "runs" / "tour")
    step("replay", ["replay", "--run", run_dir, "--tau1", "0.7", "--tau2", "0.1"])
    step("sweep", ["sweep", "--run", run_dir])
    step("analyze", ["analyze", run_dir, "--bins", "4"])


if __name__ == "__main__":
    main()
