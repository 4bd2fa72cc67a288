"""Capture exhaustive records once, then sweep thresholds offline.

The trick that makes 231 threshold pairs cheap: run the engine once with
full path exploration (skip and early stopping disabled) so every
candidate's confidence lands in the records, then re-apply the selection
rule offline per (tau1, tau2). No model calls happen during the sweep,
and the replayed accuracy is exact, not an approximation.

The scripted population is built so different threshold pairs genuinely
trade off against each other; the peak sits at (0.7, 0.1).
"""

from pathlib import Path

from refineqa import MemoryRunStore, PipelineParams, run_eval
from refineqa.analysis import RecordView, grid_search, replay_select, write_sweep_outputs

from scripted_demo_world import DemoWorld, mc_instance

# (base answer, base confidence, refined answer, refined confidence); gold "A"
POPULATION = [
    ("B", 0.65, "A", 0.75),  # refinement rescues a wrong base, margin 0.10
    ("A", 0.72, "B", 0.95),  # confident-and-right base; refinement would hurt
    ("A", 0.50, "B", 0.55),  # slight inflation over a correct base
    ("B", 0.55, "A", 0.80),  # refinement rescues again, larger margin
]


def build() -> tuple[DemoWorld, list]:
    params = PipelineParams(n=2, m=1, k=2, tau1=0.7, tau2=0.1, seed=0)
    world = DemoWorld(params)
    dataset = []
    for copy in range(5):
        for g, (base_text, base_conf, ref_text, ref_conf) in enumerate(POPULATION):
            inst = mc_instance(f"sweep-{g}-{copy}", f"Question {g}-{copy}?",
                               gold="A", option_texts=["alpha", "beta", "gamma"])
            bank = [(f"Sub {g}.{copy}.1?", "a fact"), (f"Sub {g}.{copy}.2?", "another fact")]
            refined = {(0,): (ref_text, [ref_conf]), (1,): (ref_text, [ref_conf])}
            world.script(inst, base=(base_text, [base_conf]), bank=bank, refined=refined)
            dataset.append(inst)
    return world, dataset


def main() -> None:
    world, dataset = build()
    print(f"capturing exhaustive records for {len(dataset)} instances...")
    result = run_eval(dataset, world.params, world.backend(), MemoryRunStore(),
                      exhaustive=True)
    views = [RecordView.from_row(row) for row in result.records]

    print("replaying the selection rule across the full lattice...")
    sweep = grid_search(views)
    best_tau1, best_tau2 = sweep.best
    print(f"lattice size: {len(sweep.grid)} cells (11 tau1 x 21 tau2)")
    print(f"best cell: tau1={best_tau1}, tau2={best_tau2} "
          f"(accuracy {replay_select(views, best_tau1, best_tau2):.3f})")

    print("\naccuracy along tau2 at tau1=0.7:")
    for tau1, tau2, acc in sweep.grid:
        if tau1 == 0.7 and tau2 in (-0.2, -0.1, 0.0, 0.1, 0.2, 0.3):
            print(f"  tau2={tau2:+.1f}: {'#' * int(acc * 40):<40} {acc:.2f}")

    out_dir = Path(__file__).parent / "demo_output" / "sweep"
    json_path, csv_path = write_sweep_outputs(sweep, out_dir)
    print(f"\nwrote {json_path}")
    print(f"wrote {csv_path} (tau1, tau2, accuracy rows for heatmap plotting)")


if __name__ == "__main__":
    main()
