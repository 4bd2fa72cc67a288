"""What does selective refinement cost, and what does early stopping save?

Two accounting identities drive the report:

* average reasoning paths: a skipped instance costs 1 path (just the base
  call); an explored one costs 1 + K. With skip fraction s the mean is
  s * 1 + (1 - s) * (1 + K) -- e.g. s=0.68, K=4 gives 2.28 paths.
* normalized cost: generated tokens are priced at four times input
  tokens, so cost = avg_input + 4 * avg_output, divided by the same
  quantity for the single-step baseline.

The demo runs a scripted population twice (with and without early
stopping at confidence 0.85) and compares both identities.
"""

import random

from refineqa import MemoryRunStore, Method, PipelineParams, run_eval
from refineqa.analysis import RecordView, cost_report

from scripted_demo_world import DemoWorld, mc_instance


def build(params: PipelineParams, count: int = 50):
    world = DemoWorld(params)
    rng = random.Random(3)
    dataset = []
    for i in range(count):
        skip = rng.random() < 0.6
        base_conf = rng.uniform(0.75, 0.95) if skip else rng.uniform(0.2, 0.6)
        inst = mc_instance(f"cost-{i:03d}", f"Question {i}?", gold="A",
                           option_texts=["alpha", "beta"])
        bank = None
        refined = None
        if not skip:
            bank = [(f"Sub {i}.{j}?", f"fact {j}") for j in range(1, 6)]
            refined = {}
            import itertools
            for combo in itertools.combinations(range(5), 2):
                conf = rng.uniform(0.3, 0.95)
                refined[combo] = ("A" if conf > 0.6 else "B", [conf])
        world.script(inst, base=("A" if skip else "B", [base_conf]),
                     bank=bank, refined=refined)
        dataset.append(inst)
    return world, dataset


def run(params: PipelineParams):
    world, dataset = build(params)
    result = run_eval(dataset, params, world.backend(), MemoryRunStore())
    return [RecordView.from_row(row) for row in result.records], result.aggregates


def main() -> None:
    baseline_params = PipelineParams(method=Method.BASELINE)
    base_views, _ = run(baseline_params)

    full_params = PipelineParams(n=5, m=2, k=4, tau1=0.7, tau2=0.1, seed=2)
    full_views, full_agg = run(full_params)

    stop_params = PipelineParams(n=5, m=2, k=4, tau1=0.7, tau2=0.1, seed=2,
                                 early_stop=0.85)
    stop_views, stop_agg = run(stop_params)

    skip_fraction = sum(1 for v in full_views if v.paths_explored == 0) / len(full_views)
    predicted = skip_fraction * 1 + (1 - skip_fraction) * (1 + full_params.k)

    full_ledger = cost_report(full_views, base_views)
    stop_ledger = cost_report(stop_views, base_views)

    print(f"skip fraction: {skip_fraction:.2f}")
    print(f"predicted avg paths, s*1 + (1-s)*(1+K): {predicted:.3f}")
    print(f"measured avg paths (full exploration):  {full_ledger.avg_paths:.3f}")
    print()
    header = f"{'setting':<28}{'avg paths':>10}{'avg in':>9}{'avg out':>9}{'cost':>7}"
    print(header)
    baseline_ledger = cost_report(base_views, base_views)
    for label, ledger in (("baseline (single step)", baseline_ledger),
                          ("guided, full exploration", full_ledger),
                          ("guided, early stop @0.85", stop_ledger)):
        print(f"{label:<28}{ledger.avg_paths:>10.2f}{ledger.avg_input_tokens:>9.1f}"
              f"{ledger.avg_output_tokens:>9.1f}{ledger.normalized_cost:>7.2f}")
    saved = 1 - (stop_ledger.normalized_cost / full_ledger.normalized_cost)
    print(f"\nearly stopping saved {saved:.0%} of the guided run's cost here,")
    print(f"with accuracy {stop_agg['accuracy']:.3f} vs {full_agg['accuracy']:.3f}.")


if __name__ == "__main__":
    main()
