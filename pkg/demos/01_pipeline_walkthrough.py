"""Walk one question through every reasoning method, offline.

The scripted backend below encodes a little story:

* the base answer is wrong ("B") with shaky confidence 0.45;
* two of the five sub-QAs are genuinely helpful, and refinement paths
  that include pair #3 answer "A" confidently;
* other paths get distracted and answer "C" with middling confidence.

Watch how each method resolves it: the baseline trusts the shaky base
answer, single/every-sub-QA always trust their one refined path, and the
confidence-guided method explores several paths and accepts the best one
only because it clears the tau2 margin.
"""

from refineqa import Method, PipelineParams, run_method

from scripted_demo_world import DemoWorld, mc_instance

QUESTION = "Would Bobby Jindal's high school mascot eat kibble?"
OPTIONS = ["Yes, it is a bulldog", "No, mascots are costumes",
           "Only on weekends", "There is no mascot"]
BANK = [
    ("Who is Bobby Jindal?", "A former governor of Louisiana."),
    ("What is a high school mascot?", "A character representing a school."),
    ("Which high school did Bobby Jindal attend?",
     "Baton Rouge Magnet High School, whose mascot is a bulldog."),
    ("What is kibble?", "Kibble is dry food for dogs."),
    ("How do mascots typically eat?", "Costumed mascots do not eat."),
]


def build_world(params: PipelineParams) -> DemoWorld:
    world = DemoWorld(params)
    instance = mc_instance("walkthrough", QUESTION, gold="A", option_texts=OPTIONS)
    # Paths containing the decisive sub-QA #3 (index 2) answer correctly.
    refined = {}
    import itertools
    for combo in itertools.combinations(range(5), params.m):
        if 2 in combo:
            refined[combo] = ("A", [0.88])
        else:
            refined[combo] = ("C", [0.55])
    world.script(instance, base=("B", [0.45]), bank=BANK, refined=refined)
    world.instance = instance
    return world


def show(record, label: str) -> None:
    print(f"--- {label} ---")
    print(f"base answer: {record.base.text!r} "
          f"(confidence {record.base.confidence.value:.2f})")
    for cand in record.refined_paths:
        marker = "<== chosen" if cand.path_index == record.chosen_path_index else ""
        print(f"  path {cand.path_index} over pairs {list(cand.subset_indices)}: "
              f"{cand.text!r} (confidence {cand.confidence.value:.2f}) {marker}")
    print(f"chosen: {record.chosen.text!r} via {record.skip_reason.value} "
          f"(reasoning paths: {1 + record.paths_explored}, "
          f"tokens: {record.input_tokens}+{record.output_tokens})")
    print()


def main() -> None:
    for method in (Method.BASELINE, Method.SINGLE_SUBQA, Method.EVERY_SUBQA,
                   Method.JUDGE_SUB_A, Method.CONFIDENCE_GUIDED):
        params = PipelineParams(method=method, n=5, m=2, k=4,
                                tau1=0.7, tau2=0.1, seed=11)
        world = build_world(params.normalized())
        backend = world.backend()
        if method in (Method.JUDGE_SUB_A,):
            # Judge methods need one more scripted call: the model picking
            # its favourite pairs (here: 3 and 4).
            from refineqa.pipeline import build_judge_request
            from refineqa import SubQABank, SubQAPair, request_key
            from scripted_demo_world import result_for
            bank_obj = SubQABank(pairs=tuple(
                SubQAPair(question=q, answer=a, answer_probs=(0.9,)) for q, a in BANK))
            world.entries[request_key(build_judge_request(
                world.instance, bank_obj, world.params, world.library))] = \
                result_for("3, 4", [0.9])
            backend = world.backend()
        record = run_method(world.instance, params, backend)
        show(record, method.value)

    print("Note how confidence_guided only accepted the refined answer because")
    print("0.88 >= 0.45 + tau2; had every path answered with low confidence, the")
    print("base answer would have been kept (the inflation guard).")


if __name__ == "__main__":
    main()
