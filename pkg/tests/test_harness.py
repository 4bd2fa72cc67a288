import json

import pytest

from refineqa.backend import Attachment, request_key
from refineqa.errors import ConfigError, EmptyDataset, SchemaError
from refineqa.harness import (
    InstanceKind,
    MemoryRunStore,
    QAInstance,
    RunStore,
    Split,
    compute_aggregates,
    load_dataset,
    match_answer,
    run_eval,
)
from refineqa.pipeline import Method, PipelineParams, build_base_request

from conftest import BudgetedBackend, BudgetExhausted, ScriptedWorld, make_mc_instance


def write_dataset(path, rows):
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")
    return path


def mc_row(i, gold="A", split="test", **extra):
    row = {
        "id": f"q{i:03d}",
        "kind": "multiple_choice",
        "question": f"Main question {i}?",
        "options": [{"label": l, "text": f"option {l.lower()} text"}
                    for l in ("A", "B", "C", "D")],
        "gold": gold,
        "split": split,
    }
    row.update(extra)
    return row


# --- dataset loading -----------------------------------------------------------

def test_load_valid_rows(tmp_path):
    path = write_dataset(tmp_path / "d.jsonl", [mc_row(i) for i in range(3)])
    instances = load_dataset(path)
    assert len(instances) == 3
    assert [i.id for i in instances] == ["q000", "q001", "q002"]
    assert instances[0].kind is InstanceKind.MULTIPLE_CHOICE


def test_gold_outside_labels_is_schema_error(tmp_path):
    path = write_dataset(tmp_path / "d.jsonl", [mc_row(0, gold="E")])
    with pytest.raises(SchemaError) as exc_info:
        load_dataset(path)
    assert exc_info.value.field == "gold"
    assert exc_info.value.line == 1


def test_missing_required_field_names_line_and_field(tmp_path):
    row = mc_row(0)
    del row["question"]
    path = write_dataset(tmp_path / "d.jsonl", [mc_row(1), row])
    with pytest.raises(SchemaError) as exc_info:
        load_dataset(path)
    assert exc_info.value.line == 2
    assert exc_info.value.field == "question"


def test_unknown_fields_ignored(tmp_path):
    path = write_dataset(tmp_path / "d.jsonl", [mc_row(0, source="somewhere", notes=[1])])
    assert len(load_dataset(path)) == 1


def test_empty_dataset(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text("\n\n", encoding="utf-8")
    with pytest.raises(EmptyDataset):
        load_dataset(path)


def test_duplicate_ids_rejected(tmp_path):
    path = write_dataset(tmp_path / "d.jsonl", [mc_row(0), mc_row(0)])
    with pytest.raises(SchemaError):
        load_dataset(path)


def test_boolean_rows(tmp_path):
    rows = [{"id": "b1", "kind": "boolean", "question": "Is water wet?", "gold": "yes"}]
    path = write_dataset(tmp_path / "d.jsonl", rows)
    inst = load_dataset(path)[0]
    assert inst.kind is InstanceKind.BOOLEAN
    bad = [{"id": "b2", "kind": "boolean", "question": "?", "gold": "maybe"}]
    with pytest.raises(SchemaError):
        load_dataset(write_dataset(tmp_path / "bad.jsonl", bad))


def test_holdout_carved_when_no_validation_split(tmp_path):
    path = write_dataset(tmp_path / "d.jsonl",
                         [mc_row(i, split="train") for i in range(100)])
    instances = load_dataset(path, holdout_seed=0)
    validation = [pos for pos, inst in enumerate(instances)
                  if inst.split is Split.VALIDATION]
    # frozen from random.Random(0).sample(range(100), 10)
    assert validation == [5, 33, 38, 49, 51, 53, 61, 62, 65, 97]
    again = load_dataset(path, holdout_seed=0)
    assert [i.split for i in again] == [i.split for i in instances]
    different = load_dataset(path, holdout_seed=123)
    assert [i.split for i in different] != [i.split for i in instances]


def test_unsupported_format_hint_rejected(tmp_path):
    path = write_dataset(tmp_path / "d.jsonl", [mc_row(0)])
    with pytest.raises(ValueError):
        load_dataset(path, format_hint="csv")


def test_existing_validation_split_left_alone(tmp_path):
    rows = [mc_row(0, split="validation")] + [mc_row(i, split="train") for i in range(1, 21)]
    instances = load_dataset(write_dataset(tmp_path / "d.jsonl", rows), holdout_seed=0)
    assert sum(1 for i in instances if i.split is Split.VALIDATION) == 1


# --- answer matching -------------------------------------------------------------

MC = make_mc_instance("m1", gold="B")


@pytest.mark.parametrize("text,expected", [
    ("The answer is B.", True),
    ("B", True),
    ("b.", True),
    ("(b)", True),
    ("Answer: B", True),
    ("The answer is C.", False),
    ("I do not know", False),
])
def test_match_mc_letter_extraction(text, expected):
    assert match_answer(text, MC) is expected


def test_match_mc_case_insensitive_gold_c():
    inst = make_mc_instance("m2", gold="C")
    assert match_answer("(c)", inst) is True


def test_match_mc_falls_back_to_option_text():
    inst = QAInstance(
        id="m3", kind=InstanceKind.MULTIPLE_CHOICE, question="Which?",
        gold="B", options=(("A", "red panda"), ("B", "giant squid")),
    )
    assert match_answer("Giant squid!", inst) is True
    assert match_answer("red panda", inst) is False
    assert match_answer("a giant squid", inst) is False  # standalone "a" wins first


def test_match_boolean_leading_token():
    inst = QAInstance(id="b1", kind=InstanceKind.BOOLEAN, question="?", gold="yes")
    assert match_answer("Yes, definitely.", inst) is True
    assert match_answer("No.", inst) is False
    assert match_answer("maybe", inst) is False


def test_match_open_ended_normalized():
    inst = QAInstance(id="o1", kind=InstanceKind.OPEN_ENDED, question="?", gold="Baton Rouge")
    assert match_answer("  baton   rouge. ", inst) is True
    assert match_answer("New Orleans", inst) is False


# --- run evaluation ---------------------------------------------------------------

def baseline_world(n_instances=10, n_correct=7):
    params = PipelineParams(method=Method.BASELINE)
    world = ScriptedWorld(params)
    dataset = []
    for i in range(n_instances):
        inst = make_mc_instance(f"q{i:03d}", gold="A")
        answer = "A" if i < n_correct else "B"
        world.add_instance(inst, base=(answer, [0.5 + 0.04 * i]))
        dataset.append(inst)
    return world, params, dataset


def test_run_eval_counts_accuracy():
    world, params, dataset = baseline_world(10, 7)
    store = MemoryRunStore()
    result = run_eval(dataset, params, world.backend(), store)
    assert result.aggregates["accuracy"] == pytest.approx(0.7)
    assert result.aggregates["total"] == 10
    assert result.aggregates["correct"] == 7


def test_aggregates_recomputable_from_records():
    world, params, dataset = baseline_world(10, 7)
    store = MemoryRunStore()
    result = run_eval(dataset, params, world.backend(), store)
    recomputed = compute_aggregates(store.read_records())
    assert recomputed == result.aggregates


def test_resume_skips_completed_instances(tmp_path):
    world, params, dataset = baseline_world(10, 7)
    backend = world.backend()
    store = RunStore(tmp_path / "runs", "resume-test")

    with pytest.raises(BudgetExhausted):
        run_eval(dataset, params, BudgetedBackend(backend, 4), store)
    assert len(store.completed_ids()) == 4
    calls_before_resume = backend.call_count

    store2 = RunStore(tmp_path / "runs", "resume-test")
    result = run_eval(dataset, params, backend, store2)
    assert backend.call_count - calls_before_resume == 6
    assert result.aggregates["total"] == 10
    assert result.aggregates["accuracy"] == pytest.approx(0.7)


def test_resume_with_different_config_rejected(tmp_path):
    world, params, dataset = baseline_world(3, 3)
    store = RunStore(tmp_path / "runs", "conflict")
    run_eval(dataset, params, world.backend(), store)
    other_params = PipelineParams(method=Method.BASELINE, seed=999)
    with pytest.raises(ConfigError):
        run_eval(dataset, other_params, world.backend(),
                 RunStore(tmp_path / "runs", "conflict"))


def test_unsafe_run_id_rejected(tmp_path):
    with pytest.raises(ConfigError):
        RunStore(tmp_path, "../escape")


def test_torn_final_line_tolerated(tmp_path):
    store = RunStore(tmp_path, "torn")
    store.open({"params": {}})
    store.append({"instance_id": "a", "correct": True,
                  "token_cost": {"input": 1, "output": 1}})
    with store.records_path.open("a", encoding="utf-8") as handle:
        handle.write('{"instance_id": "b", "corr')
    assert store.completed_ids() == {"a"}


def test_per_instance_failure_recorded_as_incorrect():
    params = PipelineParams(method=Method.BASELINE)
    world = ScriptedWorld(params)
    good = make_mc_instance("good", gold="A")
    world.add_instance(good, base=("A", [0.9]))
    unscripted = make_mc_instance("unscripted", gold="A")
    store = MemoryRunStore()
    result = run_eval([good, unscripted], params, world.backend(), store)
    assert result.aggregates["total"] == 2
    assert result.aggregates["correct"] == 1
    assert result.aggregates["errors"] == 1
    error_row = [r for r in store.records if r["instance_id"] == "unscripted"][0]
    assert error_row["correct"] is False
    assert error_row["error"]["class"] == "UnknownRequest"


def test_workers_preserve_record_order():
    world, params, dataset = baseline_world(10, 7)
    sequential = MemoryRunStore()
    run_eval(dataset, params, world.backend(), sequential)
    concurrent = MemoryRunStore()
    run_eval(dataset, params, world.backend(), concurrent, workers=4)
    assert sequential.records == concurrent.records


def test_mean_paths_matches_skip_fraction_identity():
    # 6 of 10 instances skip (confidence above tau1); the rest explore k=4.
    params = PipelineParams(tau1=0.7, k=4)
    world = ScriptedWorld(params)
    dataset = []
    for i in range(10):
        inst = make_mc_instance(f"q{i:03d}", gold="A")
        conf = 0.9 if i < 6 else 0.3
        bank = [(f"S{i}.{j}?", f"f{j}") for j in range(1, 6)] if conf < 0.7 else None
        world.add_instance(inst, base=("A", [conf]), bank=bank)
        dataset.append(inst)
    result = run_eval(dataset, params, world.backend(), MemoryRunStore())
    skip_fraction = 0.6
    expected = skip_fraction * 1 + (1 - skip_fraction) * (1 + params.k)
    assert result.aggregates["mean_paths"] == pytest.approx(expected, abs=1e-9)


def test_blind_flag_changes_digests_only_for_attachment_instances():
    params = PipelineParams(method=Method.BASELINE)
    library = ScriptedWorld(params).library
    plain = make_mc_instance("p1")
    attached = make_mc_instance(
        "a1", attachments=(Attachment("img://a1.png", "image/png"),))
    for inst, should_change in ((plain, False), (attached, True)):
        normal_key = request_key(build_base_request(inst, params, library))
        blind_key = request_key(
            build_base_request(inst.without_attachments(), params, library))
        assert (normal_key != blind_key) is should_change


def test_blind_run_strips_attachments_before_the_backend():
    params = PipelineParams(method=Method.BASELINE)
    world = ScriptedWorld(params)
    attached = make_mc_instance(
        "a1", gold="A", attachments=(Attachment("img://a1.png", "image/png"),))
    world.add_instance(attached.without_attachments(), base=("A", [0.9]))
    store = MemoryRunStore()
    result = run_eval([attached], params, world.backend(), store, blind=True)
    assert result.aggregates["correct"] == 1
    assert store.summary["config"]["blind"] is True
