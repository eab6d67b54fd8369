import functools
import itertools
import json

import pytest
from hypothesis import given, strategies as st

from eifsim.language import subgoals_goal
from eifsim.planner import make_step, terminal_step
from eifsim.scene import generate_scene, taxonomy as tx
from eifsim.tasks import (
    LONG_PLAN, MIXED_PROPORTIONS, TaskSpec, edit_similarity, emit_sft_samples, generate_tasks,
    is_near_duplicate, load_tasks, mixed_counts, normalize_words, save_tasks, substitution_task,
    synthesize_plan, validate_feasibility,
)

from builders import box_scene, make_object


@pytest.fixture(scope="module")
def kitchen():
    return box_scene(80, 80, [
        make_object(2, "CounterTop", (10, 10, 22, 60), z=(0.0, 0.9)),
        make_object(3, "Knife", (12, 12, 13, 16), z=(0.9, 0.92), parent=2),
        make_object(4, "Tomato", (12, 30, 14, 32), z=(0.9, 0.98), parent=2),
        make_object(5, "Fridge", (50, 10, 66, 24), z=(0.0, 1.8), facing=0),
        make_object(6, "Apple", (54, 20, 56, 24), z=(0.81, 0.88), parent=5),
    ])


@pytest.fixture(scope="module")
def corpus():
    out = []
    for seed in range(4):
        scene = generate_scene(seed, ("small", "large")[seed % 2])
        out.append((scene, generate_tasks(scene, {"target_specific_short": 6, "target_specific_long": 2,
                                                   "abstract": 2}, seed=seed)))
    return out


def test_slice_plan(kitchen):
    steps = synthesize_plan(kitchen, [("slice", "Tomato")])
    assert [s.body for s in steps] == ["Find the knife", "Pick up the knife", "Find the tomato", "Slice the tomato"]
    assert [s.target_id for s in steps] == [3, 3, 4, 4]
    assert [s.primitive_hint for s in steps] == [None, "PickUp", None, "Slice"]


def test_plan_opens_container_to_reach_hidden_item(kitchen):
    steps = synthesize_plan(kitchen, [("pickup", "Apple")])
    assert [s.body for s in steps] == ["Find the fridge", "Open the fridge", "Find the apple", "Pick up the apple"]


def test_generated_tasks_validate_and_respect_lengths(corpus):
    for scene, tasks in corpus:
        assert tasks
        for t in tasks:
            assert validate_feasibility(t, scene)
            n = len(t.gt_plan)
            if t.category == "target_specific_short":
                assert n < LONG_PLAN
            elif t.category == "target_specific_long":
                assert n >= LONG_PLAN
            assert [s.index for s in t.gt_plan] == list(range(1, n + 1))


def test_abstract_instructions_name_no_objects(corpus):
    abstract = [t for _, ts in corpus for t in ts if t.category == "abstract"]
    assert abstract
    for t in abstract:
        assert tx.mentioned_categories(t.instruction) == []


def test_no_near_duplicates_within_a_scene(corpus):
    for _, tasks in corpus:
        for a, b in itertools.combinations([t.instruction for t in tasks], 2):
            assert edit_similarity(a, b) <= 0.9


def test_generation_is_deterministic():
    scene = generate_scene(3, "large")
    counts = {"target_specific_short": 4, "target_specific_long": 1, "abstract": 1}
    a = [t.to_dict() for t in generate_tasks(scene, counts, seed=5)]
    b = [t.to_dict() for t in generate_tasks(scene, counts, seed=5)]
    assert a == b


def test_dropping_a_pickup_breaks_feasibility(kitchen):
    steps = synthesize_plan(kitchen, [("slice", "Tomato")])
    task = TaskSpec("t", "Slice the tomato", "target_specific_short", subgoals_goal([("slice", "Tomato")]),
                    steps, 0, "small")
    assert validate_feasibility(task, kitchen)
    task.gt_plan = [s for s in steps if s.primitive_hint != "PickUp"]
    assert not validate_feasibility(task, kitchen)


def test_mixed_counts_follow_reference_proportions():
    assert mixed_counts(sum(MIXED_PROPORTIONS.values())) == MIXED_PROPORTIONS
    whole = sum(MIXED_PROPORTIONS.values())
    for total in (100, 200, 500):
        counts = mixed_counts(total)
        assert sum(counts.values()) == total
        for k, v in counts.items():
            assert abs(v / total - MIXED_PROPORTIONS[k] / whole) <= 0.05


def test_substitution_task_names_absent_object():
    found = 0
    for seed in range(40):
        scene = generate_scene(seed, "small")
        task = substitution_task(scene, seed)
        if task is None:
            continue
        found += 1
        assert not scene.instances("Bottle")
        assert "bottle" in task.instruction.lower()
        assert validate_feasibility(task, scene)
        assert task.kind == "substitution"
    assert found >= 3


def test_save_and_load_round_trip(tmp_path, corpus):
    tasks = corpus[0][1]
    path = tmp_path / "tasks.json"
    save_tasks(tasks, path)
    assert isinstance(json.loads(path.read_text()), list)
    assert [t.to_dict() for t in load_tasks(path)] == [t.to_dict() for t in tasks]
    wrapped = tmp_path / "wrapped.json"
    wrapped.write_text(json.dumps({"schema_version": 1, "tasks": [t.to_dict() for t in tasks]}))
    assert len(load_tasks(wrapped)) == len(tasks)
    wrapped.write_text(json.dumps({"schema_version": 9, "tasks": []}))
    with pytest.raises(ValueError):
        load_tasks(wrapped)


# ---------------------------------------------------------------------------
# similarity

def test_similarity_examples():
    assert edit_similarity("Put the mug in the sink", "Put the mug in the sink.") == 1.0
    assert edit_similarity("Put the mug in the sink", "Place the mug in the sink") == pytest.approx(0.75)
    assert normalize_words("Put a Mug, in the sink!") == ["put", "mug", "in", "sink"]
    assert is_near_duplicate("Slice the tomato", ["slice tomato"])
    assert not is_near_duplicate("Slice the tomato", ["Slice the bread"])


def _levenshtein(x, y):
    @functools.lru_cache(maxsize=None)
    def d(i, j):
        if i == 0 or j == 0:
            return i + j
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (x[i - 1] != y[j - 1]))
    return d(len(x), len(y))


_words = st.lists(st.sampled_from(["put", "mug", "in", "sink", "slice", "bread", "the", "a"]), max_size=8)


@given(_words, _words)
def test_similarity_matches_recursive_levenshtein(a, b):
    x = [w for w in a if w not in ("the", "a")]
    y = [w for w in b if w not in ("the", "a")]
    want = 1.0 if not x and not y else 1 - _levenshtein(tuple(x), tuple(y)) / max(len(x), len(y))
    assert edit_similarity(" ".join(a), " ".join(b)) == pytest.approx(want)
    assert edit_similarity(" ".join(a), " ".join(b)) == pytest.approx(edit_similarity(" ".join(b), " ".join(a)))


# ---------------------------------------------------------------------------
# SFT records

def test_sft_records_count_decisions():
    task = TaskSpec("t", "Slice the tomato", "target_specific_short", None,
                    [make_step(1, "find", "Knife"), make_step(2, "pickup", "Knife")], 0, "small")
    trace = [
        {"kind": "header"},
        {"kind": "plan", "step": make_step(1, "find", "Knife").to_dict(), "done": [], "summary": {}},
        {"kind": "decide", "step": "Step 1. Find the knife", "frontiers": [[1, 2, 300]],
         "command": {"primitive": "Navigate", "target_object": None, "location": [1, 2]}},
        {"kind": "decide", "step": "Step 1. Find the knife", "frontiers": [],
         "command": {"primitive": "Navigate", "target_object": None, "location": [3, 4]}},
        {"kind": "plan", "step": make_step(2, "pickup", "Knife").to_dict(), "done": ["Step 1. Find the knife"],
         "summary": {}},
        {"kind": "plan", "step": terminal_step(3).to_dict(), "done": [], "summary": {}},
    ]
    records = emit_sft_samples(trace, task)
    planner = [r for r in records if r["type"] == "planner"]
    controller = [r for r in records if r["type"] == "controller"]
    assert len(planner) == 2 and len(controller) == 2
    assert planner[0]["next_step"] == "Step 1. Find the knife"
    assert planner[0]["subsequent_steps"] == ["Step 2. Pick up the knife"]
    assert planner[1]["subsequent_steps"] == []
    assert controller[0]["command"]["location"] == [1, 2]
