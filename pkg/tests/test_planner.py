import sys
import textwrap

import pytest

from eifsim.planner import (
    AdapterProtocolError, AdapterTimeout, ExternalPlanner, HeuristicPlanner, MapSummary,
    OraclePlanner, PlanStep, PlannerExhausted, make_step, terminal_step,
)
from eifsim.language import parse_instruction


def _run(planner, instruction, summary, limit=40):
    done = []
    for _ in range(limit):
        step = planner.next_step(instruction, done, summary)
        if step.terminal:
            return [d.body for d in done]
        done.append(step)
    raise AssertionError("planner did not terminate")


def test_make_step_text_and_hint():
    s = make_step(3, "place", "Sink", held="Mug")
    assert s.text == "Step 3. Put the mug in the sink"
    assert s.primitive_hint == "Place" and s.demanded_objects == ("Sink",)
    assert make_step(1, "find", "CounterTop").body == "Find the counter top"
    assert make_step(1, "find", "CounterTop").primitive_hint is None


def test_terminal_step_demands_nothing():
    t = terminal_step(4)
    assert t.terminal and t.text == "Step 4. End" and t.demanded_objects == ()
    with pytest.raises(ValueError):
        PlanStep(1, "Step 1. End", None, ("Tomato",), True)


def test_plan_step_round_trip():
    s = make_step(2, "slice", "Tomato", target_id=9)
    assert PlanStep.from_dict(s.to_dict()) == s


def test_oracle_replays_then_terminates():
    plan = [make_step(1, "find", "Knife"), make_step(2, "pickup", "Knife")]
    p = OraclePlanner(plan)
    assert _run(p, "x", MapSummary()) == ["Find the knife", "Pick up the knife"]


def test_terminal_is_idempotent():
    p = OraclePlanner([])
    t = p.next_step("x", [], MapSummary())
    assert t.terminal
    assert p.next_step("x", [t], MapSummary()) is t


def test_step_cap_raises():
    plan = [make_step(i, "find", "Knife") for i in range(1, 6)]
    p = OraclePlanner(plan, max_steps=3)
    done = []
    for _ in range(3):
        done.append(p.next_step("x", done, MapSummary()))
    with pytest.raises(PlannerExhausted):
        p.next_step("x", done, MapSummary())


def test_heuristic_slice_plan():
    steps = _run(HeuristicPlanner(), "Slice the tomato", MapSummary())
    assert steps == ["Find the knife", "Pick up the knife", "Find the tomato", "Slice the tomato"]


def test_heuristic_put_into_openable_receptacle():
    steps = _run(HeuristicPlanner(), "Put the apple in the fridge", MapSummary())
    assert steps == ["Find the apple", "Pick up the apple", "Find the fridge", "Open the fridge",
                     "Put the apple in the fridge"]


def test_heuristic_chain_of_clauses():
    steps = _run(HeuristicPlanner(), "Open the fridge, then turn on the faucet", MapSummary())
    assert steps == ["Find the fridge", "Open the fridge", "Find the faucet", "Turn on the faucet"]


def test_unparseable_instruction_terminates():
    assert _run(HeuristicPlanner(), "Dance a little jig", MapSummary()) == []


def test_substitutes_present_role_equivalent_after_exploring():
    summary = MapSummary({"Mug": [[5, 5]], "Sink": [[9, 9]]}, 0.95, 0)
    steps = _run(HeuristicPlanner(), "Put the bottle in the sink", summary)
    assert steps[:2] == ["Find the mug", "Pick up the mug"]
    assert steps[-1] == "Put the mug in the sink"


def test_no_substitution_before_exploration_finishes():
    summary = MapSummary({"Mug": [[5, 5]], "Sink": [[9, 9]]}, 0.3, 4)
    assert HeuristicPlanner().next_step("Put the bottle in the sink", [], summary).body == "Find the bottle"


def test_substitution_disabled_keeps_requested_object():
    summary = MapSummary({"Mug": [[5, 5]], "Sink": [[9, 9]]}, 0.95, 0)
    planner = HeuristicPlanner(substitution=False)
    assert planner.next_step("Put the bottle in the sink", [], summary).body == "Find the bottle"


def test_exhausted_search_opens_discovered_container():
    summary = MapSummary({"Fridge": [[3, 3]], "Knife": [[4, 4]]}, 0.95, 0)
    done = [make_step(1, "find", "Knife"), make_step(2, "pickup", "Knife")]
    step = HeuristicPlanner().next_step("Slice the tomato", done, summary)
    assert step.body == "Open the fridge" and step.index == 3


def test_abstract_instruction_prefers_fully_discovered_recipe():
    summary = MapSummary({"Apple": [[1, 1]], "Bowl": [[2, 2]], "Knife": [[3, 3]]}, 0.2, 3)
    steps = _run(HeuristicPlanner(), "Make a simple breakfast for me", summary)
    assert "Slice the apple" in steps and steps[-1] == "Put the apple in the bowl"


def test_parse_instruction_examples():
    assert parse_instruction("Put the mug in the sink") == [[("put", "Mug", "Sink")]]
    assert parse_instruction("Heat the egg, then slice the bread") == [[("heat", "Egg"), ("slice", "Bread")]]
    assert len(parse_instruction("Make a simple lunch for me")) > 1
    assert parse_instruction("Juggle the cats") == []


def test_map_summary_to_dict_is_sorted():
    d = MapSummary({"b": [[1, 2]], "a": [[3, 4]]}, 0.1234567, 2, "Mug").to_dict()
    assert list(d["discovered"]) == ["a", "b"] and d["explored_fraction"] == 0.123457


# ---------------------------------------------------------------------------
# external adapter

def _adapter(tmp_path, body):
    path = tmp_path / "adapter.py"
    path.write_text(textwrap.dedent(body))
    return f"{sys.executable} {path}"


ECHO = """
    import json, sys
    for line in sys.stdin:
        req = json.loads(line)
        n = len(req["done"]) + 1
        if n > 2:
            reply = {"index": n, "text": f"Step {n}. End", "terminal": True}
        else:
            reply = {"index": n, "text": f"Step {n}. Find the mug", "primitive_hint": None,
                     "demanded_objects": ["Mug"]}
        print(json.dumps(reply), flush=True)
"""


def test_external_adapter_round_trip(tmp_path):
    p = ExternalPlanner(_adapter(tmp_path, ECHO), timeout=10)
    try:
        assert _run(p, "Find the mug", MapSummary()) == ["Find the mug", "Find the mug"]
    finally:
        p.close()


def test_external_adapter_retries_one_malformed_reply(tmp_path):
    body = """
        import json, sys
        first = True
        for line in sys.stdin:
            if first:
                print("not json", flush=True)
                first = False
            else:
                print(json.dumps({"index": 1, "text": "Step 1. End", "terminal": True}), flush=True)
    """
    p = ExternalPlanner(_adapter(tmp_path, body), timeout=10)
    try:
        assert p.next_step("x", [], MapSummary()).terminal
    finally:
        p.close()


def test_external_adapter_malformed_twice(tmp_path):
    body = """
        import sys
        for line in sys.stdin:
            print("[1, 2", flush=True)
    """
    p = ExternalPlanner(_adapter(tmp_path, body), timeout=10)
    try:
        with pytest.raises(AdapterProtocolError):
            p.next_step("x", [], MapSummary())
    finally:
        p.close()


def test_external_adapter_invalid_step(tmp_path):
    body = """
        import json, sys
        for line in sys.stdin:
            print(json.dumps({"index": 1, "text": "Step 1. Find it", "demanded_objects": ["Unicorn"]}), flush=True)
    """
    p = ExternalPlanner(_adapter(tmp_path, body), timeout=10)
    try:
        with pytest.raises(AdapterProtocolError):
            p.next_step("x", [], MapSummary())
    finally:
        p.close()


def test_external_adapter_timeout(tmp_path):
    body = """
        import sys, time
        for line in sys.stdin:
            time.sleep(30)
    """
    p = ExternalPlanner(_adapter(tmp_path, body), timeout=0.3)
    try:
        with pytest.raises(AdapterTimeout):
            p.next_step("x", [], MapSummary())
    finally:
        p.close()


def test_substitute_stays_chosen_while_held():
    summary = MapSummary({"Sink": [[9, 9]]}, 0.95, 0, held="Mug")
    done = [make_step(1, "find", "Mug"), make_step(2, "pickup", "Mug")]
    step = HeuristicPlanner().next_step("Put the bottle in the sink", done, summary)
    assert step.body == "Find the sink"
