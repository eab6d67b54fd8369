from collections import deque

import numpy as np
import pytest
from hypothesis import given, strategies as st

from eifsim.controller import (
    NAVIGATE, ActionCommand, Controller, ExplorationExhausted, NoPath, frontier_score,
    greedy_pick, plan_path,
)
from eifsim.featmap import FeatureMap, Frontier, embed_category, pixel_features, project
from eifsim.planner import make_step, terminal_step
from eifsim.simulator import AgentState, Pose, render_observation

from builders import box_scene, corridor_map, make_object

STEP = {0: (0, 1), 90: (-1, 0), 180: (0, -1), 270: (1, 0)}


def _execute(blocked, start, heading, motions, stride):
    """Replay motions on a grid; returns final cell, heading and forward count."""
    r, c = start
    forwards = 0
    for m in motions:
        if m == "RotateLeft":
            heading = (heading + 90) % 360
        elif m == "RotateRight":
            heading = (heading - 90) % 360
        else:
            dr, dc = STEP[heading]
            for _ in range(stride):
                r, c = r + dr, c + dc
                assert 0 <= r < blocked.shape[0] and 0 <= c < blocked.shape[1]
                assert not blocked[r, c]
            forwards += 1
    return (r, c), heading, forwards


def _bfs(blocked, start, goal):
    h, w = blocked.shape
    dist = {start: 0}
    q = deque([start])
    while q:
        cur = q.popleft()
        if cur == goal:
            return dist[cur]
        for dr, dc in STEP.values():
            nxt = (cur[0] + dr, cur[1] + dc)
            if 0 <= nxt[0] < h and 0 <= nxt[1] < w and not blocked[nxt] and nxt not in dist:
                dist[nxt] = dist[cur] + 1
                q.append(nxt)
    return None


# ---------------------------------------------------------------------------
# commands

def test_action_command_invariants():
    with pytest.raises(ValueError):
        ActionCommand(NAVIGATE, ("Mug", 3), (1, 1))
    with pytest.raises(ValueError):
        ActionCommand("PickUp", None, (1, 1))
    with pytest.raises(ValueError):
        ActionCommand("PickUp", ("Mug", 3), None)
    cmd = ActionCommand("PickUp", ("Mug", 3), (4, 5))
    assert cmd.to_dict() == {"primitive": "PickUp", "target_object": ["Mug", 3], "location": [4, 5]}
    assert ActionCommand(NAVIGATE, None, (2, 2)).to_dict()["target_object"] is None


def test_unknown_policy_rejected():
    with pytest.raises(ValueError):
        Controller("clairvoyant")


# ---------------------------------------------------------------------------
# path planning

def test_plan_path_straight_and_turning():
    free = np.zeros((30, 30), dtype=bool)
    assert plan_path(free, (0, 0), (0, 10), heading=0) == ["Forward", "Forward"]
    assert plan_path(free, (0, 0), (10, 0), heading=0) == ["RotateRight", "Forward", "Forward"]
    assert plan_path(free, (10, 10), (10, 0), heading=0) == ["RotateLeft", "RotateLeft", "Forward", "Forward"]
    assert plan_path(free, (5, 5), (5, 5), heading=0, final_heading=90) == ["RotateLeft"]


def test_plan_path_snaps_goal_to_lattice():
    free = np.zeros((30, 30), dtype=bool)
    assert plan_path(free, (0, 0), (1, 11), heading=0) == ["Forward", "Forward"]


def test_plan_path_around_wall():
    blocked = np.zeros((30, 30), dtype=bool)
    blocked[0:20, 12] = True
    motions = plan_path(blocked, (0, 5), (0, 20), heading=0)
    end, _, forwards = _execute(blocked, (0, 5), 0, motions, 5)
    assert end == (0, 20) and forwards == 11


def test_plan_path_unreachable():
    blocked = np.zeros((30, 30), dtype=bool)
    blocked[:, 12] = True
    with pytest.raises(NoPath):
        plan_path(blocked, (0, 5), (0, 20))


def test_unknown_cells_cost_more():
    # straight along row 0 costs about 89, the detour through row 10 costs 80
    cost = np.ones((11, 61))
    cost[0:6, 1:60] = 1.5
    motions = plan_path(cost, (0, 0), (0, 60), heading=0, stride=5)
    _, _, forwards = _execute(np.zeros_like(cost, bool), (0, 0), 0, motions, 5)
    assert forwards == 2 + 12 + 2


@given(st.lists(st.lists(st.booleans(), min_size=9, max_size=9), min_size=9, max_size=9),
       st.sampled_from([0, 90, 180, 270]))
def test_stride_one_path_length_matches_bfs(rows, heading):
    blocked = np.array(rows) & (np.random.default_rng(len(rows)).random((9, 9)) < 0.6)
    blocked[0, 0] = blocked[8, 8] = False
    want = _bfs(blocked, (0, 0), (8, 8))
    if want is None:
        with pytest.raises(NoPath):
            plan_path(blocked, (0, 0), (8, 8), heading, stride=1)
        return
    motions = plan_path(blocked, (0, 0), (8, 8), heading, stride=1)
    end, _, forwards = _execute(blocked, (0, 0), heading, motions, 1)
    assert end == (8, 8) and forwards == want


@given(st.integers(0, 2**16), st.sampled_from([0, 90, 180, 270]), st.integers(0, 270))
def test_lattice_paths_are_executable(seed, heading, final):
    rng = np.random.default_rng(seed)
    blocked = rng.random((41, 41)) < 0.08
    blocked[0, 0] = False
    goal = (int(rng.integers(41)), int(rng.integers(41)))
    fh = [0, 90, 180, 270][final // 90]
    try:
        motions = plan_path(blocked, (0, 0), goal, heading, stride=5, final_heading=fh)
    except NoPath:
        return
    end, h, _ = _execute(blocked, (0, 0), heading, motions, 5)
    assert abs(end[0] - goal[0]) <= 2 and abs(end[1] - goal[1]) <= 2
    assert h == fh


# ---------------------------------------------------------------------------
# frontier selection

def _frontier(fid, category, centroid, scale=1.0):
    tokens = np.tile(embed_category(category) * scale, (32, 1))
    cells = np.array([centroid])
    return Frontier(fid, cells, 200, centroid, (0, 0, 1, 1), tokens, np.tile(cells, (32, 1)))


def _scored(*items):
    return [(f, f.cells, np.array([0]), d, None) for f, d in items]


def test_frontier_score_is_scale_invariant():
    prompt = embed_category("Tomato")
    a = frontier_score(_frontier(0, "Tomato", (1, 1)), prompt)
    b = frontier_score(_frontier(0, "Tomato", (1, 1), scale=7.5), prompt * 3)
    assert a == pytest.approx(1.0) and b == pytest.approx(a)
    empty = Frontier(0, np.zeros((1, 2), int), 200, (0, 0), (0, 0, 1, 1), np.zeros((32, 64)), np.zeros((32, 2)))
    assert frontier_score(empty, prompt) == 0.0


def test_greedy_prefers_relevant_frontier_even_if_farther():
    ctrl = Controller("greedy")
    scored = _scored((_frontier(0, "Sofa", (5, 5)), 10.0), (_frontier(1, "Tomato", (50, 50)), 90.0))
    chosen = ctrl.select_frontier(make_step(1, "find", "Tomato"), scored, FeatureMap(4, 4), None)
    assert chosen[0].id == 1


def test_greedy_near_tie_goes_to_closer_frontier():
    scored = _scored((_frontier(0, "Tomato", (5, 5)), 40.0), (_frontier(1, "Tomato", (9, 9)), 10.0))
    assert greedy_pick(scored, [0.80, 0.79], 0.02)[0].id == 1
    assert greedy_pick(scored, [0.80, 0.70], 0.02)[0].id == 0


def test_random_policy_is_seeded():
    scored = _scored(*[(_frontier(i, "Tomato", (i, i)), float(i)) for i in range(5)])
    step = make_step(1, "find", "Tomato")
    pick = lambda seed: Controller("random", seed=seed).select_frontier(step, scored, FeatureMap(4, 4), None)[0].id
    assert pick(3) == pick(3)
    assert len({pick(s) for s in range(20)}) > 1


# ---------------------------------------------------------------------------
# decide

def _fridge_world(agent_pose):
    scene = box_scene(100, 100, [make_object(2, "Fridge", (60, 20, 76, 34), z=(0.0, 1.8), facing=0)])
    agent = AgentState(agent_pose)
    obs = render_observation(scene, agent.pose)
    fmap = FeatureMap.for_scene(scene)
    fmap.update(project(obs, pixel_features(obs), fmap.shape), 1.0)
    return scene, agent, obs, fmap


def test_decide_interacts_when_in_range_and_visible():
    scene, agent, obs, fmap = _fridge_world(Pose(68, 53, 180))
    cmd = Controller().decide(make_step(1, "open", "Fridge"), [], fmap, agent, obs)
    assert cmd.primitive == "Open" and cmd.target_object == ("Fridge", 2)


def test_decide_approaches_when_too_far():
    scene, agent, obs, fmap = _fridge_world(Pose(68, 88, 180))
    ctrl = Controller()
    cmd = ctrl.decide(make_step(1, "open", "Fridge"), [], fmap, agent, obs)
    assert cmd.primitive == NAVIGATE
    motions = ctrl.motions(cmd, agent, fmap)
    assert motions and set(motions) <= {"Forward", "RotateLeft", "RotateRight"}


def test_decide_explores_for_undiscovered_target():
    scene, agent, obs, fmap = _fridge_world(Pose(68, 88, 180))
    fronts = fmap.extract_frontiers(50)
    assert fronts
    cmd = Controller().decide(make_step(1, "find", "Tomato"), fronts, fmap, agent, obs)
    assert cmd.primitive == NAVIGATE and cmd.location in [f.centroid for f in fronts]


def test_decide_without_frontiers_is_exhausted():
    scene, agent, obs, fmap = _fridge_world(Pose(68, 88, 180))
    with pytest.raises(ExplorationExhausted) as err:
        Controller().decide(make_step(1, "find", "Tomato"), [], fmap, agent, obs)
    assert err.value.category == "Tomato"


def test_decide_rejects_terminal_step():
    scene, agent, obs, fmap = _fridge_world(Pose(68, 88, 180))
    with pytest.raises(ValueError):
        Controller().decide(terminal_step(1), [], fmap, agent, obs)


def test_greedy_walks_toward_the_kitchen_strip():
    fmap = corridor_map(80, 120, free_rects=[(20, 10, 30, 50), (60, 10, 70, 50), (30, 28, 60, 33)],
                        unknown_rects=[(10, 10, 20, 50), (70, 10, 80, 50)], dim=64)
    fmap.features[12:20, 10:50] = embed_category("Fridge")
    fmap.has_feature[12:20, 10:50] = True
    fmap.hit_count[12:20, 10:50] = 1
    fmap.features[70:78, 10:50] = embed_category("Bed")
    fmap.has_feature[70:78, 10:50] = True
    fmap.hit_count[70:78, 10:50] = 1
    fronts = fmap.extract_frontiers(150, token_margin=8)
    assert len(fronts) == 2
    agent = AgentState(Pose(50, 30, 90))
    cmd = Controller("greedy").decide(make_step(1, "find", "Tomato"), fronts, fmap, agent)
    assert cmd.location[0] < 40
