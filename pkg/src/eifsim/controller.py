"""Low-level controller: turn a plan step into navigation and interaction.

Paths are planned on the motion lattice (nodes every ``forward_cells``
cells, anchored at the agent) with known-free cells costing 1, unknown cells
1.5 and obstacles impassable. Exploration targets frontiers; a discovered
target is approached until it is visible and within interaction range.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .attention import build_prompts
from .config import DEFAULT_CONFIG, Config
from .featmap import FeatureMap, Frontier, embedding_table
from .simulator import HEADINGS, Motion, Pose, object_distance, render_observation

NAVIGATE = "Navigate"
FREE_COST, UNKNOWN_FACTOR = 1.0, 1.5
APPROACH_BAND = (0.4, 1.3)        # meters from the target's nearest cell
HEADING_TOLERANCE = 40.0          # degrees off-axis still considered facing the target
FRONTIER_GOAL_RADIUS = 5          # cells
REACHED_RADIUS = 12               # cells blacklisted around a frontier once visited
INSPECT_POSES = 4                 # viewpoints tried when looking into an opened container
INSPECT_SPACING = 15              # cells between inspection viewpoints


class NoPath(RuntimeError):
    pass


class ExplorationExhausted(RuntimeError):
    def __init__(self, category: Optional[str]):
        self.category = category
        super().__init__(f"no frontiers left and {category} not discovered")


@dataclass(frozen=True)
class ActionCommand:
    primitive: str
    target_object: Optional[tuple] = None      # (category, instance id)
    location: Optional[tuple] = None           # grid cell

    def __post_init__(self):
        if self.primitive == NAVIGATE and self.target_object is not None:
            raise ValueError("Navigate commands carry no target object")
        if self.primitive != NAVIGATE and (self.target_object is None or self.location is None):
            raise ValueError("interaction commands need a target and a location")

    def to_dict(self) -> dict:
        return {"primitive": self.primitive,
                "target_object": list(self.target_object) if self.target_object else None,
                "location": list(map(int, self.location)) if self.location is not None else None}


# ---------------------------------------------------------------------------
# lattice planning

def map_costs(fmap: FeatureMap, unknown_cost: float = UNKNOWN_FACTOR) -> np.ndarray:
    cost = np.full(fmap.shape, unknown_cost)
    cost[fmap.free] = FREE_COST
    cost[fmap.obstacle_seen] = np.inf
    return cost


def grid_costs(blocked: np.ndarray) -> np.ndarray:
    cost = np.ones(blocked.shape)
    cost[blocked] = np.inf
    return cost


class Lattice:
    """Motion graph over cells congruent to an anchor modulo ``stride``."""

    def __init__(self, cost: np.ndarray, anchor: tuple, stride: int, blocked_edges=frozenset()):
        self.cost = cost
        self.stride = s = stride
        self.a, self.b = anchor[0] % s, anchor[1] % s
        h, w = cost.shape
        self.rows = np.arange(self.a, h, s)
        self.cols = np.arange(self.b, w, s)
        n, m = len(self.rows), len(self.cols)
        self.n, self.m = n, m
        node_cost = cost[np.ix_(self.rows, self.cols)]
        self.node_ok = np.isfinite(node_cost)
        src, dst, wts = [], [], []
        idx = np.arange(n * m).reshape(n, m)
        if m > 1:
            seg = np.stack([cost[np.ix_(self.rows, self.cols[:-1] + k)] for k in range(s + 1)], axis=0)
            wgt = seg.mean(axis=0) * s
            ok = np.isfinite(wgt)
            src.append(idx[:, :-1][ok]); dst.append(idx[:, 1:][ok]); wts.append(wgt[ok])
        if n > 1:
            seg = np.stack([cost[np.ix_(self.rows[:-1] + k, self.cols)] for k in range(s + 1)], axis=0)
            wgt = seg.mean(axis=0) * s
            ok = np.isfinite(wgt)
            src.append(idx[:-1, :][ok]); dst.append(idx[1:, :][ok]); wts.append(wgt[ok])
        src = np.concatenate(src) if src else np.zeros(0, dtype=int)
        dst = np.concatenate(dst) if dst else np.zeros(0, dtype=int)
        wts = np.concatenate(wts) if wts else np.zeros(0)
        if blocked_edges:
            keep = np.ones(len(src), dtype=bool)
            for k, (u, v) in enumerate(zip(src, dst)):
                if (int(u), int(v)) in blocked_edges or (int(v), int(u)) in blocked_edges:
                    keep[k] = False
            src, dst, wts = src[keep], dst[keep], wts[keep]
        self.graph = csr_matrix((np.concatenate([wts, wts]), (np.concatenate([src, dst]), np.concatenate([dst, src]))),
                                shape=(n * m, n * m))

    def node(self, cell: tuple) -> Optional[int]:
        r, c = cell
        if (r - self.a) % self.stride or (c - self.b) % self.stride:
            return None
        i, j = (r - self.a) // self.stride, (c - self.b) // self.stride
        if not (0 <= i < self.n and 0 <= j < self.m):
            return None
        return int(i * self.m + j)

    def cell(self, node: int) -> tuple:
        i, j = divmod(int(node), self.m)
        return (int(self.rows[i]), int(self.cols[j]))

    def cells_of(self, nodes: np.ndarray) -> np.ndarray:
        i, j = np.divmod(np.asarray(nodes), self.m)
        return np.stack([self.rows[i], self.cols[j]], axis=1)

    def node_mask(self) -> np.ndarray:
        """Full-resolution mask of lattice node cells."""
        mask = np.zeros(self.cost.shape, dtype=bool)
        mask[np.ix_(self.rows, self.cols)] = self.node_ok
        return mask

    def nodes_in(self, mask: np.ndarray) -> np.ndarray:
        sub = mask[np.ix_(self.rows, self.cols)] & self.node_ok
        return np.flatnonzero(sub.ravel())

    def shortest(self, start: tuple):
        s = self.node(start)
        if s is None:
            raise NoPath(f"start {start} is not a lattice node")
        dist, pred = dijkstra(self.graph, directed=False, indices=s, return_predecessors=True)
        return dist, pred

    def path_to(self, pred: np.ndarray, start: tuple, goal_node: int) -> list:
        s = self.node(start)
        out = [int(goal_node)]
        while out[-1] != s:
            p = pred[out[-1]]
            if p < 0:
                raise NoPath("goal unreachable")
            out.append(int(p))
        return [self.cell(v) for v in reversed(out)]


def turn_commands(frm: int, to: int) -> list:
    d = (to - frm) % 360
    if d == 0:
        return []
    if d == 90:
        return [Motion.RotateLeft.value]
    if d == 270:
        return [Motion.RotateRight.value]
    return [Motion.RotateLeft.value, Motion.RotateLeft.value]


def heading_between(a: tuple, b: tuple) -> int:
    dr, dc = b[0] - a[0], b[1] - a[1]
    if dr == 0:
        return 0 if dc > 0 else 180
    return 270 if dr > 0 else 90


def cells_to_motions(cells: list, heading: int, final_heading: Optional[int] = None) -> list:
    out = []
    for a, b in zip(cells, cells[1:]):
        h = heading_between(a, b)
        out += turn_commands(heading, h)
        out.append(Motion.Forward.value)
        heading = h
    if final_heading is not None:
        out += turn_commands(heading, final_heading)
    return out


def plan_path(cost: np.ndarray, start: tuple, goal, heading: int = 0, stride: int = 5,
              final_heading: Optional[int] = None) -> list:
    """Motion commands from ``start`` to the nearest goal cell.

    ``cost`` is a per-cell traversal cost (``inf`` for obstacles); a boolean
    array is read as an obstacle mask. ``goal`` is a cell or a list of cells;
    goal cells off the lattice snap to lattice nodes within ``stride // 2``.
    """
    cost = np.asarray(cost)
    if cost.dtype == bool:
        cost = grid_costs(cost)
    goals = [tuple(goal)] if np.ndim(goal) == 1 else [tuple(g) for g in goal]
    if tuple(start) in goals:
        return turn_commands(heading, final_heading) if final_heading is not None else []
    lat = Lattice(cost, start, stride)
    dist, pred = lat.shortest(tuple(start))
    best, best_d = None, np.inf
    half = stride // 2
    for g in goals:
        for dr in range(-half, half + 1):
            for dc in range(-half, half + 1):
                v = lat.node((g[0] + dr, g[1] + dc))
                if v is not None and dist[v] < best_d:
                    best, best_d = v, dist[v]
    if best is None:
        raise NoPath(f"no path from {start} to {goal}")
    return cells_to_motions(lat.path_to(pred, tuple(start), best), heading, final_heading)


# ---------------------------------------------------------------------------
# geometry helpers

def facing_heading(frm: tuple, to: tuple) -> tuple:
    """Closest cardinal heading from ``frm`` toward ``to`` and its angular error."""
    ang = math.degrees(math.atan2(-(to[0] - frm[0]), to[1] - frm[1])) % 360
    best = min(HEADINGS, key=lambda h: min(abs(ang - h), 360 - abs(ang - h)))
    err = min(abs(ang - best), 360 - abs(ang - best))
    return best, err


def line_cells(a: tuple, b: tuple) -> list:
    """Cells on the segment between two cell centers (excluding the endpoints)."""
    n = int(max(abs(b[0] - a[0]), abs(b[1] - a[1]))) * 2
    if n == 0:
        return []
    t = np.arange(1, n) / n
    r = np.floor(a[0] + 0.5 + t * (b[0] - a[0])).astype(int)
    c = np.floor(a[1] + 0.5 + t * (b[1] - a[1])).astype(int)
    pts = list(dict.fromkeys(zip(r.tolist(), c.tolist())))
    return [p for p in pts if p != tuple(a) and p != tuple(b)]


def dilate_cells(shape: tuple, cells: np.ndarray, radius: int) -> np.ndarray:
    """Mask of ``cells`` grown by ``radius`` 4-connected steps, computed on a crop."""
    lo = np.maximum(cells.min(axis=0) - radius, 0)
    hi = np.minimum(cells.max(axis=0) + radius + 1, shape)
    sub = np.zeros(tuple(hi - lo), dtype=bool)
    sub[cells[:, 0] - lo[0], cells[:, 1] - lo[1]] = True
    out = np.zeros(shape, dtype=bool)
    out[lo[0]:hi[0], lo[1]:hi[1]] = ndimage.binary_dilation(sub, iterations=radius)
    return out


def frontier_score(frontier: Frontier, prompt: np.ndarray) -> float:
    """Mean cosine similarity between a frontier's tokens and a prompt."""
    t = frontier.tokens.astype(np.float64)
    norms = np.linalg.norm(t, axis=1)
    p = prompt / np.linalg.norm(prompt)
    cos = np.zeros(len(t))
    ok = norms > 0
    cos[ok] = (t[ok] @ p) / norms[ok]
    return float(cos.mean())


# ---------------------------------------------------------------------------
# controller

class Controller:
    """Frontier-exploring controller with greedy, oracle or random selection."""

    POLICIES = ("greedy", "oracle", "random")

    def __init__(self, policy: str = "greedy", config: Config = DEFAULT_CONFIG, seed: int = 0):
        if policy not in self.POLICIES:
            raise ValueError(f"unknown controller policy {policy!r}")
        self.policy = policy
        self.config = config
        self.seed = seed
        self.table = embedding_table(config.feature_dim, config.embedding_seed)
        self.reset()

    @property
    def uses_ground_truth(self) -> bool:
        return self.policy == "oracle"

    def reset(self) -> None:
        self.blacklist: Optional[np.ndarray] = None
        self.committed: Optional[np.ndarray] = None        # flat cells of the chosen frontier
        self.looked_at: Optional[tuple] = None
        self.bad_approach: dict = {}                        # target id -> set of cells
        self.blocked_edges: set = set()
        self.goal: Optional[dict] = None
        self.decisions = 0
        self.opened: dict = {}                              # container id -> cells it was inspected from

    # ------------------------------------------------------------------ helpers
    def _ensure(self, shape):
        if self.blacklist is None or self.blacklist.shape != shape:
            self.blacklist = np.zeros(shape, dtype=bool)

    def _lattice(self, fmap: FeatureMap, agent_cell, scene=None) -> Lattice:
        cost = grid_costs(scene.blocked) if scene is not None else map_costs(fmap, self.config.unknown_cost)
        if scene is None:
            cost[agent_cell] = min(cost[agent_cell], FREE_COST)
        edges = set()
        lat = Lattice(cost, agent_cell, self.config.forward_cells)
        if self.blocked_edges and scene is None:
            for (u, v) in self.blocked_edges:
                nu, nv = lat.node(u), lat.node(v)
                if nu is not None and nv is not None:
                    edges.add((nu, nv))
            lat = Lattice(cost, agent_cell, self.config.forward_cells, frozenset(edges))
        return lat

    def note_blocked(self, pose: Pose) -> None:
        """Bump: remember that Forward from this pose is impossible."""
        n = self.config.forward_cells
        dr, dc = {0: (0, 1), 90: (-1, 0), 180: (0, -1), 270: (1, 0)}[pose.heading]
        self.blocked_edges.add((pose.cell, (pose.row + dr * n, pose.col + dc * n)))
        self.goal = None

    def note_interaction_failed(self, target_id: int, cell: tuple) -> None:
        self.bad_approach.setdefault(target_id, set()).add(tuple(cell))
        self.goal = None

    def resolve_target(self, step, fmap: FeatureMap, agent_cell, scene=None) -> Optional[int]:
        if step.target is None:
            return None
        if self.uses_ground_truth and step.target_id is not None:
            entry = fmap.discovered.get(step.target_id)
            return step.target_id if entry is not None and not entry.held else None
        cands = [e for e in fmap.discovered.values() if e.category == step.target and not e.held]
        if not cands:
            return None

        def dist(e):
            r, c = np.divmod(e.cells, fmap.width)
            return float(np.min(np.hypot(r - agent_cell[0], c - agent_cell[1])))

        return min(cands, key=lambda e: (dist(e), e.instance)).instance

    def can_interact(self, target_id, agent, obs, fmap, scene=None) -> bool:
        if obs is None or target_id not in obs.visible_instances():
            return False
        if scene is not None:
            d = object_distance(scene, agent.pose.cell, target_id)
        else:
            cells = fmap.object_cells(target_id)
            d = float(np.min(np.hypot(cells[:, 0] - agent.pose.row, cells[:, 1] - agent.pose.col))) * fmap.cell_size
        return self.config.min_interaction_range < d <= self.config.interaction_range

    # ------------------------------------------------------------------ decide
    def decide(self, step, frontiers: list, fmap: FeatureMap, agent, obs=None, scene=None) -> ActionCommand:
        """One command for the current step (Navigate or an interaction)."""
        if step.terminal:
            raise ValueError("terminal steps need no command")
        self._ensure(fmap.shape)
        self.decisions += 1
        gt = scene if self.uses_ground_truth else None
        target = self.resolve_target(step, fmap, agent.pose.cell, gt)
        if target is not None:
            entry = fmap.discovered[target]
            r, c = np.divmod(entry.cells, fmap.width)
            loc = (int(np.round(r.mean())), int(np.round(c.mean())))
            if step.primitive_hint is not None and self.can_interact(target, agent, obs, fmap, gt):
                self.goal = None
                if step.primitive_hint == "Open":
                    self.opened.setdefault(target, [])
                return ActionCommand(step.primitive_hint, (entry.category, target), loc)
            return self._approach(target, agent, fmap, gt)
        if gt is None:
            cmd = self._inspect(agent, fmap)
            if cmd is not None:
                return cmd
        return self._explore(step, frontiers, fmap, agent, scene)

    def _inspect(self, agent, fmap) -> Optional[ActionCommand]:
        """Look into containers this controller opened, from a few well-separated poses."""
        for cid, tried in self.opened.items():
            if cid not in fmap.discovered or fmap.discovered[cid].held:
                continue
            while len(tried) < INSPECT_POSES:
                lat = self._lattice(fmap, agent.pose.cell)
                dist, pred = lat.shortest(agent.pose.cell)
                pose = self._search_pose(cid, fmap, None, lat, dist, APPROACH_BAND, False, avoid=tried)
                if pose is None:
                    break
                cell, heading = pose
                if cell == agent.pose.cell and heading == agent.pose.heading:
                    tried.append(cell)
                    continue
                self.goal = {"kind": "inspect", "target": cid, "cells": [cell], "heading": heading,
                             "lattice": lat, "pred": pred}
                return ActionCommand(NAVIGATE, None, cell)
        return None

    def _approach(self, target, agent, fmap, scene) -> ActionCommand:
        lat = self._lattice(fmap, agent.pose.cell, scene)
        dist, pred = lat.shortest(agent.pose.cell)
        pose = self._approach_pose(target, agent, fmap, scene, lat, dist)
        if pose is None:
            raise NoPath(f"no approach pose for object {target}")
        cell, heading = pose
        self.goal = {"kind": "approach", "target": target, "cells": [cell], "heading": heading,
                     "lattice": lat, "pred": pred}
        return ActionCommand(NAVIGATE, None, cell)

    def _approach_pose(self, target, agent, fmap, scene, lat, dist):
        if scene is None:
            return self._search_pose(target, fmap, None, lat, dist, APPROACH_BAND, False)
        pose = self._search_pose(target, fmap, scene, lat, dist, APPROACH_BAND, False)
        if pose is None:
            # occluded from the usual band: accept any pose the simulator would allow
            band = (self.config.min_interaction_range + 0.05, self.config.interaction_range)
            pose = self._search_pose(target, fmap, scene, lat, dist, band, True)
        return pose

    def _search_pose(self, target, fmap, scene, lat, dist, band, all_headings, avoid=()):
        lo, hi = band
        bad = self.bad_approach.get(target, set())
        avoid = np.array(avoid, dtype=float).reshape(-1, 2)
        if scene is not None:
            r0, c0, r1, c1 = scene.obj(target).footprint
            tcells = np.array([(r, c) for r in range(r0, r1) for c in range(c0, c1)])
            top = scene.obj(target).z[1]
        else:
            tcells = fmap.object_cells(target)
            top = float(np.max(fmap.max_height[tcells[:, 0], tcells[:, 1]]))
        reach = int(np.ceil(hi / fmap.cell_size)) + lat.stride
        R0, C0 = max(tcells[:, 0].min() - reach, 0), max(tcells[:, 1].min() - reach, 0)
        R1, C1 = min(tcells[:, 0].max() + reach + 1, fmap.height), min(tcells[:, 1].max() + reach + 1, fmap.width)
        box = np.zeros(fmap.shape, dtype=bool)
        box[R0:R1, C0:C1] = True
        nodes = lat.nodes_in(box)
        nodes = nodes[np.isfinite(dist[nodes])]
        if not len(nodes):
            return None
        cells = lat.cells_of(nodes)
        d = np.min(np.hypot(cells[:, 0:1] - tcells[None, :, 0], cells[:, 1:2] - tcells[None, :, 1]), axis=1)
        d = d * fmap.cell_size
        if not all_headings:
            lo = max(lo, abs(top - self.config.camera_height) + 0.1)
        ok = (d >= lo) & (d <= hi)
        center = tcells.mean(axis=0)
        for k in np.argsort(dist[nodes], kind="stable"):
            cell = (int(cells[k, 0]), int(cells[k, 1]))
            if not ok[k] or cell in bad:
                continue
            if len(avoid) and np.min(np.hypot(avoid[:, 0] - cell[0], avoid[:, 1] - cell[1])) < INSPECT_SPACING:
                continue
            heading, err = facing_heading(cell, tuple(center))
            headings = [heading]
            if all_headings:
                headings += [h for h in HEADINGS if h != heading]
            elif err > HEADING_TOLERANCE:
                continue
            for h in headings:
                if scene is None:
                    if self._line_of_sight(fmap, cell, tcells, top):
                        return cell, h
                    break
                if scene is not None and not (self.config.min_interaction_range
                                              < object_distance(scene, cell, target)
                                              <= self.config.interaction_range):
                    break
                obs = render_observation(scene, Pose(cell[0], cell[1], h), self.config)
                if target in obs.visible_instances():
                    return cell, h
        return None

    def _line_of_sight(self, fmap, cell, tcells, top) -> bool:
        near = tcells[np.argmin(np.hypot(tcells[:, 0] - cell[0], tcells[:, 1] - cell[1]))]
        own = {tuple(x) for x in tcells.tolist()}
        pts = line_cells(cell, tuple(near))
        total = math.hypot(near[0] - cell[0], near[1] - cell[1])
        cam = self.config.camera_height
        for p in pts:
            if p in own or not fmap.obstacle_seen[p]:
                continue
            frac = math.hypot(p[0] - cell[0], p[1] - cell[1]) / max(total, 1e-9)
            ray_z = cam + (top - cam) * frac
            if fmap.max_height[p] >= ray_z:
                return False
        return True

    # ------------------------------------------------------------------ exploration
    def usable_frontiers(self, frontiers) -> list:
        """Frontiers still worth pursuing after blacklisting visited or unreachable parts."""
        if self.blacklist is None:
            return list(frontiers)
        return [f for f, _ in self._usable(frontiers)]

    def _usable(self, frontiers):
        out = []
        for f in frontiers:
            keep = ~self.blacklist[f.cells[:, 0], f.cells[:, 1]]
            if keep.sum() >= min(self.config.frontier_threshold, f.area):
                out.append((f, f.cells[keep]))
        return out

    def _explore(self, step, frontiers, fmap, agent, scene) -> ActionCommand:
        lat = self._lattice(fmap, agent.pose.cell, scene if self.uses_ground_truth else None)
        dist, pred = lat.shortest(agent.pose.cell)
        for _ in range(len(frontiers) + 2):
            usable = self._usable(frontiers)
            scored = []
            for f, cells in usable:
                goal_mask = dilate_cells(fmap.shape, cells, FRONTIER_GOAL_RADIUS)
                goal_nodes = lat.nodes_in(goal_mask)
                d = dist[goal_nodes] if len(goal_nodes) else np.array([np.inf])
                if not np.isfinite(d).any():
                    self.blacklist[cells[:, 0], cells[:, 1]] = True
                    continue
                scored.append((f, cells, goal_nodes, float(d.min()), goal_mask))
            if not scored:
                break
            chosen = self._committed_choice(scored)
            if chosen is None:
                chosen = self.select_frontier(step, scored, fmap, agent, scene)
            f, cells, goal_nodes, d, goal_mask = chosen
            if goal_mask[agent.pose.cell]:
                # arrived: look toward unexplored space once, then give up on this frontier
                if self.looked_at == agent.pose.cell:
                    near = np.hypot(cells[:, 0] - agent.pose.row, cells[:, 1] - agent.pose.col) <= REACHED_RADIUS
                    if not near.any():
                        near[:] = True
                    self.blacklist[cells[near, 0], cells[near, 1]] = True
                    self.committed = None
                    continue
                self.looked_at = agent.pose.cell
                heading = self._look_heading(fmap, agent.pose.cell, f.centroid)
                self.committed = np.ravel_multi_index((cells[:, 0], cells[:, 1]), fmap.shape)
                self.goal = {"kind": "look", "heading": heading}
                return ActionCommand(NAVIGATE, None, f.centroid)
            self.committed = np.ravel_multi_index((cells[:, 0], cells[:, 1]), fmap.shape)
            best = goal_nodes[np.argmin(dist[goal_nodes])]
            self.goal = {"kind": "frontier", "cells": [lat.cell(best)], "heading": None,
                         "lattice": lat, "pred": pred, "centroid": f.centroid}
            return ActionCommand(NAVIGATE, None, f.centroid)
        return self._exhausted(step, fmap, agent, scene)

    def _exhausted(self, step, fmap, agent, scene):
        if self.uses_ground_truth and scene is not None:
            target = step.target_id
            if target is None:
                inst = scene.instances(step.target)
                target = inst[0].id if inst else None
            if target is not None and target in scene.by_id and scene.is_visible(scene.obj(target)):
                return self._approach(target, agent, fmap, scene)
        raise ExplorationExhausted(step.target)

    def _committed_choice(self, scored):
        if self.committed is None:
            return None
        best, overlap = None, 0
        shape = scored[0][4].shape
        for item in scored:
            flat = np.ravel_multi_index((item[1][:, 0], item[1][:, 1]), shape)
            k = len(np.intersect1d(flat, self.committed, assume_unique=True))
            if k > overlap:
                best, overlap = item, k
        return best

    def select_frontier(self, step, scored, fmap, agent, scene=None):
        """Pick a frontier according to the policy; ``scored`` items carry path distance."""
        if len(scored) == 1:
            return scored[0]
        if self.policy == "random":
            rng = np.random.default_rng([self.seed, self.decisions, fmap.timestep])
            return scored[int(rng.integers(len(scored)))]
        if self.policy == "oracle" and scene is not None:
            return self._oracle_choice(step, scored, fmap, agent, scene)
        prompt = build_prompts(step.demanded_objects, self.table).positive
        scores = [frontier_score(item[0], prompt) for item in scored]
        return greedy_pick(scored, scores, self.config.score_tie_eps)

    def _oracle_choice(self, step, scored, fmap, agent, scene):
        path = self.oracle_path(step, agent, scene)
        if path is None:
            return min(scored, key=lambda it: (it[3], it[0].centroid))
        pts = np.array(path)

        def gap(item):
            c = np.array(item[0].centroid)
            return float(np.min(np.hypot(pts[:, 0] - c[0], pts[:, 1] - c[1])))

        return min(scored, key=lambda it: (gap(it), it[3], it[0].centroid))

    def oracle_path(self, step, agent, scene) -> Optional[list]:
        """Ground-truth lattice path from the agent toward the step's true target."""
        target = step.target_id
        if target is None:
            inst = scene.instances(step.target) if step.target else []
            target = inst[0].id if inst else None
        if target is None or target not in scene.by_id:
            return None
        lat = Lattice(grid_costs(scene.blocked), agent.pose.cell, self.config.forward_cells)
        dist, pred = lat.shortest(agent.pose.cell)
        r0, c0, r1, c1 = scene.obj(target).footprint
        band = np.zeros(scene.blocked.shape, dtype=bool)
        m = int(APPROACH_BAND[1] / scene.cell_size)
        band[max(r0 - m, 0):r1 + m, max(c0 - m, 0):c1 + m] = True
        nodes = lat.nodes_in(band)
        nodes = nodes[np.isfinite(dist[nodes])]
        if not len(nodes):
            return None
        best = nodes[np.argmin(dist[nodes])]
        return lat.path_to(pred, agent.pose.cell, best)

    def _look_heading(self, fmap, cell, centroid) -> int:
        unknown = fmap.unknown
        r, c = cell
        R = 40
        best, best_n = None, -1
        for h in HEADINGS:
            dr, dc = {0: (0, 1), 90: (-1, 0), 180: (0, -1), 270: (1, 0)}[h]
            r0, r1 = (r - R, r + 1) if dr < 0 else (r, r + R + 1) if dr > 0 else (r - R, r + R + 1)
            c0, c1 = (c - R, c + 1) if dc < 0 else (c, c + R + 1) if dc > 0 else (c - R, c + R + 1)
            n = int(unknown[max(r0, 0):max(r1, 0), max(c0, 0):max(c1, 0)].sum())
            if n > best_n:
                best, best_n = h, n
        return best

    # ------------------------------------------------------------------ motions
    def motions(self, cmd: ActionCommand, agent, fmap: FeatureMap, scene=None) -> list:
        """Motion commands realizing the last Navigate decision."""
        if cmd.primitive != NAVIGATE or self.goal is None:
            return []
        g = self.goal
        if g["kind"] == "look":
            return turn_commands(agent.pose.heading, g["heading"])
        goal_cell = g["cells"][0]
        lat = g["lattice"]
        path = lat.path_to(g["pred"], agent.pose.cell, lat.node(goal_cell))
        out = cells_to_motions(path, agent.pose.heading, g["heading"])
        if not out and g["kind"] == "approach":
            # standing at the approach pose already yet unable to interact
            self.note_interaction_failed(g["target"], agent.pose.cell)
        elif not out and g["kind"] == "inspect":
            self.opened[g["target"]].append(agent.pose.cell)
        return out


def greedy_pick(scored: list, scores: list, eps: float):
    """Highest score; near-ties broken by path distance, then centroid."""
    top = max(scores)
    tied = [(item, s) for item, s in zip(scored, scores) if s >= top - eps]
    return min(tied, key=lambda x: (x[0][3], x[0][0].centroid))[0]
