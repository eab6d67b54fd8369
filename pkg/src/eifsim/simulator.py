"""Agent embodiment: discrete motion, egocentric rendering and interaction.

The renderer is a 2.5D column caster. Each image column is a horizontal ray
sampled at fixed steps; a pixel row is a slope along that ray. The first
sample whose height falls inside an object's vertical extent is the hit;
walls and the grid edge truncate the ray.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache
from typing import Optional

import numpy as np

from .config import DEFAULT_CONFIG, Config
from .scene import taxonomy as tx
from .scene.model import ActionPrimitive, PreconditionViolated, Scene, apply_effect

HEADINGS = (0, 90, 180, 270)


class Motion(str, Enum):
    Forward = "Forward"
    RotateLeft = "RotateLeft"
    RotateRight = "RotateRight"


MOTIONS = tuple(m.value for m in Motion)


def heading_vector(heading: int) -> tuple:
    """Unit (drow, dcol) for a cardinal heading; 0 faces +col, 90 faces -row."""
    return {0: (0, 1), 90: (-1, 0), 180: (0, -1), 270: (1, 0)}[heading % 360]


@dataclass(frozen=True)
class Pose:
    row: int
    col: int
    heading: int

    @property
    def cell(self) -> tuple:
        return (self.row, self.col)

    def to_list(self) -> list:
        return [self.row, self.col, self.heading]


@dataclass(frozen=True)
class AgentState:
    pose: Pose
    held_object: Optional[int] = None
    odometer: float = 0.0
    low_level_actions: int = 0
    forward_steps: int = 0


@dataclass(frozen=True, eq=False)
class Observation:
    depth: np.ndarray        # meters of horizontal range, inf on background
    category_id: np.ndarray
    instance_id: np.ndarray
    pose: Pose

    def visible_instances(self) -> set:
        ids = np.unique(self.instance_id)
        return {int(i) for i in ids if i > tx.WALL_INSTANCE_ID}

    def fingerprint(self) -> bytes:
        return self.depth.tobytes() + self.category_id.tobytes() + self.instance_id.tobytes()


class OutOfRange(Exception):
    def __init__(self, target, distance: float, limits: tuple):
        self.target = target
        self.distance = distance
        self.tag = "too_close" if distance <= limits[0] else "too_far"
        super().__init__(f"object {target} at {distance:.3f} m is {self.tag.replace('_', ' ')}")


class NotVisible(Exception):
    def __init__(self, target):
        self.target = target
        super().__init__(f"object {target} is not visible")


@dataclass(frozen=True)
class InteractionOutcome:
    success: bool
    primitive: str
    target: int
    scene: Scene
    state: AgentState
    error: Optional[Exception] = None
    distance: float = float("nan")

    @property
    def error_kind(self) -> Optional[str]:
        return None if self.error is None else type(self.error).__name__

    @property
    def reason(self) -> str:
        if self.error is None:
            return ""
        if isinstance(self.error, OutOfRange):
            return self.error.tag
        if isinstance(self.error, PreconditionViolated):
            return self.error.reason
        return "not_visible"


# ---------------------------------------------------------------------------
# camera geometry

class Camera:
    """Precomputed ray geometry for one configuration."""

    def __init__(self, config: Config):
        n = config.image_size
        half = math.tan(math.radians(config.fov) / 2)
        u = (2 * (np.arange(n) + 0.5) / n - 1) * half     # right-positive
        v = (1 - 2 * (np.arange(n) + 0.5) / n) * half     # up-positive
        self.size = n
        self.cell_size = config.cell_size
        self.height = config.camera_height
        self.wall_height = config.wall_height
        self.max_range = config.max_range
        self.col_angle = np.arctan(-u)                     # left-positive, radians
        cos_phi = 1 / np.sqrt(1 + u * u)
        self.slope = v[:, None] * cos_phi[None, :]         # (rows, cols) dz per meter of range
        k = int(math.floor(config.max_range / config.ray_step + 1e-9))
        self.t = (np.arange(1, k + 1) * config.ray_step)   # sample ranges, meters
        self._dirs = {}

    def directions(self, heading: int, angles: Optional[np.ndarray] = None) -> tuple:
        """Per-ray (drow, dcol) unit vectors in cell units per cell."""
        if angles is None:
            if heading not in self._dirs:
                a = math.radians(heading) + self.col_angle
                self._dirs[heading] = (-np.sin(a), np.cos(a))
            return self._dirs[heading]
        a = math.radians(heading) + angles
        return (-np.sin(a), np.cos(a))


def ray_points(pose: Pose, dr, dc, t, cell_size: float) -> tuple:
    """Continuous grid coordinates of range ``t`` along rays (dr, dc).

    Shared by the renderer and the map projection so a pixel unprojected
    with its recorded depth lands in the exact cell that produced the hit.
    """
    s = np.asarray(t) / cell_size
    return (pose.row + 0.5) + s * dr, (pose.col + 0.5) + s * dc


@lru_cache(maxsize=8)
def _camera_for(key: tuple) -> Camera:
    return Camera(Config(**dict(key)))


def camera_for(config: Config) -> Camera:
    fields = ("fov", "image_size", "camera_height", "wall_height", "max_range", "ray_step", "cell_size")
    return _camera_for(tuple((f, getattr(config, f)) for f in fields))


def render_observation(scene: Scene, pose: Pose, config: Config = DEFAULT_CONFIG) -> Observation:
    cam = camera_for(config)
    n = cam.size
    dr, dc = cam.directions(pose.heading)
    # samples: (cols, K)
    pr, pc = ray_points(pose, dr[:, None], dc[:, None], cam.t[None, :], cam.cell_size)
    ir = np.floor(pr).astype(np.int64)
    ic = np.floor(pc).astype(np.int64)
    outside = (ir < 0) | (ir >= scene.height) | (ic < 0) | (ic >= scene.width)
    irc = np.clip(ir, 0, scene.height - 1)
    icc = np.clip(ic, 0, scene.width - 1)
    stop = outside | scene.walls[irc, icc]
    has_stop = stop.any(axis=1)
    trunc = np.where(has_stop, stop.argmax(axis=1), len(cam.t))   # first wall sample per column

    depth = np.full((n, n), np.inf)
    inst = np.zeros((n, n), dtype=np.int32)

    # walls
    cols = np.nonzero(has_stop)[0]
    if len(cols):
        tw = cam.t[trunc[cols]]
        z = cam.height + tw[None, :] * cam.slope[:, cols]
        wall_hit = (z >= 0) & (z <= cam.wall_height) & ~outside[cols, trunc[cols]][None, :]
        rr, cc = np.nonzero(wall_hit)
        depth[rr, cols[cc]] = tw[cc]
        inst[rr, cols[cc]] = tx.WALL_INSTANCE_ID

    # objects: only samples over occupied cells before truncation
    lo, hi, ids, occupied = scene.layers
    k_idx = np.arange(len(cam.t))[None, :]
    cand = occupied[irc, icc] & (k_idx < trunc[:, None]) & ~outside
    counts = cand.sum(axis=1)
    m = int(counts.max()) if n else 0
    if m:
        order = np.argsort(~cand, axis=1, kind="stable")[:, :m]      # candidates first, in range order
        valid = np.take_along_axis(cand, order, axis=1)               # (cols, m)
        cr = np.take_along_axis(irc, order, axis=1)
        cc_ = np.take_along_axis(icc, order, axis=1)
        tc = cam.t[order]                                             # (cols, m)
        z = cam.height + tc[:, :, None] * cam.slope.T[:, None, :]     # (cols, m, rows)
        lo_c = lo[:, cr, cc_]                                         # (layers, cols, m)
        hi_c = hi[:, cr, cc_]
        id_c = ids[:, cr, cc_]
        hit = np.zeros(z.shape, dtype=bool)                          # (cols, m, rows)
        for layer in range(lo.shape[0]):
            present = valid & (id_c[layer] > 0)
            if present.any():
                hit |= present[:, :, None] & (lo_c[layer][:, :, None] <= z) & (z <= hi_c[layer][:, :, None])
        any_hit = hit.any(axis=1)                                     # (cols, rows)
        first = hit.argmax(axis=1)                                    # (cols, rows)
        ci, ri = np.nonzero(any_hit)
        fi = first[ci, ri]
        zf = z[ci, fi, ri]
        layer = np.zeros(len(ci), dtype=np.intp)
        for k in range(lo.shape[0]):                                  # deeper layers win
            ok = (id_c[k, ci, fi] > 0) & (lo_c[k, ci, fi] <= zf) & (zf <= hi_c[k, ci, fi])
            layer[ok] = k
        depth[ri, ci] = tc[ci, fi]
        inst[ri, ci] = id_c[layer, ci, fi]

    category = scene.category_lut[inst]
    category[inst == 0] = 0
    return Observation(depth, category.astype(np.int32), inst, pose)


# ---------------------------------------------------------------------------
# motion and interaction

def reset(scene: Scene, seed: int, config: Config = DEFAULT_CONFIG) -> tuple:
    """Place the agent on a seeded navigable cell and render the first view."""
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, scene.seed & 0xFFFFFFFF, 7])
    nav = scene.navigable(config.forward_cells)
    rows, cols = np.nonzero(nav)
    i = int(rng.integers(len(rows)))
    heading = HEADINGS[int(rng.integers(4))]
    state = AgentState(Pose(int(rows[i]), int(cols[i]), heading))
    return state, render_observation(scene, state.pose, config)


def forward_cells_clear(scene: Scene, pose: Pose, n: int) -> bool:
    dr, dc = heading_vector(pose.heading)
    for k in range(1, n + 1):
        r, c = pose.row + dr * k, pose.col + dc * k
        if not (0 <= r < scene.height and 0 <= c < scene.width) or scene.blocked[r, c]:
            return False
    return True


def step_motion(scene: Scene, state: AgentState, cmd, config: Config = DEFAULT_CONFIG) -> tuple:
    """Returns ``(state', observation, blocked)``."""
    cmd = Motion(cmd)
    pose = state.pose
    blocked = False
    if cmd is Motion.Forward:
        n = config.forward_cells
        if forward_cells_clear(scene, pose, n):
            dr, dc = heading_vector(pose.heading)
            state = replace(state, pose=Pose(pose.row + dr * n, pose.col + dc * n, pose.heading),
                            odometer=round((state.forward_steps + 1) * config.forward_step, 9),
                            forward_steps=state.forward_steps + 1)
        else:
            blocked = True
    else:
        delta = 90 if cmd is Motion.RotateLeft else -90
        state = replace(state, pose=Pose(pose.row, pose.col, (pose.heading + delta) % 360))
    state = replace(state, low_level_actions=state.low_level_actions + 1)
    return state, render_observation(scene, state.pose, config), blocked


def object_distance(scene: Scene, cell: tuple, object_id: int) -> float:
    """Meters from a cell center to the nearest footprint cell center of an object."""
    r0, c0, r1, c1 = scene.obj(object_id).footprint
    r, c = cell
    dr = max(r0 - r, 0, r - (r1 - 1))
    dc = max(c0 - c, 0, c - (c1 - 1))
    return math.hypot(dr, dc) * scene.cell_size


def interact(scene: Scene, state: AgentState, primitive, target: int,
             observation: Optional[Observation] = None,
             config: Config = DEFAULT_CONFIG) -> InteractionOutcome:
    """Attempt an interaction; failures are reported in the outcome."""
    prim = ActionPrimitive(primitive).value
    state = replace(state, low_level_actions=state.low_level_actions + 1)

    def failed(err, dist=float("nan")):
        return InteractionOutcome(False, prim, target, scene, state, err, dist)

    if target not in scene.by_id:
        return failed(PreconditionViolated(prim, target, "unknown object"))
    obs = observation if observation is not None else render_observation(scene, state.pose, config)
    dist = object_distance(scene, state.pose.cell, target)
    if target not in obs.visible_instances():
        return failed(NotVisible(target), dist)
    limits = (config.min_interaction_range, config.interaction_range)
    if not limits[0] < dist <= limits[1] + 1e-9:
        return failed(OutOfRange(target, dist, limits), dist)
    try:
        new_scene = apply_effect(scene, prim, target, state.held_object)
    except PreconditionViolated as err:
        return failed(err, dist)
    held = new_scene.held_object()
    state = replace(state, held_object=held.id if held else None)
    return InteractionOutcome(True, prim, target, new_scene, state, None, dist)
