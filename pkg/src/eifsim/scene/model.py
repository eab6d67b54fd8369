"""World state: rooms, walls, objects, containment and primitive effects.

Scenes are immutable snapshots. :func:`apply_effect` is the only way to
change object state and always returns a new :class:`Scene`.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Optional

import numpy as np

from . import taxonomy as tx
from .lattice import navigable_cells

if TYPE_CHECKING:
    from ..goals import GoalCondition, Predicate

SCENE_SCHEMA_VERSION = 1
NUM_LAYERS = 4
MAX_DEPTH = NUM_LAYERS - 1


class ActionPrimitive(str, Enum):
    PickUp = "PickUp"
    Place = "Place"
    Open = "Open"
    Close = "Close"
    ToggleOn = "ToggleOn"
    ToggleOff = "ToggleOff"
    Slice = "Slice"


INTERACTIONS = tuple(p.value for p in ActionPrimitive)


class PreconditionViolated(Exception):
    def __init__(self, primitive, target, reason: str):
        self.primitive = ActionPrimitive(primitive).value
        self.target = target
        self.reason = reason
        super().__init__(f"{self.primitive}({target}): {reason}")


@dataclass(frozen=True)
class Room:
    id: int
    label: str
    rect: tuple  # (r0, c0, r1, c1), half-open interior cells

    @property
    def center(self) -> tuple:
        r0, c0, r1, c1 = self.rect
        return ((r0 + r1) // 2, (c0 + c1) // 2)

    def contains(self, cell) -> bool:
        r0, c0, r1, c1 = self.rect
        return r0 <= cell[0] < r1 and c0 <= cell[1] < c1


@dataclass(frozen=True)
class ObjectInstance:
    id: int
    category: str
    cell: tuple                 # anchor cell (footprint center)
    facing: int                 # degrees; side the object's front faces
    footprint: tuple            # (r0, c0, r1, c1) half-open
    z: tuple                    # (bottom, top) meters
    affordances: frozenset
    room: int
    is_open: bool = False
    is_on: bool = False
    is_sliced: bool = False
    is_held: bool = False
    is_heated: bool = False
    parent_receptacle: Optional[int] = None

    def has(self, affordance: str) -> bool:
        return affordance in self.affordances

    def cells(self) -> list:
        r0, c0, r1, c1 = self.footprint
        return [(r, c) for r in range(r0, r1) for c in range(c0, c1)]

    def to_dict(self) -> dict:
        return {
            "id": self.id, "category": self.category, "cell": list(self.cell),
            "facing": self.facing, "footprint": list(self.footprint),
            "z": [round(self.z[0], 6), round(self.z[1], 6)],
            "affordances": sorted(self.affordances), "room": self.room,
            "state": {"is_open": self.is_open, "is_on": self.is_on, "is_sliced": self.is_sliced,
                      "is_held": self.is_held, "is_heated": self.is_heated},
            "parent_receptacle": self.parent_receptacle,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectInstance":
        return cls(id=d["id"], category=d["category"], cell=tuple(d["cell"]), facing=d["facing"],
                   footprint=tuple(d["footprint"]), z=tuple(d["z"]),
                   affordances=frozenset(d["affordances"]), room=d["room"],
                   parent_receptacle=d["parent_receptacle"], **d["state"])


@dataclass(frozen=True, eq=False)
class Scene:
    seed: int
    size_class: str
    cell_size: float
    width: int
    height: int
    rooms: tuple
    objects: tuple
    walls: np.ndarray = field(repr=False)
    doors: tuple = ()
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.walls.setflags(write=False)

    # lookups ---------------------------------------------------------------
    @property
    def by_id(self) -> dict:
        c = self._cache
        if "by_id" not in c:
            c["by_id"] = {o.id: o for o in self.objects}
        return c["by_id"]

    def obj(self, object_id: int) -> ObjectInstance:
        return self.by_id[object_id]

    def instances(self, category: str) -> list:
        return [o for o in self.objects if o.category == category]

    def categories(self) -> set:
        return {o.category for o in self.objects}

    @property
    def containment(self) -> dict:
        return {o.id: o.parent_receptacle for o in self.objects if o.parent_receptacle is not None}

    def children(self, object_id: int) -> list:
        return [o for o in self.objects if o.parent_receptacle == object_id]

    def held_object(self) -> Optional[ObjectInstance]:
        for o in self.objects:
            if o.is_held:
                return o
        return None

    def depth(self, o: ObjectInstance) -> int:
        d = 0
        while o.parent_receptacle is not None:
            o = self.obj(o.parent_receptacle)
            d += 1
        return d

    def ancestors(self, o: ObjectInstance) -> list:
        out = []
        while o.parent_receptacle is not None:
            o = self.obj(o.parent_receptacle)
            out.append(o)
        return out

    def is_visible(self, o: ObjectInstance) -> bool:
        """Rendered unless held or hidden inside a closed openable ancestor."""
        if o.is_held:
            return False
        return all(a.is_open or not a.has(tx.OPENABLE) for a in self.ancestors(o))

    def room_at(self, cell) -> Optional[Room]:
        for room in self.rooms:
            if room.contains(cell):
                return room
        return None

    @property
    def side_length_m(self) -> float:
        return max(self.width, self.height) * self.cell_size

    # derived grids ---------------------------------------------------------
    @property
    def blocked(self) -> np.ndarray:
        """Cells the agent cannot stand on: walls and floor furniture."""
        c = self._cache
        if "blocked" not in c:
            grid = self.walls.copy()
            for o in self.objects:
                if o.parent_receptacle is None and not o.is_held:
                    r0, c0, r1, c1 = o.footprint
                    grid[r0:r1, c0:c1] = True
            grid.setflags(write=False)
            c["blocked"] = grid
        return c["blocked"]

    @property
    def layers(self) -> tuple:
        """Render stacks ``(lo, hi, inst)``, each ``(NUM_LAYERS, H, W)``.

        Layer k holds the visible object at nesting depth k covering a cell;
        deeper layers take priority when height ranges overlap.
        """
        c = self._cache
        if "layers" not in c:
            shape = (NUM_LAYERS, self.height, self.width)
            lo = np.zeros(shape)
            hi = np.zeros(shape)
            inst = np.zeros(shape, dtype=np.int32)
            for o in self.objects:
                if not self.is_visible(o):
                    continue
                k = self.depth(o)
                r0, c0, r1, c1 = o.footprint
                lo[k, r0:r1, c0:c1] = o.z[0]
                hi[k, r0:r1, c0:c1] = o.z[1]
                inst[k, r0:r1, c0:c1] = o.id
            occupied = inst.any(axis=0)
            for a in (lo, hi, inst, occupied):
                a.setflags(write=False)
            c["layers"] = (lo, hi, inst, occupied)
        return c["layers"]

    @property
    def category_lut(self) -> np.ndarray:
        """instance id -> category id lookup table."""
        c = self._cache
        if "lut" not in c:
            n = max([o.id for o in self.objects] + [tx.WALL_INSTANCE_ID]) + 1
            lut = np.zeros(n, dtype=np.int32)
            lut[tx.WALL_INSTANCE_ID] = tx.category_id(tx.WALL)
            for o in self.objects:
                lut[o.id] = tx.category_id(o.category)
            c["lut"] = lut
        return c["lut"]

    def navigable(self, stride: int) -> np.ndarray:
        """Cells from which every room is reachable on the motion lattice."""
        c = self._cache
        key = ("navigable", stride)
        if key not in c:
            grid = navigable_cells(self.blocked, stride)
            grid.setflags(write=False)
            c[key] = grid
        return c[key]

    def with_objects(self, objects: Iterable[ObjectInstance]) -> "Scene":
        scene = Scene(self.seed, self.size_class, self.cell_size, self.width, self.height,
                      self.rooms, tuple(objects), self.walls, self.doors)
        # floor furniture is never pickupable, so occupancy-derived grids carry over
        for key, value in self._cache.items():
            if key == "blocked" or (isinstance(key, tuple) and key[0] == "navigable"):
                scene._cache[key] = value
        return scene

    # serialization ----------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "schema_version": SCENE_SCHEMA_VERSION,
            "seed": self.seed,
            "size_class": self.size_class,
            "cell_size": self.cell_size,
            "width": self.width,
            "height": self.height,
            "walls": rle_encode(self.walls),
            "doors": [list(d) for d in self.doors],
            "rooms": [{"id": r.id, "label": r.label, "rect": list(r.rect)} for r in self.rooms],
            "objects": [o.to_dict() for o in self.objects],
            "containment": {str(k): v for k, v in sorted(self.containment.items())},
        }

    def serialize(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        if d.get("schema_version") != SCENE_SCHEMA_VERSION:
            raise ValueError(f"unsupported scene schema version {d.get('schema_version')}")
        walls = rle_decode(d["walls"], d["height"], d["width"])
        objects = tuple(ObjectInstance.from_dict(o) for o in d["objects"])
        scene = cls(d["seed"], d["size_class"], d["cell_size"], d["width"], d["height"],
                    tuple(Room(r["id"], r["label"], tuple(r["rect"])) for r in d["rooms"]),
                    objects, walls, tuple(tuple(x) for x in d.get("doors", [])))
        declared = {int(k): v for k, v in d.get("containment", {}).items()}
        if declared != scene.containment:
            raise ValueError("containment map disagrees with object parents")
        return scene

    @classmethod
    def deserialize(cls, text: str) -> "Scene":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.serialize())

    @classmethod
    def load(cls, path) -> "Scene":
        with open(path, encoding="utf-8") as fh:
            return cls.deserialize(fh.read())


def rle_encode(grid: np.ndarray) -> str:
    """Run lengths of a boolean grid in row-major order, starting with False."""
    flat = np.asarray(grid, dtype=bool).ravel()
    if flat.size == 0:
        return ""
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs = [0] + runs
    return ",".join(map(str, runs))


def rle_decode(text: str, height: int, width: int) -> np.ndarray:
    runs = [int(x) for x in text.split(",")] if text else []
    values = np.arange(len(runs)) % 2 == 1
    flat = np.repeat(values, runs)
    if flat.size != height * width:
        raise ValueError("run lengths do not match grid size")
    return flat.reshape(height, width)


# ---------------------------------------------------------------------------
# placement geometry

def front_slices(footprint, facing: int):
    """Yield (depth, lateral-cells) rows of a footprint ordered front to back."""
    r0, c0, r1, c1 = footprint
    if facing == 90:
        return [(r, [(r, c) for c in range(c0, c1)]) for r in range(r0, r1)]
    if facing == 270:
        return [(r, [(r, c) for c in range(c0, c1)]) for r in range(r1 - 1, r0 - 1, -1)]
    if facing == 0:
        return [(c, [(r, c) for r in range(r0, r1)]) for c in range(c1 - 1, c0 - 1, -1)]
    return [(c, [(r, c) for r in range(r0, r1)]) for c in range(c0, c1)]


def oriented_size(category: str, facing: int) -> tuple:
    rows, cols = tx.info(category).size
    return (rows, cols) if facing in (90, 270) else (cols, rows)


def content_z(scene: Scene, rec: ObjectInstance, category: str) -> tuple:
    h = tx.info(category).height
    span = rec.z[1] - rec.z[0]
    if rec.has(tx.OPENABLE):
        z0 = rec.z[0] + 0.45 * span
    elif rec.has(tx.PICKUPABLE):
        z0 = rec.z[0] + 0.4 * span
    else:
        z0 = rec.z[1]
    return (z0, z0 + h)


def find_spot(scene: Scene, rec: ObjectInstance, category: str,
              exclude: Optional[int] = None) -> Optional[tuple]:
    """Deterministic free footprint for ``category`` on/in ``rec``, front first.

    Closed-body receptacles only offer spots along the opening, since their
    sides hide anything further back.
    """
    rows, cols = oriented_size(category, rec.facing)
    r0, c0, r1, c1 = rec.footprint
    if rows > r1 - r0 or cols > c1 - c0:
        return None
    taken = np.zeros((r1 - r0, c1 - c0), dtype=bool)
    for sib in scene.children(rec.id):
        if sib.id == exclude:
            continue
        a0, b0, a1, b1 = sib.footprint
        taken[max(a0, r0) - r0:max(min(a1, r1) - r0, 0), max(b0, c0) - c0:max(min(b1, c1) - c0, 0)] = True
    # candidate top-left corners, ordered by distance from the front edge then from the middle
    cands = []
    for rr in range(r0, r1 - rows + 1):
        for cc in range(c0, c1 - cols + 1):
            if rec.facing == 90:
                depth = rr - r0
                lat = abs((cc + cols / 2) - (c0 + c1) / 2)
            elif rec.facing == 270:
                depth = r1 - (rr + rows)
                lat = abs((cc + cols / 2) - (c0 + c1) / 2)
            elif rec.facing == 0:
                depth = c1 - (cc + cols)
                lat = abs((rr + rows / 2) - (r0 + r1) / 2)
            else:
                depth = cc - c0
                lat = abs((rr + rows / 2) - (r0 + r1) / 2)
            if depth > 0 and rec.has(tx.OPENABLE):
                continue
            cands.append((depth, lat, rr, cc))
    cands.sort()
    for _, _, rr, cc in cands:
        if not taken[rr - r0:rr - r0 + rows, cc - c0:cc - c0 + cols].any():
            return (rr, cc, rr + rows, cc + cols)
    return None


# ---------------------------------------------------------------------------
# effects

def apply_effect(scene: Scene, primitive, target: int, held: Optional[int] = None) -> Scene:
    """Apply one interaction primitive, returning the successor scene.

    Only the target (and, for PickUp/Place, the held object) changes. The one
    exception is ToggleOn of a heating appliance, which also marks heatable
    direct contents as heated.
    """
    prim = ActionPrimitive(primitive)

    def fail(reason):
        raise PreconditionViolated(prim, target, reason)

    if target not in scene.by_id:
        fail("unknown object")
    t = scene.obj(target)
    current = scene.held_object()
    if held is not None and (current is None or current.id != held):
        fail("held object does not match scene state")
    held_obj = current
    updates: dict[int, ObjectInstance] = {}

    if prim is ActionPrimitive.PickUp:
        if not t.has(tx.PICKUPABLE):
            fail("not pickupable")
        if t.is_held:
            fail("already held")
        if held_obj is not None:
            fail(f"already holding {held_obj.category}")
        if not scene.is_visible(t):
            fail("inside a closed container")
        if scene.children(t.id):
            fail("has objects on or in it")
        updates[t.id] = replace(t, is_held=True, parent_receptacle=None)
    elif prim is ActionPrimitive.Place:
        if held_obj is None:
            fail("nothing held")
        if not t.has(tx.RECEPTACLE):
            fail("not a receptacle")
        if t.id == held_obj.id or t.is_held:
            fail("cannot place into the held object")
        if t.has(tx.OPENABLE) and not t.is_open:
            fail("receptacle is closed")
        if not scene.is_visible(t):
            fail("receptacle not reachable")
        if scene.depth(t) + 1 > MAX_DEPTH:
            fail("nesting too deep")
        spot = find_spot(scene, t, held_obj.category)
        if spot is None:
            fail("no free space")
        r0, c0, r1, c1 = spot
        updates[held_obj.id] = replace(held_obj, is_held=False, parent_receptacle=t.id,
                                       footprint=spot, cell=((r0 + r1) // 2, (c0 + c1) // 2),
                                       facing=t.facing, z=content_z(scene, t, held_obj.category),
                                       room=t.room)
    elif prim in (ActionPrimitive.Open, ActionPrimitive.Close):
        want = prim is ActionPrimitive.Open
        if not t.has(tx.OPENABLE):
            fail("not openable")
        if t.is_open == want:
            fail("already open" if want else "already closed")
        updates[t.id] = replace(t, is_open=want)
    elif prim in (ActionPrimitive.ToggleOn, ActionPrimitive.ToggleOff):
        want = prim is ActionPrimitive.ToggleOn
        if not t.has(tx.TOGGLEABLE):
            fail("not toggleable")
        if t.is_on == want:
            fail("already on" if want else "already off")
        updates[t.id] = replace(t, is_on=want)
        if want and t.category == "Microwave":
            for child in scene.children(t.id):
                if child.has(tx.HEATABLE):
                    updates[child.id] = replace(child, is_heated=True)
    elif prim is ActionPrimitive.Slice:
        if not t.has(tx.SLICEABLE):
            fail("not sliceable")
        if t.is_sliced:
            fail("already sliced")
        if held_obj is None or held_obj.category != "Knife":
            fail("requires a held knife")
        if not scene.is_visible(t):
            fail("inside a closed container")
        updates[t.id] = replace(t, is_sliced=True)

    return scene.with_objects(updates.get(o.id, o) for o in scene.objects)


def replay_actions(scene: Scene, actions: Iterable) -> Scene:
    """Re-apply a log of ``(primitive, target)`` interactions."""
    for primitive, target in actions:
        held = scene.held_object()
        scene = apply_effect(scene, primitive, target, held.id if held else None)
    return scene


# ---------------------------------------------------------------------------
# goal evaluation

def predicate_holds(scene: Scene, pred: Predicate, binding: dict) -> bool:
    o = scene.obj(binding[pred.args[0]])
    name = pred.name
    if name == "sliced":
        return o.is_sliced
    if name == "open":
        return o.has(tx.OPENABLE) and o.is_open
    if name == "closed":
        return o.has(tx.OPENABLE) and not o.is_open
    if name == "on":
        return o.has(tx.TOGGLEABLE) and o.is_on
    if name == "off":
        return o.has(tx.TOGGLEABLE) and not o.is_on
    if name == "held":
        return o.is_held
    if name == "heated":
        return o.is_heated
    if name == "in":
        return o.parent_receptacle == binding[pred.args[1]]
    raise ValueError(name)


def _bindings(scene: Scene, goal: GoalCondition):
    cats = goal.categories
    pools = [[o.id for o in scene.instances(c)] for c in cats]
    if any(not p for p in pools):
        return
    for combo in itertools.product(*pools):
        if len(set(combo)) != len(combo):
            continue
        yield dict(zip(cats, combo))


def goal_conditions_met(scene: Scene, goal: GoalCondition) -> int:
    """Largest number of conjuncts satisfied by one consistent binding."""
    best = 0
    n = len(goal.conjuncts)
    for binding in _bindings(scene, goal):
        k = sum(predicate_holds(scene, p, binding) for p in goal.conjuncts)
        best = max(best, k)
        if best == n:
            break
    return best


def goal_satisfied(scene: Scene, goal: GoalCondition) -> bool:
    return goal_conditions_met(scene, goal) == len(goal.conjuncts)
