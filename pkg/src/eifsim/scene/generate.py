"""Procedural multi-room houses.

Layouts come from a binary space partition of the house rectangle: each
split adds a one-cell wall with a door gap, which keeps the rooms connected.
Furniture is pushed against walls and faces into the room; small objects are
placed on or inside furniture.
"""
from __future__ import annotations

import numpy as np

from . import taxonomy as tx
from .lattice import main_component_mask
from .model import ObjectInstance, Room, Scene, content_z, find_spot

SIZE_CLASSES = ("small", "large")
MAX_ATTEMPTS = 1000

CELL = 0.05
STRIDE = 5
MIN_ROOM = 50            # cells (2.5 m)
DOOR = 18                # cells (0.9 m)
DOOR_MARGIN = 8          # keep doors away from wall junctions
DOOR_CLEARANCE = 16      # no furniture this close to a door gap
FURNITURE_GAP = 20       # free cells between furniture pieces
WALL_GAP = 20            # furniture is flush with a wall or at least this far from it
APPROACH = (0.4, 0.8)    # meters; some navigable cell must exist in this band


class GenerationError(RuntimeError):
    pass


# room contents: required furniture, optional furniture with probability
_FURNITURE = {
    "kitchen": (["CounterTop", "Fridge", "Sink", "Stove"],
                [("CounterTop", 0.4), ("Cabinet", 0.6), ("DiningTable", 0.5), ("GarbageCan", 0.5)]),
    "livingroom": (["Sofa", "TVStand"],
                   [("CoffeeTable", 0.7), ("Shelf", 0.5), ("ArmChair", 0.5), ("SideTable", 0.5),
                    ("FloorLamp", 0.4), ("Desk", 0.3), ("DiningTable", 0.3)]),
    "bedroom": (["Bed", "Dresser"],
                [("Desk", 0.5), ("SideTable", 0.6), ("Shelf", 0.4), ("FloorLamp", 0.3)]),
    "bathroom": (["Toilet", "Sink"],
                 [("Bathtub", 0.5), ("Cabinet", 0.5), ("GarbageCan", 0.4)]),
}

_KITCHENWARE = ["Fork", "Spoon", "Spatula", "Mug", "Cup", "Bowl", "Plate", "Pan", "Pot",
                "Bottle", "Kettle", "SaltShaker", "PepperShaker", "DishSponge", "SoapBottle"]

# host furniture weights for small objects by room
_HOSTS = {
    "food": {"CounterTop": 3, "DiningTable": 2, "Fridge": 2},
    "kitchenware": {"CounterTop": 3, "DiningTable": 1, "Cabinet": 1, "Sink": 1, "Stove": 1},
    "other": {"DiningTable": 2, "CoffeeTable": 2, "SideTable": 2, "Desk": 2, "Dresser": 1,
              "Shelf": 2, "TVStand": 1, "Bed": 1, "Sofa": 1, "ArmChair": 1, "Cabinet": 1,
              "Toilet": 1, "Bathtub": 1, "Sink": 1, "CounterTop": 1},
}
_FIXED_HOSTS = {"Television": ("TVStand",), "DeskLamp": ("Desk", "SideTable", "Dresser"),
                "Microwave": ("CounterTop",), "Faucet": ("Sink",), "Toaster": ("CounterTop",),
                "CoffeeMachine": ("CounterTop",)}


def generate_scene(seed: int, size_class: str) -> Scene:
    """Deterministic house for ``(seed, size_class)``."""
    if size_class not in SIZE_CLASSES:
        raise ValueError(f"size_class must be one of {SIZE_CLASSES}, got {size_class!r}")
    code = SIZE_CLASSES.index(size_class)
    for attempt in range(MAX_ATTEMPTS):
        rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, code, attempt])
        scene = _attempt(rng, int(seed), size_class)
        if scene is not None and not check_scene(scene):
            return scene
    raise GenerationError(f"no valid scene for seed={seed} size={size_class}")


# ---------------------------------------------------------------------------
# layout

def _house_dims(rng, size_class):
    if size_class == "small":
        side = rng.uniform(6.0, 10.0)
    else:
        side = rng.uniform(10.05, 16.0)
    other = side * rng.uniform(0.6, 1.0)
    long_cells = int(np.floor(side / CELL))
    short_cells = max(int(np.floor(other / CELL)), 2 * MIN_ROOM + 3)
    if rng.random() < 0.5:
        return short_cells, long_cells
    return long_cells, short_cells


def _split_rooms(rng, h, w, n_rooms):
    """BSP over the interior; returns room rects, wall mask and door rects."""
    walls = np.zeros((h, w), dtype=bool)
    walls[0, :] = walls[-1, :] = walls[:, 0] = walls[:, -1] = True
    rects = [(1, 1, h - 1, w - 1)]
    doors = []
    while len(rects) < n_rooms:
        order = sorted(range(len(rects)), key=lambda i: -_area(rects[i]))
        done = False
        for i in order:
            split = _try_split(rng, rects[i], doors)
            if split is None:
                continue
            a, b, wall, door = split
            r0, c0, r1, c1 = wall
            walls[r0:r1, c0:c1] = True
            d0, e0, d1, e1 = door
            walls[d0:d1, e0:e1] = False
            doors.append(door)
            rects[i:i + 1] = [a, b]
            done = True
            break
        if not done:
            break
    return rects, walls, doors


def _area(rect):
    return (rect[2] - rect[0]) * (rect[3] - rect[1])


def _try_split(rng, rect, doors):
    r0, c0, r1, c1 = rect
    h, w = r1 - r0, c1 - c0
    vertical = w >= h if abs(w - h) > 10 else bool(rng.random() < 0.5)
    for axis_vertical in (vertical, not vertical):
        length = w if axis_vertical else h
        lo, hi = MIN_ROOM, length - MIN_ROOM - 1
        if hi < lo:
            continue
        for _ in range(20):
            pos = int(rng.integers(lo, hi + 1))
            if axis_vertical:
                col = c0 + pos
                wall = (r0, col, r1, col + 1)
                # the new wall must not cut across an existing door gap
                if any(d[1] - 2 <= col < d[3] + 2 and d[0] <= r1 and d[2] >= r0 for d in doors):
                    continue
                span = h
                start = int(rng.integers(r0 + DOOR_MARGIN, r0 + span - DOOR_MARGIN - DOOR + 1))
                door = (start, col, start + DOOR, col + 1)
                a, b = (r0, c0, r1, col), (r0, col + 1, r1, c1)
            else:
                row = r0 + pos
                wall = (row, c0, row + 1, c1)
                if any(d[0] - 2 <= row < d[2] + 2 and d[1] <= c1 and d[3] >= c0 for d in doors):
                    continue
                span = w
                start = int(rng.integers(c0 + DOOR_MARGIN, c0 + span - DOOR_MARGIN - DOOR + 1))
                door = (row, start, row + 1, start + DOOR)
                a, b = (r0, c0, row, c1), (row + 1, c0, r1, c1)
            return a, b, wall, door
    return None


def _label_rooms(rng, rects):
    order = sorted(range(len(rects)), key=lambda i: _area(rects[i]))
    labels = [None] * len(rects)
    pool = list(range(len(rects)))
    if len(rects) >= 3:
        labels[order[0]] = "bathroom"
        pool.remove(order[0])
    kitchen = pool[int(rng.integers(len(pool)))]
    labels[kitchen] = "kitchen"
    pool.remove(kitchen)
    rest = ["livingroom", "bedroom"]
    rng.shuffle(rest)
    for k, i in enumerate(pool):
        labels[i] = rest[k % 2] if k < 2 else ("bedroom", "livingroom", "bathroom")[k % 3]
    return labels


# ---------------------------------------------------------------------------
# furniture

def _snap(lo, hi, start, size):
    """Slide a span flush to a wall when the gap would be too narrow to walk; None if impossible."""
    if 0 < start - lo < WALL_GAP:
        start = lo
    if 0 < hi - (start + size) < WALL_GAP:
        start = hi - size
    return None if 0 < start - lo < WALL_GAP else start


def _furniture_rect(rng, room_rect, cat, free_standing):
    depth_m, width_m = tx.info(cat).size
    depth = max(int(round(depth_m / CELL)), 2)
    width = max(int(round(width_m / CELL)), 2)
    r0, c0, r1, c1 = room_rect
    if free_standing:
        facing = int(rng.choice([0, 90, 180, 270]))
        rows, cols = (depth, width) if facing in (90, 270) else (width, depth)
        m = WALL_GAP
        if r1 - r0 - 2 * m < rows or c1 - c0 - 2 * m < cols:
            return None
        rr = int(rng.integers(r0 + m, r1 - m - rows + 1))
        cc = int(rng.integers(c0 + m, c1 - m - cols + 1))
        return (rr, cc, rr + rows, cc + cols), facing
    side = int(rng.integers(4))
    if side == 0:    # north wall, facing south
        if c1 - c0 < width:
            return None
        cc = _snap(c0, c1, int(rng.integers(c0, c1 - width + 1)), width)
        if cc is None:
            return None
        return (r0, cc, r0 + depth, cc + width), 270
    if side == 1:    # south wall, facing north
        if c1 - c0 < width:
            return None
        cc = _snap(c0, c1, int(rng.integers(c0, c1 - width + 1)), width)
        if cc is None:
            return None
        return (r1 - depth, cc, r1, cc + width), 90
    if side == 2:    # west wall, facing east
        if r1 - r0 < width:
            return None
        rr = _snap(r0, r1, int(rng.integers(r0, r1 - width + 1)), width)
        if rr is None:
            return None
        return (rr, c0, rr + width, c0 + depth), 0
    if r1 - r0 < width:  # east wall, facing west
        return None
    rr = _snap(r0, r1, int(rng.integers(r0, r1 - width + 1)), width)
    if rr is None:
        return None
    return (rr, c1 - depth, rr + width, c1), 180


def _wall_gaps_ok(rect, room_rect) -> bool:
    gaps = (rect[0] - room_rect[0], rect[1] - room_rect[1], room_rect[2] - rect[2], room_rect[3] - rect[3])
    return all(g == 0 or g >= WALL_GAP for g in gaps)


def _expand(rect, m):
    return (rect[0] - m, rect[1] - m, rect[2] + m, rect[3] + m)


def _overlaps(a, b):
    return a[0] < b[2] and b[0] < a[2] and a[1] < b[3] and b[1] < a[3]


def _place_furniture(rng, room, cat, taken, doors, tries=60):
    free_standing = cat in ("CoffeeTable", "DiningTable") and rng.random() < 0.5
    for _ in range(tries):
        got = _furniture_rect(rng, room.rect, cat, free_standing)
        if got is None:
            free_standing = False
            continue
        rect, facing = got
        if not _wall_gaps_ok(rect, room.rect):
            continue
        if any(_overlaps(_expand(rect, FURNITURE_GAP), t) for t in taken):
            continue
        if any(_overlaps(_expand(d, DOOR_CLEARANCE), rect) for d in doors):
            continue
        return rect, facing
    return None


def _make(obj_id, cat, rect, facing, z, room_id, parent=None, **state):
    r0, c0, r1, c1 = rect
    return ObjectInstance(id=obj_id, category=cat, cell=((r0 + r1) // 2, (c0 + c1) // 2),
                          facing=facing, footprint=rect, z=z,
                          affordances=tx.info(cat).affordances, room=room_id,
                          parent_receptacle=parent, **state)


# ---------------------------------------------------------------------------
# assembly

def _attempt(rng, seed, size_class):
    h, w = _house_dims(rng, size_class)
    n_rooms = int(rng.integers(2, 4)) if size_class == "small" else int(rng.integers(3, 7))
    rects, walls, doors = _split_rooms(rng, h, w, n_rooms)
    if size_class == "large" and len(rects) < 3:
        return None
    labels = _label_rooms(rng, rects)
    rooms = tuple(Room(i, labels[i], rects[i]) for i in range(len(rects)))

    objects = []
    next_id = [2]

    def new_id():
        next_id[0] += 1
        return next_id[0] - 1

    taken = []
    for room in rooms:
        required, optional = _FURNITURE[room.label]
        wanted = list(required) + [c for c, p in optional if rng.random() < p]
        for k, cat in enumerate(wanted):
            got = _place_furniture(rng, room, cat, taken, doors)
            if got is None:
                if k < len(required):
                    return None
                continue
            rect, facing = got
            taken.append(rect)
            state = {"is_on": False} if tx.has(cat, tx.TOGGLEABLE) else {}
            objects.append(_make(new_id(), cat, rect, facing, (0.0, tx.info(cat).height), room.id,
                                 **state))

    scene = Scene(seed, size_class, CELL, w, h, rooms, tuple(objects), walls, tuple(doors))

    for room in rooms:
        for cat, hosts in _room_items(rng, room.label):
            scene = _place_item(rng, scene, room, cat, hosts, new_id)
            if scene is None:
                return None
    return scene


def _room_items(rng, label):
    """(category, host preference) pairs; a host None means required-to-fail."""
    items = []
    if label == "kitchen":
        items.append(("Microwave", _FIXED_HOSTS["Microwave"]))
        items.append(("Faucet", _FIXED_HOSTS["Faucet"]))
        for cat, p in (("Toaster", 0.4), ("CoffeeMachine", 0.4)):
            if rng.random() < p:
                items.append((cat, _FIXED_HOSTS[cat]))
        foods = list(tx.FOODS)
        rng.shuffle(foods)
        for cat in foods[: int(rng.integers(2, 5))]:
            items.append((cat, "food"))
        if rng.random() < 0.9:
            items.append(("Knife", "kitchenware"))
        ware = list(_KITCHENWARE)
        rng.shuffle(ware)
        for cat in ware[: int(rng.integers(3, 8))]:
            items.append((cat, "kitchenware"))
        return items
    if label == "bathroom":
        items.append(("Faucet", _FIXED_HOSTS["Faucet"]))
    if label == "livingroom" and rng.random() < 0.8:
        items.append(("Television", _FIXED_HOSTS["Television"]))
    if label in ("bedroom", "livingroom") and rng.random() < 0.5:
        items.append(("DeskLamp", _FIXED_HOSTS["DeskLamp"]))
    pool = [c for c in tx.OBJECT_CATEGORIES
            if tx.info(c).placement == "surface" and label in tx.info(c).rooms
            and c not in _FIXED_HOSTS and c not in tx.FOODS and c not in _KITCHENWARE
            and c != "Knife"]
    rng.shuffle(pool)
    for cat in pool[: int(rng.integers(2, 6))]:
        items.append((cat, "other"))
    return items


def _place_item(rng, scene, room, cat, hosts, new_id):
    """Place ``cat`` on a random host in ``room``; returns the new scene.

    Required fixtures (tuple hosts) make the attempt fail when no host fits;
    other items are silently skipped.
    """
    fixed = isinstance(hosts, tuple)
    weights = {h: 1 for h in hosts} if fixed else _HOSTS[hosts]
    cands = [o for o in scene.objects
             if o.room == room.id and o.parent_receptacle is None and o.category in weights
             and o.has(tx.RECEPTACLE)]
    if not fixed and not tx.has(cat, tx.RECEPTACLE) and rng.random() < 0.2:
        # occasionally nest inside a small open-top receptacle already placed
        cands += [o for o in scene.objects if o.room == room.id and o.category in ("Bowl", "Plate", "Pan", "Pot")
                  and scene.depth(o) < 2]
    if not cands:
        return None if fixed else scene
    p = np.array([weights.get(o.category, 1) for o in cands], dtype=float)
    order = rng.choice(len(cands), size=len(cands), replace=False, p=p / p.sum())
    for i in order:
        host = cands[int(i)]
        spot = find_spot(scene, host, cat)
        if spot is None:
            continue
        state = {}
        if tx.has(cat, tx.TOGGLEABLE):
            state["is_on"] = False
        obj = _make(new_id(), cat, spot, host.facing, content_z(scene, host, cat), room.id,
                    parent=host.id, **state)
        return scene.with_objects(scene.objects + (obj,))
    return None if fixed else scene


# ---------------------------------------------------------------------------
# validation

def _approach_band(scene, obj):
    """Free cells whose distance to ``obj``'s footprint lies in the approach band."""
    lo, hi = APPROACH
    reach = int(np.ceil(hi / scene.cell_size)) + 1
    r0, c0, r1, c1 = obj.footprint
    R0, C0 = max(r0 - reach, 0), max(c0 - reach, 0)
    R1, C1 = min(r1 + reach, scene.height), min(c1 + reach, scene.width)
    rr, cc = np.mgrid[R0:R1, C0:C1]
    dr = np.maximum(np.maximum(r0 - rr, rr - (r1 - 1)), 0)
    dc = np.maximum(np.maximum(c0 - cc, cc - (c1 - 1)), 0)
    d = np.hypot(dr, dc) * scene.cell_size
    return (R0, C0, R1, C1), (d >= lo) & (d <= hi)


def _front_gap(fp, rec) -> int:
    """Cells between footprint ``fp`` and the facing edge of receptacle ``rec``."""
    r0, c0, r1, c1 = fp
    a0, b0, a1, b1 = rec.footprint
    return {90: r0 - a0, 270: a1 - r1, 0: b1 - c1}.get(rec.facing, c0 - b0)


def check_scene(scene: Scene) -> list:
    """Constraint violations of a generated scene (empty list when valid)."""
    problems = []
    side = scene.side_length_m
    if scene.size_class == "small" and not side <= 10.0:
        problems.append(f"small scene side {side:.2f} m exceeds 10 m")
    if scene.size_class == "large":
        if not 10.0 < side <= 16.0:
            problems.append(f"large scene side {side:.2f} m outside (10, 16]")
        if len(scene.rooms) < 3:
            problems.append("large scene needs at least 3 rooms")
    kitchens = [r for r in scene.rooms if r.label == "kitchen"]
    if not kitchens:
        problems.append("no kitchen")
    for k in kitchens:
        cats = [o.category for o in scene.objects if o.room == k.id]
        if not any(tx.has(c, tx.RECEPTACLE) for c in cats):
            problems.append("kitchen lacks a receptacle")
        if not any(tx.has(c, tx.TOGGLEABLE) and not tx.has(c, tx.PICKUPABLE) for c in cats):
            problems.append("kitchen lacks an appliance")
        if sum(c in tx.FOODS for c in cats) < 2:
            problems.append("kitchen has fewer than two food items")
    for o in scene.objects:
        if o.parent_receptacle is None:
            room = scene.rooms[o.room]
            r0, c0, r1, c1 = o.footprint
            a0, b0, a1, b1 = room.rect
            if not (a0 <= r0 and r1 <= a1 and b0 <= c0 and c1 <= b1):
                problems.append(f"object {o.id} leaves its room")
        else:
            p = scene.obj(o.parent_receptacle)
            r0, c0, r1, c1 = o.footprint
            a0, b0, a1, b1 = p.footprint
            if not (a0 <= r0 and r1 <= a1 and b0 <= c0 and c1 <= b1):
                problems.append(f"object {o.id} overhangs its receptacle")
            elif p.has(tx.OPENABLE) and _front_gap(o.footprint, p) > 0:
                problems.append(f"object {o.id} sits behind the opening of {p.id}")
    if problems:
        return problems

    blocked = scene.blocked
    floor = [o for o in scene.objects if o.parent_receptacle is None]
    bands = [_approach_band(scene, o) for o in floor]
    for a in range(STRIDE):
        for b in range(STRIDE):
            main = main_component_mask(blocked, (a, b), STRIDE)
            for room in scene.rooms:
                r0, c0, r1, c1 = room.rect
                if not main[r0:r1, c0:c1].any():
                    problems.append(f"room {room.id} unreachable on lattice {(a, b)}")
            for o, ((R0, C0, R1, C1), band) in zip(floor, bands):
                if not (main[R0:R1, C0:C1] & band).any():
                    problems.append(f"object {o.id} ({o.category}) unreachable on lattice {(a, b)}")
            if problems:
                return problems
    return problems
