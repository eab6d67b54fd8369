"""Fixed object taxonomy for the procedural household world."""
from __future__ import annotations

import re
from dataclasses import dataclass

PICKUPABLE = "pickupable"
RECEPTACLE = "receptacle"
OPENABLE = "openable"
TOGGLEABLE = "toggleable"
SLICEABLE = "sliceable"
HEATABLE = "heatable"
AFFORDANCES = frozenset({PICKUPABLE, RECEPTACLE, OPENABLE, TOGGLEABLE, SLICEABLE, HEATABLE})

ROOM_LABELS = ("kitchen", "livingroom", "bedroom", "bathroom")

WALL = "Wall"
WALL_INSTANCE_ID = 1
BACKGROUND = 0


class UnknownCategory(KeyError):
    pass


@dataclass(frozen=True)
class CategoryInfo:
    name: str
    id: int
    placement: str                 # "floor" | "surface" | "structural"
    affordances: frozenset
    size: tuple                    # floor: (depth m, width m); surface: (rows, cols) cells
    height: float                  # meters
    rooms: tuple

    @property
    def phrase(self) -> str:
        return display_name(self.name)


def display_name(category: str) -> str:
    """``CounterTop`` -> ``counter top``; ``TVStand`` -> ``tv stand``."""
    return " ".join(re.findall(r"[A-Z]+(?![a-z])|[A-Z][a-z]*", category)).lower()


P, R, O, T, S, H = PICKUPABLE, RECEPTACLE, OPENABLE, TOGGLEABLE, SLICEABLE, HEATABLE
K, LR, BR, BA = "kitchen", "livingroom", "bedroom", "bathroom"

# name, affordances, size, height, rooms
_FLOOR = [
    ("Fridge", {R, O}, (0.7, 0.7), 1.8, (K,)),
    ("CounterTop", {R}, (0.6, 1.6), 0.9, (K,)),
    ("Sink", {R}, (0.6, 0.8), 0.9, (K, BA)),
    ("Stove", {R, T}, (0.6, 0.7), 0.9, (K,)),
    ("Cabinet", {R, O}, (0.5, 0.8), 0.9, (K, BA)),
    ("DiningTable", {R}, (0.9, 1.4), 0.75, (K, LR)),
    ("GarbageCan", {R}, (0.35, 0.35), 0.6, (K, BA)),
    ("Bed", {R}, (1.9, 1.4), 0.55, (BR,)),
    ("Dresser", {R, O}, (0.5, 1.0), 0.9, (BR,)),
    ("Desk", {R}, (0.6, 1.2), 0.75, (BR, LR)),
    ("SideTable", {R}, (0.45, 0.45), 0.6, (BR, LR)),
    ("Sofa", {R}, (0.9, 2.0), 0.8, (LR,)),
    ("CoffeeTable", {R}, (0.6, 1.0), 0.45, (LR,)),
    ("TVStand", {R}, (0.45, 1.2), 0.5, (LR,)),
    ("Shelf", {R}, (0.4, 1.0), 1.6, (LR, BR)),
    ("ArmChair", {R}, (0.8, 0.8), 0.8, (LR,)),
    ("Toilet", {R}, (0.6, 0.4), 0.4, (BA,)),
    ("Bathtub", {R}, (0.75, 1.6), 0.55, (BA,)),
    ("FloorLamp", {T}, (0.3, 0.3), 1.6, (LR, BR)),
]

_SURFACE = [
    # appliances and fixtures (not pickupable)
    ("Microwave", {R, O, T}, (8, 10), 0.3, (K,)),
    ("Toaster", {T}, (4, 6), 0.2, (K,)),
    ("CoffeeMachine", {R, T}, (5, 5), 0.35, (K,)),
    ("Faucet", {T}, (2, 2), 0.3, (K, BA)),
    ("Television", {T}, (4, 20), 0.6, (LR,)),
    ("DeskLamp", {T}, (3, 3), 0.4, (BR, LR)),
    # food
    ("Tomato", {P, S, H}, (2, 2), 0.08, (K,)),
    ("Lettuce", {P, S}, (3, 3), 0.15, (K,)),
    ("Potato", {P, S, H}, (2, 2), 0.08, (K,)),
    ("Egg", {P, H}, (2, 2), 0.06, (K,)),
    ("Apple", {P, S, H}, (2, 2), 0.08, (K,)),
    ("Bread", {P, S, H}, (3, 5), 0.12, (K,)),
    # kitchenware
    ("Knife", {P}, (2, 5), 0.04, (K,)),
    ("Fork", {P}, (1, 4), 0.04, (K,)),
    ("Spoon", {P}, (1, 4), 0.04, (K,)),
    ("Spatula", {P}, (2, 5), 0.04, (K,)),
    ("Mug", {P, R}, (2, 2), 0.1, (K,)),
    ("Cup", {P, R}, (2, 2), 0.12, (K,)),
    ("Bowl", {P, R}, (3, 3), 0.08, (K,)),
    ("Plate", {P, R}, (4, 4), 0.04, (K,)),
    ("Pan", {P, R}, (5, 5), 0.06, (K,)),
    ("Pot", {P, R}, (5, 5), 0.15, (K,)),
    ("Bottle", {P}, (2, 2), 0.25, (K,)),
    ("Kettle", {P, T}, (3, 3), 0.2, (K,)),
    ("SaltShaker", {P}, (2, 2), 0.1, (K,)),
    ("PepperShaker", {P}, (2, 2), 0.1, (K,)),
    ("DishSponge", {P}, (2, 2), 0.04, (K,)),
    ("SoapBottle", {P}, (2, 2), 0.18, (K, BA)),
    # living and sleeping
    ("Book", {P, O}, (4, 3), 0.05, (LR, BR)),
    ("Pen", {P}, (1, 3), 0.04, (BR,)),
    ("Pencil", {P}, (1, 3), 0.04, (BR,)),
    ("CellPhone", {P, T}, (2, 3), 0.04, (BR, LR)),
    ("RemoteControl", {P}, (1, 4), 0.04, (LR,)),
    ("Pillow", {P}, (8, 10), 0.15, (BR, LR)),
    ("Laptop", {P, O, T}, (6, 7), 0.05, (BR, LR)),
    ("KeyChain", {P}, (2, 2), 0.04, (BR, LR)),
    ("Watch", {P}, (2, 2), 0.04, (BR,)),
    ("CreditCard", {P}, (2, 2), 0.04, (BR, LR)),
    ("Newspaper", {P}, (6, 6), 0.04, (LR,)),
    ("Vase", {P}, (3, 3), 0.3, (LR,)),
    ("Statue", {P}, (3, 3), 0.3, (LR,)),
    ("Candle", {P}, (2, 2), 0.12, (LR, BA)),
    ("AlarmClock", {P}, (2, 3), 0.1, (BR,)),
    ("Box", {P, R}, (6, 6), 0.25, (LR,)),
    # bathroom
    ("SoapBar", {P}, (2, 2), 0.04, (BA,)),
    ("Towel", {P}, (4, 6), 0.05, (BA,)),
    ("ToiletPaper", {P}, (2, 2), 0.12, (BA,)),
    ("SprayBottle", {P}, (2, 2), 0.25, (BA,)),
    ("Cloth", {P}, (4, 4), 0.04, (BA, BR)),
]


def _build() -> dict[str, CategoryInfo]:
    table: dict[str, CategoryInfo] = {
        WALL: CategoryInfo(WALL, 1, "structural", frozenset(), (0, 0), 2.5, ()),
    }
    next_id = 2
    for placement, rows in (("floor", _FLOOR), ("surface", _SURFACE)):
        for name, aff, size, height, rooms in rows:
            table[name] = CategoryInfo(name, next_id, placement, frozenset(aff), size, height, rooms)
            next_id += 1
    return table


CATEGORIES: dict[str, CategoryInfo] = _build()
CATEGORY_NAMES: tuple = tuple(CATEGORIES)
OBJECT_CATEGORIES: tuple = tuple(n for n in CATEGORY_NAMES if n != WALL)
CATEGORY_BY_ID: dict[int, str] = {c.id: c.name for c in CATEGORIES.values()}
NUM_CATEGORY_IDS = max(CATEGORY_BY_ID) + 1

FOODS = tuple(n for n in OBJECT_CATEGORIES if CATEGORIES[n].rooms == (K,)
              and SLICEABLE in CATEGORIES[n].affordances or n == "Egg")


def info(category: str) -> CategoryInfo:
    try:
        return CATEGORIES[category]
    except KeyError:
        raise UnknownCategory(category) from None


def category_id(category: str) -> int:
    return info(category).id


def has(category: str, affordance: str) -> bool:
    return affordance in info(category).affordances


def mentioned_categories(text: str) -> list[str]:
    """Taxonomy categories whose name appears as a phrase in ``text``."""
    low = " " + re.sub(r"[^a-z]+", " ", text.lower()) + " "
    hits = []
    for name in OBJECT_CATEGORIES:
        phrases = {display_name(name), name.lower()}
        if any(f" {p} " in low for p in phrases):
            hits.append(name)
    return hits
