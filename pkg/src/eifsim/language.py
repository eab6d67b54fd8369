"""Templated instruction and step wording shared by task generation and planners."""
from __future__ import annotations

import json
import re
from functools import lru_cache
from importlib import resources

from .goals import GoalCondition, Predicate
from .scene import taxonomy as tx

# subgoal kinds and the predicate each one establishes
SUBGOAL_PREDICATE = {
    "slice": "sliced",
    "put": "in",
    "heat": "heated",
    "turn_on": "on",
    "open": "open",
    "pickup": "held",
}

STEP_VERBS = {
    "find": ("Find the {a}", None),
    "pickup": ("Pick up the {a}", "PickUp"),
    "place": ("Put the {h} {prep} the {a}", "Place"),
    "open": ("Open the {a}", "Open"),
    "close": ("Close the {a}", "Close"),
    "toggle_on": ("Turn on the {a}", "ToggleOn"),
    "toggle_off": ("Turn off the {a}", "ToggleOff"),
    "slice": ("Slice the {a}", "Slice"),
}
PRIMITIVE_VERB = {prim: verb for verb, (_, prim) in STEP_VERBS.items() if prim}

_IN_CATEGORIES = {"Sink", "GarbageCan", "Bathtub", "Box"}


@lru_cache(maxsize=None)
def load_data(name: str) -> dict:
    with resources.files("eifsim.data").joinpath(name).open(encoding="utf-8") as fh:
        return json.load(fh)


def templates() -> dict:
    return load_data("templates.json")


def role_classes() -> list:
    return [list(c) for c in load_data("roles.json")["classes"]]


def preposition(receptacle: str) -> str:
    if receptacle in _IN_CATEGORIES or tx.has(receptacle, tx.OPENABLE) or tx.has(receptacle, tx.PICKUPABLE):
        return "in"
    return "on"


def phrase(category: str) -> str:
    return tx.display_name(category)


def step_body(verb: str, target: str, held: str | None = None) -> str:
    pattern, _ = STEP_VERBS[verb]
    return pattern.format(a=phrase(target), h=phrase(held) if held else "", prep=preposition(target))


def subgoal_predicate(subgoal: tuple) -> Predicate:
    kind, *args = subgoal
    return Predicate(SUBGOAL_PREDICATE[kind], tuple(args))


def subgoals_goal(subgoals) -> GoalCondition:
    preds = []
    for sg in subgoals:
        p = subgoal_predicate(sg)
        if p not in preds:
            preds.append(p)
    return GoalCondition(tuple(preds))


def clause_text(template_text: str, subgoal: tuple) -> str:
    kind, *args = subgoal
    fields = {"a": phrase(args[0])}
    if len(args) > 1:
        fields["b"] = phrase(args[1])
        fields["prep"] = preposition(args[1])
    return template_text.format(**fields)


# ---------------------------------------------------------------------------
# parsing

@lru_cache(maxsize=None)
def _phrase_table() -> dict:
    return {phrase(c): c for c in tx.OBJECT_CATEGORIES}


@lru_cache(maxsize=None)
def _clause_patterns() -> list:
    out = []
    for entry in templates()["short"] + templates()["substitution"]:
        kind = entry.get("kind", "put")
        for text in entry["texts"]:
            rx = re.escape(text)
            rx = rx.replace(re.escape("{a}"), r"(?P<a>[a-z ]+?)")
            rx = rx.replace(re.escape("{b}"), r"(?P<b>[a-z ]+?)")
            rx = rx.replace(re.escape("{prep}"), r"(?:in|on)")
            out.append((kind, re.compile("^" + rx + "$", re.IGNORECASE)))
    return out


def _connector_regex():
    conns = sorted(templates()["long"]["connectors"], key=len, reverse=True)
    return re.compile("|".join(re.escape(c) for c in conns), re.IGNORECASE)


def parse_clause(text: str):
    """One templated clause -> subgoal tuple, or None."""
    text = text.strip().rstrip(".")
    table = _phrase_table()
    for kind, rx in _clause_patterns():
        m = rx.match(text)
        if not m:
            continue
        groups = m.groupdict()
        a = table.get(groups["a"].lower().removeprefix("a ").strip())
        if a is None:
            continue
        if kind == "put":
            b = table.get((groups.get("b") or "").lower().strip())
            if b is None:
                continue
            return ("put", a, b)
        return (kind, a)
    return None


def parse_instruction(text: str) -> list:
    """Return candidate subgoal lists for an instruction (several for abstract ones)."""
    norm = text.strip().rstrip(".")
    for entry in templates()["abstract"]:
        if entry["text"].lower() == norm.lower():
            return [[tuple(sg) for sg in recipe] for recipe in entry["recipes"]]
    clauses = _connector_regex().split(norm)
    subgoals = []
    for clause in clauses:
        sg = parse_clause(clause)
        if sg is None:
            return []
        subgoals.append(sg)
    return [subgoals]
