"""Task corpus: templated instructions, goals, grounded plans and SFT records."""
from __future__ import annotations

import json
import re
import string
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

import numpy as np

from . import language as lang
from .goals import GoalCondition
from .planner import PlanStep, make_step, terminal_step
from .scene import taxonomy as tx
from .scene.model import (PreconditionViolated, Scene, apply_effect, find_spot, goal_satisfied)

TASK_CATEGORIES = ("target_specific_short", "target_specific_long", "abstract")
LONG_PLAN = 15
SIMILARITY_THRESHOLD = 0.9
MIXED_PROPORTIONS = {"target_specific_short": 1386, "target_specific_long": 333, "abstract": 332}
TASK_SCHEMA_VERSION = 1


class TemplateUnsatisfiable(ValueError):
    pass


@dataclass
class TaskSpec:
    id: str
    instruction: str
    category: str
    goal: GoalCondition
    gt_plan: list
    scene_seed: int
    size_class: str
    kind: str = ""
    subgoals: list = field(default_factory=list)
    expert_actions: Optional[int] = None
    expert_path_m: Optional[float] = None

    def to_dict(self) -> dict:
        return {"id": self.id, "instruction": self.instruction, "category": self.category,
                "goal": self.goal.to_list(), "gt_plan": [s.to_dict() for s in self.gt_plan],
                "scene_seed": self.scene_seed, "size_class": self.size_class, "kind": self.kind,
                "subgoals": [list(s) for s in self.subgoals],
                "expert_actions": self.expert_actions, "expert_path_m": self.expert_path_m}

    @classmethod
    def from_dict(cls, d: dict) -> "TaskSpec":
        return cls(d["id"], d["instruction"], d["category"], GoalCondition.from_list(d["goal"]),
                   [PlanStep.from_dict(s) for s in d["gt_plan"]], d["scene_seed"], d["size_class"],
                   d.get("kind", ""), [tuple(s) for s in d.get("subgoals", [])],
                   d.get("expert_actions"), d.get("expert_path_m"))


def save_tasks(tasks: Iterable[TaskSpec], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([t.to_dict() for t in tasks], fh, indent=1, sort_keys=True)


def load_tasks(path) -> list:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if isinstance(data, list):
        items = data
    else:
        if data.get("schema_version") != TASK_SCHEMA_VERSION:
            raise ValueError(f"unsupported task schema version {data.get('schema_version')}")
        items = data["tasks"]
    return [TaskSpec.from_dict(d) for d in items]


# ---------------------------------------------------------------------------
# grounded plan synthesis

class _Grounder:
    """Symbolic executor that turns subgoals into grounded steps."""

    def __init__(self, scene: Scene):
        self.scene = scene
        self.steps: list = []

    @property
    def held(self):
        return self.scene.held_object()

    def _apply(self, prim, target_id):
        held = self.held
        self.scene = apply_effect(self.scene, prim, target_id, held.id if held else None)

    def _emit(self, verb, target, held_cat=None):
        o = self.scene.obj(target)
        if not self.steps or self.steps[-1].target_id != target:
            self.steps.append(make_step(len(self.steps) + 1, "find", o.category, target_id=target))
        self.steps.append(make_step(len(self.steps) + 1, verb, o.category, held_cat, target_id=target))

    def interact(self, verb, target):
        _, prim = lang.STEP_VERBS[verb]
        held = self.held
        held_cat = held.category if held is not None and verb == "place" else None
        self._emit(verb, target, held_cat)
        self._apply(prim, target)

    def pick(self, category, exclude=()):
        cands = [o for o in self.scene.instances(category) if o.id not in exclude and not o.is_held]
        if not cands:
            raise TemplateUnsatisfiable(f"scene has no {category}")
        return cands

    def reveal(self, obj):
        for anc in reversed(self.scene.ancestors(obj)):
            if anc.has(tx.OPENABLE) and not anc.is_open:
                self.interact("open", anc.id)

    def acquire(self, category):
        held = self.held
        if held is not None and held.category == category:
            return held.id
        cands = [o for o in self.pick(category) if o.has(tx.PICKUPABLE) and not self.scene.children(o.id)]
        if not cands:
            raise TemplateUnsatisfiable(f"no free {category} to pick up")
        item = cands[0]
        if held is not None:
            self.stash(held, near=item)
        self.reveal(item)
        self.interact("pickup", item.id)
        return item.id

    def stash(self, held, near):
        surfaces = [o for o in self.scene.objects
                    if o.parent_receptacle is None and o.has(tx.RECEPTACLE) and not o.has(tx.OPENABLE)
                    and find_spot(self.scene, o, held.category) is not None]
        if not surfaces:
            raise TemplateUnsatisfiable("nowhere to put down the held object")
        pref = {"CounterTop": 0, "DiningTable": 1, "CoffeeTable": 2, "Desk": 3, "SideTable": 4}
        surfaces.sort(key=lambda o: (o.room != self.scene.obj(near.id).room, pref.get(o.category, 9), o.id))
        self.interact("place", surfaces[0].id)

    def receptacle_for(self, category, item_category):
        cands = [o for o in self.pick(category) if o.has(tx.RECEPTACLE) and self.scene.is_visible(o)]
        for o in cands:
            if find_spot(self.scene, o, item_category) is not None:
                return o
        raise TemplateUnsatisfiable(f"no {category} with room for {item_category}")

    def run(self, subgoals):
        for kind, *args in subgoals:
            if kind == "slice":
                self.acquire("Knife")
                target = self._visible_target(args[0], tx.SLICEABLE, lambda o: not o.is_sliced)
                self.interact("slice", target.id)
            elif kind == "pickup":
                self.acquire(args[0])
            elif kind == "put":
                self.acquire(args[0])
                rec = self.receptacle_for(args[1], args[0])
                if rec.has(tx.OPENABLE) and not rec.is_open:
                    self.interact("open", rec.id)
                self.interact("place", rec.id)
            elif kind == "heat":
                self.acquire(args[0])
                mw = self.receptacle_for("Microwave", args[0])
                if not mw.is_open:
                    self.interact("open", mw.id)
                self.interact("place", mw.id)
                self.interact("close", mw.id)
                self.interact("toggle_on", mw.id)
                self.interact("toggle_off", mw.id)
            elif kind == "turn_on":
                target = self._visible_target(args[0], tx.TOGGLEABLE, lambda o: not o.is_on)
                self.interact("toggle_on", target.id)
            elif kind == "open":
                target = self._visible_target(args[0], tx.OPENABLE, lambda o: not o.is_open)
                self.interact("open", target.id)
            else:
                raise TemplateUnsatisfiable(f"unknown subgoal kind {kind}")
        return self.steps

    def _visible_target(self, category, affordance, ok):
        cands = [o for o in self.pick(category) if o.has(affordance) and ok(o)]
        if not cands:
            raise TemplateUnsatisfiable(f"no usable {category}")
        target = cands[0]
        self.reveal(target)
        return target


def synthesize_plan(scene: Scene, subgoals) -> list:
    """Grounded step list achieving ``subgoals`` (terminal step not included)."""
    try:
        return _Grounder(scene).run(subgoals)
    except PreconditionViolated as err:
        raise TemplateUnsatisfiable(str(err)) from err


def validate_feasibility(task: TaskSpec, scene: Scene) -> bool:
    """Symbolically execute the plan with an omniscient navigator."""
    for cat in task.goal.categories:
        if not scene.instances(cat):
            return False
    state = scene
    for step in task.gt_plan:
        if step.terminal:
            break
        if step.target_id is None or step.target_id not in state.by_id:
            return False
        if state.obj(step.target_id).category != step.target:
            return False
        if step.primitive_hint is None:
            if not state.is_visible(state.obj(step.target_id)):
                return False
            continue
        held = state.held_object()
        try:
            state = apply_effect(state, step.primitive_hint, step.target_id, held.id if held else None)
        except PreconditionViolated:
            return False
    return goal_satisfied(state, task.goal)


# ---------------------------------------------------------------------------
# similarity filter

_ARTICLES = {"a", "an", "the"}
_PUNCT = str.maketrans("", "", string.punctuation)


def normalize_words(text: str) -> list:
    return [w for w in text.lower().translate(_PUNCT).split() if w not in _ARTICLES]


def edit_similarity(a: str, b: str) -> float:
    """1 - word-level Levenshtein distance / longer length, after normalization."""
    x, y = normalize_words(a), normalize_words(b)
    if not x and not y:
        return 1.0
    prev = list(range(len(y) + 1))
    for i, wx in enumerate(x, 1):
        cur = [i] + [0] * len(y)
        for j, wy in enumerate(y, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (wx != wy))
        prev = cur
    return 1.0 - prev[-1] / max(len(x), len(y))


def is_near_duplicate(text: str, kept: Iterable[str], threshold: float = SIMILARITY_THRESHOLD) -> bool:
    return any(edit_similarity(text, k) > threshold for k in kept)


# ---------------------------------------------------------------------------
# candidate subgoals

def _slot_candidates(scene: Scene, slot: str) -> list:
    cats = sorted(scene.categories())
    if slot == "sliceable":
        return [c for c in cats if tx.has(c, tx.SLICEABLE)]
    if slot == "heatable":
        return [c for c in cats if tx.has(c, tx.HEATABLE)] if "Microwave" in cats else []
    if slot == "pickupable":
        return [c for c in cats if tx.has(c, tx.PICKUPABLE)]
    if slot == "receptacle":
        return [c for c in cats if tx.has(c, tx.RECEPTACLE)]
    if slot == "toggleable":
        return [c for c in cats if tx.has(c, tx.TOGGLEABLE) and c != "Microwave"]
    if slot == "openable":
        return [c for c in cats if tx.has(c, tx.OPENABLE)]
    raise ValueError(slot)


def _share_room(a: str, b: str) -> bool:
    return bool(set(tx.info(a).rooms) & set(tx.info(b).rooms))


def candidate_subgoals(scene: Scene, kind: str) -> list:
    entry = next(e for e in lang.templates()["short"] if e["kind"] == kind)
    slots = entry["slots"]
    if len(slots) == 1:
        return [(kind, a) for a in _slot_candidates(scene, slots[0])]
    out = []
    for a in _slot_candidates(scene, slots[0]):
        area_a = tx.info(a).size[0] * tx.info(a).size[1]
        for b in _slot_candidates(scene, slots[1]):
            if a == b or not _share_room(a, b):
                continue
            # small containers only take strictly smaller items
            if tx.has(b, tx.PICKUPABLE) and tx.info(b).size[0] * tx.info(b).size[1] <= area_a:
                continue
            out.append((kind, a, b))
    return out


def _template_text(kind: str, rng) -> str:
    entry = next(e for e in lang.templates()["short"] if e["kind"] == kind)
    return entry["texts"][int(rng.integers(len(entry["texts"])))]


def _sentence(text: str) -> str:
    return text[0].upper() + text[1:]


# ---------------------------------------------------------------------------
# generation

def _build(scene: Scene, subgoals, instruction, category, kind, tid) -> Optional[TaskSpec]:
    try:
        steps = synthesize_plan(scene, subgoals)
    except TemplateUnsatisfiable:
        return None
    goal = lang.subgoals_goal(subgoals)
    task = TaskSpec(tid, instruction, category, goal, steps, scene.seed, scene.size_class, kind,
                    [tuple(s) for s in subgoals])
    n = len(steps)
    if category == "target_specific_short" and n >= LONG_PLAN:
        return None
    if category == "target_specific_long" and n < LONG_PLAN:
        return None
    if goal_satisfied(scene, goal):
        return None
    if not validate_feasibility(task, scene):
        return None
    return task


def _short_candidate(scene, rng):
    kinds = [e["kind"] for e in lang.templates()["short"]]
    weights = np.array([3, 3, 2, 1, 1, 1], dtype=float)[: len(kinds)]
    kind = kinds[int(rng.choice(len(kinds), p=weights / weights.sum()))]
    subs = candidate_subgoals(scene, kind)
    if not subs:
        return None
    sg = subs[int(rng.integers(len(subs)))]
    return [sg], lang.clause_text(_template_text(kind, rng), sg), kind


def _long_candidate(scene, rng):
    cfg = lang.templates()["long"]
    n = int(rng.integers(cfg["min_clauses"], cfg["max_clauses"] + 1))
    subgoals, clauses, used = [], [], set()
    for _ in range(n * 4):
        if len(subgoals) == n:
            break
        kind = cfg["kinds"][int(rng.integers(len(cfg["kinds"])))]
        subs = [s for s in candidate_subgoals(scene, kind) if not (set(s[1:]) & used)]
        if not subs:
            continue
        sg = subs[int(rng.integers(len(subs)))]
        subgoals.append(sg)
        used.update(c for c in sg[1:] if c not in ("Microwave", "Sink", "CounterTop", "Fridge"))
        clauses.append(lang.clause_text(_template_text(kind, rng), sg))
    if len(subgoals) < 2:
        return None
    text = clauses[0]
    for c in clauses[1:]:
        conn = cfg["connectors"][int(rng.integers(len(cfg["connectors"])))]
        text += conn + c[0].lower() + c[1:]
    return subgoals, text, "chain"


def _abstract_candidate(scene, rng):
    entries = lang.templates()["abstract"]
    entry = entries[int(rng.integers(len(entries)))]
    recipes = list(entry["recipes"])
    order = rng.permutation(len(recipes))
    for i in order:
        recipe = [tuple(sg) for sg in recipes[int(i)]]
        cats = {a for _, *args in recipe for a in args}
        if all(scene.instances(c) for c in cats):
            return recipe, entry["text"], "abstract"
    return None


def substitution_candidate(scene: Scene, rng=None) -> Optional[tuple]:
    """Requested object absent but a role-equivalent present: (subgoals, text, requested)."""
    rng = rng or np.random.default_rng(0)
    for entry in lang.templates()["substitution"]:
        req = entry["requested"]
        if scene.instances(req):
            continue
        cls = next((c for c in lang.role_classes() if req in c), [req])
        alts = [c for c in cls if c != req and scene.instances(c)]
        recs = [r for r in entry["receptacles"] if scene.instances(r)]
        if not alts or not recs:
            continue
        text = entry["texts"][int(rng.integers(len(entry["texts"])))]
        return [("put", alts[0], recs[0])], lang.clause_text(text, ("put", req, recs[0])), req
    return None


def generate_tasks(scene: Scene, counts: dict, seed: int = 0, max_tries: int = 400,
                   existing: Iterable[str] = ()) -> list:
    """Instantiate templates for one scene; each task is validated and de-duplicated."""
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, scene.seed & 0xFFFFFFFF, 11])
    kept_texts = list(existing)
    out = []
    makers = {"target_specific_short": _short_candidate, "target_specific_long": _long_candidate,
              "abstract": _abstract_candidate}
    for category in TASK_CATEGORIES:
        want = int(counts.get(category, 0))
        got = 0
        for _ in range(max_tries):
            if got >= want:
                break
            cand = makers[category](scene, rng)
            if cand is None:
                continue
            subgoals, text, kind = cand
            text = _sentence(text)
            if is_near_duplicate(text, kept_texts):
                continue
            if category == "abstract" and tx.mentioned_categories(text):
                continue
            tid = f"{scene.size_class}-{scene.seed}-{_short_code(category)}{got:03d}"
            task = _build(scene, subgoals, text, category, kind, tid)
            if task is None:
                continue
            out.append(task)
            kept_texts.append(text)
            got += 1
    return out


def _short_code(category: str) -> str:
    return {"target_specific_short": "s", "target_specific_long": "l", "abstract": "a"}[category]


def substitution_task(scene: Scene, seed: int = 0) -> Optional[TaskSpec]:
    """Task whose instruction names an absent object with a present stand-in."""
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, scene.seed & 0xFFFFFFFF, 13])
    cand = substitution_candidate(scene, rng)
    if cand is None:
        return None
    subgoals, text, _ = cand
    return _build(scene, subgoals, _sentence(text), "target_specific_short", "substitution",
                  f"{scene.size_class}-{scene.seed}-sub")


def mixed_counts(total: int) -> dict:
    """Split ``total`` tasks across categories in the reference proportions."""
    whole = sum(MIXED_PROPORTIONS.values())
    raw = {k: total * v / whole for k, v in MIXED_PROPORTIONS.items()}
    counts = {k: int(np.floor(v)) for k, v in raw.items()}
    rest = total - sum(counts.values())
    for k in sorted(raw, key=lambda k: raw[k] - counts[k], reverse=True)[:rest]:
        counts[k] += 1
    return counts


# ---------------------------------------------------------------------------
# SFT samples

def emit_sft_samples(trace: list, task: TaskSpec) -> list:
    """Planner and controller training records from an episode trace.

    One planner record per non-terminal plan decision and one controller
    record per controller decision.
    """
    records = []
    for rec in trace:
        kind = rec.get("kind")
        if kind == "plan" and not rec["step"]["terminal"]:
            index = rec["step"]["index"]
            records.append({
                "type": "planner",
                "task_id": task.id,
                "instruction": task.instruction,
                "completed_steps": list(rec.get("done", [])),
                "map_summary": rec.get("summary", {}),
                "next_step": rec["step"]["text"],
                "subsequent_steps": [s.text for s in task.gt_plan if s.index > index],
            })
        elif kind == "decide":
            records.append({
                "type": "controller",
                "task_id": task.id,
                "step": rec["step"],
                "frontiers": rec.get("frontiers", []),
                "command": rec["command"],
            })
    return records
