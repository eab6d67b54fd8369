"""High-level planners: map an instruction and progress to the next step.

``OraclePlanner`` replays a task's ground-truth plan. ``HeuristicPlanner``
parses templated instructions, expands them into steps from what the map
has revealed, opens discovered containers when a search comes up empty and
substitutes role-equivalent objects for absent ones. ``ExternalPlanner``
talks to a child process over line-delimited JSON.
"""
from __future__ import annotations

import json
import os
import select
import shlex
import subprocess
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import language as lang
from .scene import taxonomy as tx

PROTOCOL_VERSION = 1


class PlannerExhausted(RuntimeError):
    pass


class AdapterTimeout(RuntimeError):
    pass


class AdapterProtocolError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlanStep:
    index: int
    text: str
    primitive_hint: Optional[str] = None
    demanded_objects: tuple = ()
    terminal: bool = False
    target_id: Optional[int] = None      # grounded instance, when known

    def __post_init__(self):
        if self.terminal and self.demanded_objects:
            raise ValueError("terminal steps demand no objects")
        for c in self.demanded_objects:
            tx.info(c)

    @property
    def body(self) -> str:
        """Text without the ``Step i.`` prefix."""
        prefix = f"Step {self.index}. "
        return self.text[len(prefix):] if self.text.startswith(prefix) else self.text

    @property
    def target(self) -> Optional[str]:
        return self.demanded_objects[0] if self.demanded_objects else None

    def renumbered(self, index: int) -> "PlanStep":
        return PlanStep(index, f"Step {index}. {self.body}", self.primitive_hint,
                        self.demanded_objects, self.terminal, self.target_id)

    def to_dict(self) -> dict:
        return {"index": self.index, "text": self.text, "primitive_hint": self.primitive_hint,
                "demanded_objects": list(self.demanded_objects), "terminal": self.terminal,
                "target_id": self.target_id}

    @classmethod
    def from_dict(cls, d: dict) -> "PlanStep":
        return cls(int(d["index"]), str(d["text"]), d.get("primitive_hint"),
                   tuple(d.get("demanded_objects", ())), bool(d.get("terminal", False)),
                   d.get("target_id"))


def make_step(index: int, verb: str, target: str, held: Optional[str] = None,
              target_id: Optional[int] = None) -> PlanStep:
    _, prim = lang.STEP_VERBS[verb]
    return PlanStep(index, f"Step {index}. {lang.step_body(verb, target, held)}", prim, (target,),
                    False, target_id)


def terminal_step(index: int) -> PlanStep:
    return PlanStep(index, f"Step {index}. End", None, (), True)


@dataclass(frozen=True)
class MapSummary:
    discovered: dict = field(default_factory=dict)   # category -> list of [row, col]
    explored_fraction: float = 0.0
    frontier_count: int = 0
    held: Optional[str] = None

    def to_dict(self) -> dict:
        return {"discovered": {k: [list(map(int, p)) for p in v] for k, v in sorted(self.discovered.items())},
                "explored_fraction": round(float(self.explored_fraction), 6),
                "frontier_count": int(self.frontier_count), "held": self.held}

    @classmethod
    def from_map(cls, fmap, frontier_count: int, held: Optional[str] = None) -> "MapSummary":
        disc = {}
        for cat, entries in fmap.discovered_categories().items():
            pts = []
            for e in entries:
                if e.held:
                    continue
                r, c = divmod(int(e.cells[len(e.cells) // 2]), fmap.width)
                pts.append([r, c])
            if pts:
                disc[cat] = pts
        return cls(disc, fmap.explored_fraction(), frontier_count, held)


class Planner:
    """Base class: enforces the step cap and idempotent termination."""

    name = "base"

    def __init__(self, max_steps: int = 30):
        self.max_steps = max_steps

    def next_step(self, instruction: str, done: Sequence[PlanStep], summary: MapSummary) -> PlanStep:
        if done and done[-1].terminal:
            return done[-1]
        step = self._next(instruction, list(done), summary)
        if not step.terminal and step.index > self.max_steps:
            raise PlannerExhausted(f"plan exceeded {self.max_steps} steps")
        return step

    def _next(self, instruction, done, summary) -> PlanStep:  # pragma: no cover - abstract
        raise NotImplementedError

    def close(self) -> None:
        pass


class OraclePlanner(Planner):
    name = "oracle"

    def __init__(self, plan: Sequence[PlanStep], max_steps: int = 30):
        super().__init__(max_steps)
        self.plan = list(plan)

    def _next(self, instruction, done, summary):
        i = len(done)
        if i < len(self.plan):
            return self.plan[i]
        return terminal_step(i + 1)


class HeuristicPlanner(Planner):
    """Template parser plus explicit commonsense rules."""

    name = "heuristic"

    def __init__(self, substitution: bool = True, explore_done: float = 0.9, max_steps: int = 30,
                 roles: Optional[list] = None):
        super().__init__(max_steps)
        self.substitution = substitution
        self.explore_done = explore_done
        self.roles = roles if roles is not None else lang.role_classes()

    # substitution ----------------------------------------------------------
    def exhausted(self, summary: MapSummary) -> bool:
        return summary.frontier_count == 0 or summary.explored_fraction >= self.explore_done

    def substitute(self, category: str, summary: MapSummary) -> str:
        present = set(summary.discovered) | ({summary.held} if summary.held else set())
        if not self.substitution or category in present or not self.exhausted(summary):
            return category
        for cls in self.roles:
            if category in cls:
                for alt in cls:
                    if alt != category and alt in present:
                        return alt
        return category

    def _apply_substitutions(self, subgoals, summary):
        out = []
        for kind, *args in subgoals:
            out.append((kind, *[self.substitute(a, summary) for a in args]))
        return out

    # plan expansion --------------------------------------------------------
    def _choose_recipe(self, recipes, summary):
        for recipe in recipes:
            cats = {a for _, *args in recipe for a in args}
            if cats <= set(summary.discovered):
                return recipe
        return recipes[0]

    def expand(self, subgoals, held: Optional[str], summary: MapSummary) -> list:
        """Ungrounded step bodies as (verb, target, held) triples."""
        steps = []

        def interact(verb, target, h=None):
            if not steps or steps[-1][1] != target:
                steps.append(("find", target, None))
            steps.append((verb, target, h))

        def acquire(item):
            nonlocal held
            if held == item:
                return
            if held is not None:
                surface = self._stash_surface(summary)
                interact("place", surface, held)
            interact("pickup", item)
            held = item

        for kind, *args in subgoals:
            if kind == "slice":
                acquire("Knife")
                interact("slice", args[0])
            elif kind == "pickup":
                acquire(args[0])
            elif kind == "put":
                acquire(args[0])
                if tx.has(args[1], tx.OPENABLE):
                    interact("open", args[1])
                interact("place", args[1], held)
                held = None
            elif kind == "heat":
                acquire(args[0])
                interact("open", "Microwave")
                interact("place", "Microwave", held)
                held = None
                interact("close", "Microwave")
                interact("toggle_on", "Microwave")
                interact("toggle_off", "Microwave")
            elif kind == "turn_on":
                interact("toggle_on", args[0])
            elif kind == "open":
                interact("open", args[0])
        return steps

    @staticmethod
    def _stash_surface(summary):
        for c in ("CounterTop", "DiningTable", "CoffeeTable", "Desk", "SideTable", "TVStand", "Bed"):
            if c in summary.discovered:
                return c
        return "CounterTop"

    def _next(self, instruction, done, summary):
        candidates = lang.parse_instruction(instruction)
        index = len(done) + 1
        if not candidates:
            return terminal_step(index)
        subgoals = self._choose_recipe(candidates, summary) if len(candidates) > 1 else candidates[0]
        subgoals = self._apply_substitutions(subgoals, summary)
        held0 = None
        plan = self.expand(subgoals, held0, summary)
        done_bodies = [d.body for d in done]
        pos = 0
        for verb, target, h in plan:
            body = lang.step_body(verb, target, h)
            try:
                pos = done_bodies.index(body, pos) + 1
                continue
            except ValueError:
                pass
            if verb == "find" or target not in summary.discovered:
                search = self._active_search(target, done_bodies, summary)
                if search is not None:
                    return search.renumbered(index)
            return make_step(index, verb, target, h)
        return terminal_step(index)

    def _active_search(self, target, done_bodies, summary) -> Optional[PlanStep]:
        """Open a discovered, not-yet-opened container when the search is exhausted."""
        if target in summary.discovered or not self.exhausted(summary):
            return None
        for cat in sorted(summary.discovered):
            if tx.has(cat, tx.OPENABLE) and not tx.has(cat, tx.PICKUPABLE) and cat != target:
                if lang.step_body("open", cat) not in done_bodies:
                    return make_step(0, "open", cat)
        return None


class ExternalPlanner(Planner):
    """Line-delimited JSON adapter to a child process."""

    name = "external"

    def __init__(self, command: str, timeout: float = 30.0, max_steps: int = 30):
        super().__init__(max_steps)
        self.command = command
        self.timeout = timeout
        self.proc = subprocess.Popen(shlex.split(command), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                     stderr=subprocess.DEVNULL)
        self._buf = b""
        self.frontiers: list = []

    def _readline(self, deadline: float) -> bytes:
        fd = self.proc.stdout.fileno()
        while b"\n" not in self._buf:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise AdapterTimeout(f"no reply within {self.timeout} s")
            ready, _, _ = select.select([fd], [], [], remaining)
            if not ready:
                raise AdapterTimeout(f"no reply within {self.timeout} s")
            chunk = os.read(fd, 65536)
            if not chunk:
                raise AdapterProtocolError("adapter closed its output")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line

    def request(self, payload: dict) -> dict:
        data = (json.dumps(payload, sort_keys=True) + "\n").encode("utf-8")
        last_error = None
        for _ in range(2):
            try:
                self.proc.stdin.write(data)
                self.proc.stdin.flush()
            except BrokenPipeError as err:
                raise AdapterProtocolError("adapter is not accepting input") from err
            line = self._readline(time.monotonic() + self.timeout)
            try:
                reply = json.loads(line.decode("utf-8"))
                if not isinstance(reply, dict):
                    raise ValueError("reply is not an object")
                return reply
            except ValueError as err:
                last_error = err
        raise AdapterProtocolError(f"malformed reply twice: {last_error}")

    def _next(self, instruction, done, summary):
        payload = {"version": PROTOCOL_VERSION, "instruction": instruction,
                   "done": [d.text for d in done], "summary": summary.to_dict(),
                   "frontiers": [list(f) for f in self.frontiers]}
        reply = self.request(payload)
        try:
            step = PlanStep(int(reply.get("index", len(done) + 1)), str(reply["text"]),
                            reply.get("primitive_hint"), tuple(reply.get("demanded_objects", ())),
                            bool(reply.get("terminal", False)))
        except (KeyError, ValueError, TypeError, tx.UnknownCategory) as err:
            raise AdapterProtocolError(f"invalid step: {err}") from err
        return step

    def close(self) -> None:
        if self.proc.poll() is None:
            self.proc.kill()
        self.proc.wait()
