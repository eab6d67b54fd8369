"""PDDL-style goal conditions: conjunctions of object-state predicates."""
from __future__ import annotations

import re
from dataclasses import dataclass

from .scene.taxonomy import info

UNARY = ("sliced", "open", "closed", "on", "off", "held", "heated")
BINARY = ("in",)

_PRED_RE = re.compile(r"^\s*(\w+)\s*\(\s*(\w+)\s*(?:,\s*(\w+)\s*)?\)\s*$")


@dataclass(frozen=True)
class Predicate:
    name: str
    args: tuple

    def __post_init__(self):
        arity = 1 if self.name in UNARY else 2 if self.name in BINARY else None
        if arity is None:
            raise ValueError(f"unknown predicate {self.name!r}")
        if len(self.args) != arity:
            raise ValueError(f"{self.name} takes {arity} argument(s), got {self.args}")
        for a in self.args:
            info(a)

    def __str__(self) -> str:
        return f"{self.name}({','.join(self.args)})"

    @classmethod
    def parse(cls, text: str) -> "Predicate":
        m = _PRED_RE.match(text)
        if not m:
            raise ValueError(f"malformed predicate {text!r}")
        name, a, b = m.groups()
        return cls(name, (a,) if b is None else (a, b))


@dataclass(frozen=True)
class GoalCondition:
    conjuncts: tuple

    def __post_init__(self):
        if not self.conjuncts:
            raise ValueError("goal needs at least one conjunct")

    @property
    def categories(self) -> list[str]:
        seen: list[str] = []
        for p in self.conjuncts:
            for a in p.args:
                if a not in seen:
                    seen.append(a)
        return seen

    def to_list(self) -> list[str]:
        return [str(p) for p in self.conjuncts]

    @classmethod
    def from_list(cls, items) -> "GoalCondition":
        return cls(tuple(Predicate.parse(s) if isinstance(s, str) else s for s in items))

    @classmethod
    def of(cls, *items: str) -> "GoalCondition":
        return cls.from_list(items)
