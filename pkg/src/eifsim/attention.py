"""Per-frame task relevance from three contrastive prompts.

The positive prompt stands for "the image contains the demanded objects",
the negative for "the image does not contain them" and the third for "the
image contains nothing". Relevance is the softmax probability of the
positive prompt given the frame's global feature.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .featmap import EmbeddingTable, embedding_table


@dataclass(frozen=True, eq=False)
class PromptTriplet:
    positive: np.ndarray
    negative: np.ndarray
    none: np.ndarray
    demanded: tuple = ()


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def build_prompts(demanded: Iterable[str], table: Optional[EmbeddingTable] = None) -> PromptTriplet:
    table = table or embedding_table()
    demanded = tuple(demanded)
    none = table.none
    if not demanded:
        return PromptTriplet(none.copy(), _unit(-none + table.negation), none.copy(), demanded)
    pos = _unit(np.mean([table(c) for c in demanded], axis=0))
    neg = _unit(-pos + table.negation)
    return PromptTriplet(pos, neg, none.copy(), demanded)


def relevance(g: np.ndarray, prompts: PromptTriplet, temperature: float = 0.1) -> float:
    """Positive-prompt probability in [0, 1]; exactly 1/3 for a zero feature."""
    g = np.asarray(g, dtype=np.float64)
    n = np.linalg.norm(g)
    if n == 0:
        return 1.0 / 3.0
    g = g / n
    logits = np.array([g @ prompts.positive, g @ prompts.negative, g @ prompts.none]) / temperature
    e = np.exp(logits - logits.max())
    return float(e[0] / e.sum())
