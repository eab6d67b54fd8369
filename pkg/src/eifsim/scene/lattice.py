"""Reachability on the motion lattice.

Forward moves a fixed number of cells, so an agent only ever visits cells
congruent to its start cell modulo the stride. Each of the ``stride**2``
offsets defines an independent lattice graph.
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage

_FOUR = ndimage.generate_binary_structure(2, 1)


def lattice_graph(blocked: np.ndarray, offset: tuple, stride: int) -> np.ndarray:
    """Interleaved node/edge grid: even positions are nodes, odd are edges.

    Node (i, j) is cell ``(a + i*stride, b + j*stride)``. An edge is open when
    every cell swept by the move (both endpoints included) is free.
    """
    a, b = offset
    free = ~np.asarray(blocked, dtype=bool)
    nodes = free[a::stride, b::stride]
    n, m = nodes.shape
    g = np.zeros((2 * n - 1, 2 * m - 1), dtype=bool)
    g[::2, ::2] = nodes
    if m > 1:
        rows = np.arange(a, blocked.shape[0], stride)[:n]
        cs = np.zeros((len(rows), blocked.shape[1] + 1), dtype=np.int32)
        cs[:, 1:] = np.cumsum(blocked[rows], axis=1)
        starts = np.arange(b, blocked.shape[1], stride)[: m - 1]
        ends = starts + stride + 1
        ok = starts + stride < blocked.shape[1]
        span = np.zeros((len(rows), m - 1), dtype=bool)
        span[:, ok] = (cs[:, ends[ok]] - cs[:, starts[ok]]) == 0
        g[::2, 1::2] = span
    if n > 1:
        cols = np.arange(b, blocked.shape[1], stride)[:m]
        cs = np.zeros((blocked.shape[0] + 1, len(cols)), dtype=np.int32)
        cs[1:, :] = np.cumsum(blocked[:, cols], axis=0)
        starts = np.arange(a, blocked.shape[0], stride)[: n - 1]
        ends = starts + stride + 1
        ok = starts + stride < blocked.shape[0]
        span = np.zeros((n - 1, len(cols)), dtype=bool)
        span[ok, :] = (cs[ends[ok], :] - cs[starts[ok], :]) == 0
        g[1::2, ::2] = span
    return g


def lattice_labels(blocked: np.ndarray, offset: tuple, stride: int) -> np.ndarray:
    """Component label per lattice node (0 = blocked node)."""
    labels, _ = ndimage.label(lattice_graph(blocked, offset, stride), structure=_FOUR)
    return labels[::2, ::2]


def main_component_mask(blocked: np.ndarray, offset: tuple, stride: int) -> np.ndarray:
    """Full-resolution mask of the nodes in the largest lattice component."""
    labels = lattice_labels(blocked, offset, stride)
    out = np.zeros(blocked.shape, dtype=bool)
    if labels.max() == 0:
        return out
    counts = np.bincount(labels.ravel())
    counts[0] = 0
    best = int(np.argmax(counts))
    a, b = offset
    out[a::stride, b::stride] = labels == best
    return out


def navigable_cells(blocked: np.ndarray, stride: int) -> np.ndarray:
    """Cells lying in the main component of their own lattice offset."""
    out = np.zeros(blocked.shape, dtype=bool)
    for a in range(stride):
        for b in range(stride):
            out |= main_component_mask(blocked, (a, b), stride)
    return out
