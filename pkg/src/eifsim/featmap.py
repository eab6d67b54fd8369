"""Online top-down semantic feature map.

Pixel features are fused from per-category embeddings, projected into grid
cells using depth, and blended into the map with a per-frame attention
weight. The map also tracks free/obstacle evidence and extracts frontiers.
"""
from __future__ import annotations

import hashlib
import struct
from fractions import Fraction
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import ndimage

from .config import DEFAULT_CONFIG, Config
from .scene import taxonomy as tx
from .simulator import Observation, Pose, camera_for, ray_points

MAX_PAIR_COSINE = 0.6
ROOM_SHARE = 0.2          # fraction of embedding energy shared by same-room categories
FREE_SUBRAYS = 4
FRONTIER_BAND = 5         # frontier width in cells: one forward step


class InvalidWeight(ValueError):
    pass


# ---------------------------------------------------------------------------
# embeddings

def _hash_vector(name: str, seed: int, dim: int) -> np.ndarray:
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


class EmbeddingTable:
    """Deterministic unit vectors per category.

    A category vector mixes a hash-seeded random direction with a direction
    shared by the rooms it usually appears in, so co-located categories are
    mildly similar. The seed is advanced until every pair of categories has
    ``|cos| < 0.6``.
    """

    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim = dim
        self.requested_seed = seed
        for s in range(seed, seed + 1000):
            table = self._build(s)
            body = table[1:]
            gram = body @ body.T
            np.fill_diagonal(gram, 0.0)
            if np.abs(gram).max() < MAX_PAIR_COSINE:
                break
        else:  # pragma: no cover - unreachable for sane dimensions
            raise RuntimeError("could not find well-separated embeddings")
        self.seed = s
        self.matrix = table                  # (num category ids, dim); row 0 = background zeros
        self.matrix.setflags(write=False)
        self.none = _hash_vector("<nothing>", s, dim)
        self.negation = _hash_vector("<not>", s, dim)

    def _build(self, s: int) -> np.ndarray:
        rooms = {r: _hash_vector(f"<room:{r}>", s, self.dim) for r in tx.ROOM_LABELS}
        m = np.zeros((tx.NUM_CATEGORY_IDS, self.dim))
        for name in tx.CATEGORY_NAMES:
            info = tx.info(name)
            h = _hash_vector(name, s, self.dim)
            if info.rooms:
                a = sum(rooms[r] for r in info.rooms)
                a = a / np.linalg.norm(a)
                v = np.sqrt(ROOM_SHARE) * a + np.sqrt(1 - ROOM_SHARE) * h
            else:
                v = h
            m[info.id] = v / np.linalg.norm(v)
        return m

    def __call__(self, category: str) -> np.ndarray:
        return self.matrix[tx.category_id(category)]


@lru_cache(maxsize=4)
def embedding_table(dim: int = 64, seed: int = 0) -> EmbeddingTable:
    return EmbeddingTable(dim, seed)


def embed_category(category: str, dim: int = 64, seed: int = 0) -> np.ndarray:
    """Unit feature vector for a taxonomy category."""
    return embedding_table(dim, seed)(category).copy()


def _normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else np.zeros_like(v)


# ---------------------------------------------------------------------------
# pixel features

@dataclass(frozen=True, eq=False)
class PixelFeatures:
    features: np.ndarray              # (H, W, d); zero on background
    global_feature: np.ndarray        # (d,), unit or zero
    instance_weights: dict            # instance id -> alpha
    instance_vectors: dict            # instance id -> fused unit vector


def pixel_features(obs: Observation, table: Optional[EmbeddingTable] = None,
                   temperature: float = 1.0) -> PixelFeatures:
    table = table or embedding_table()
    inst = obs.instance_id
    h, w = inst.shape
    ids, inverse, counts = np.unique(inst.ravel(), return_inverse=True, return_counts=True)
    fg = ids > 0
    out = np.zeros((len(ids), table.dim))
    weights, vectors = {}, {}
    if not fg.any():
        return PixelFeatures(np.zeros((h, w, table.dim)), np.zeros(table.dim), weights, vectors)
    cat_of = {}
    flat_cat = obs.category_id.ravel()
    first = np.zeros(len(ids), dtype=np.int64)
    first[inverse[::-1]] = np.arange(len(inverse))[::-1]
    for k in np.nonzero(fg)[0]:
        cat_of[k] = flat_cat[first[k]]
    emb = np.array([table.matrix[cat_of[k]] for k in np.nonzero(fg)[0]])
    n = counts[fg].astype(float)
    g = _normalize((n[:, None] * emb).sum(axis=0))
    logits = emb @ g / temperature
    alpha = np.exp(logits - logits.max())
    alpha /= alpha.sum()
    fused = alpha[:, None] * g[None, :] + (1 - alpha[:, None]) * emb
    fused /= np.linalg.norm(fused, axis=1, keepdims=True)
    out[np.nonzero(fg)[0]] = fused
    for j, k in enumerate(np.nonzero(fg)[0]):
        weights[int(ids[k])] = float(alpha[j])
        vectors[int(ids[k])] = fused[j]
    return PixelFeatures(out[inverse].reshape(h, w, table.dim), g, weights, vectors)


# ---------------------------------------------------------------------------
# projection

@dataclass(frozen=True, eq=False)
class FrameContribution:
    shape: tuple                 # map (rows, cols)
    cells: np.ndarray            # (n,) flat indices with feature contributions, ascending
    sums: np.ndarray             # (n, d) float64 feature sums
    counts: np.ndarray           # (n,) pixel counts
    heights: np.ndarray          # (n,) max hit height (m)
    obstacle: np.ndarray         # flat indices of hit cells plus bridged object surfaces
    free: np.ndarray             # flat indices observed as free
    instances: dict              # instance id -> (category id, flat cell indices)

    @property
    def empty(self) -> bool:
        return len(self.cells) == 0 and len(self.free) == 0

    def as_dict(self) -> dict:
        r, c = np.divmod(self.cells, self.shape[1])
        return {(int(a), int(b)): (self.sums[i], int(self.counts[i])) for i, (a, b) in enumerate(zip(r, c))}


def pixel_cells(obs: Observation, shape: tuple, config: Config = DEFAULT_CONFIG) -> tuple:
    """Grid cell and hit height of every finite-depth pixel, row-major."""
    cam = camera_for(config)
    rows, cols = np.nonzero(np.isfinite(obs.depth))
    dr, dc = cam.directions(obs.pose.heading)
    t = obs.depth[rows, cols]
    pr, pc = ray_points(obs.pose, dr[cols], dc[cols], t, cam.cell_size)
    r = np.floor(pr).astype(np.int64)
    c = np.floor(pc).astype(np.int64)
    z = cam.height + t * cam.slope[rows, cols]
    inside = (r >= 0) & (r < shape[0]) & (c >= 0) & (c < shape[1])
    return rows[inside], cols[inside], r[inside], c[inside], z[inside]


def free_cells(obs: Observation, shape: tuple, config: Config = DEFAULT_CONFIG) -> np.ndarray:
    """Flat indices of cells swept by rays before the first hit in each column.

    Extra rays are interpolated between adjacent columns so distant free
    space has no gaps; each ray stops one cell short of the nearer of its two
    neighbouring columns' hits.
    """
    cam = camera_for(config)
    d = np.where(np.isfinite(obs.depth), obs.depth, np.inf).min(axis=0)
    rng_col = np.minimum(d, config.max_range)
    n = len(rng_col)
    frac = np.arange(FREE_SUBRAYS) / FREE_SUBRAYS
    left = np.repeat(np.arange(n - 1), FREE_SUBRAYS)
    f = np.tile(frac, n - 1)
    angles = np.concatenate([cam.col_angle[left] * (1 - f) + cam.col_angle[left + 1] * f, cam.col_angle[-1:]])
    reach = np.concatenate([np.minimum(rng_col[left], rng_col[np.minimum(left + 1, n - 1)]), rng_col[-1:]])
    reach = reach - cam.cell_size
    step = cam.cell_size / 2
    ts = np.arange(0, config.max_range + step, step)
    dr, dc = cam.directions(obs.pose.heading, angles)
    pr, pc = ray_points(obs.pose, dr[:, None], dc[:, None], ts[None, :], cam.cell_size)
    keep = ts[None, :] <= reach[:, None]
    r = np.floor(pr[keep]).astype(np.int64)
    c = np.floor(pc[keep]).astype(np.int64)
    inside = (r >= 0) & (r < shape[0]) & (c >= 0) & (c < shape[1])
    flat = r[inside] * shape[1] + c[inside]
    flat = np.append(flat, obs.pose.row * shape[1] + obs.pose.col)
    mask = np.zeros(shape[0] * shape[1], dtype=bool)
    mask[flat] = True
    return np.flatnonzero(mask)


def surface_cells(obs: Observation, shape: tuple, config: Config = DEFAULT_CONFIG) -> np.ndarray:
    """Cells between vertically adjacent pixels that hit the same object.

    Footprints are rectangles, so the segment joining two hits on one object
    stays inside it; bridging fills the gaps sparse pixels leave on far surfaces.
    """
    cam = camera_for(config)
    inst, depth = obs.instance_id, obs.depth
    pair = np.isfinite(depth[:-1]) & np.isfinite(depth[1:]) & (inst[:-1] == inst[1:]) \
        & (inst[:-1] > tx.WALL_INSTANCE_ID)
    rows, cols = np.nonzero(pair)
    if not len(rows):
        return np.zeros(0, dtype=np.int64)
    t0 = np.minimum(depth[rows, cols], depth[rows + 1, cols])
    t1 = np.maximum(depth[rows, cols], depth[rows + 1, cols])
    step = cam.cell_size / 2
    n = np.floor((t1 - t0) / step).astype(np.int64) + 1
    idx = np.repeat(np.arange(len(rows)), n)
    offs = np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n)
    t = np.minimum(t0[idx] + offs * step, t1[idx])
    dr, dc = cam.directions(obs.pose.heading)
    pr, pc = ray_points(obs.pose, dr[cols[idx]], dc[cols[idx]], t, cam.cell_size)
    r = np.floor(pr).astype(np.int64)
    c = np.floor(pc).astype(np.int64)
    inside = (r >= 0) & (r < shape[0]) & (c >= 0) & (c < shape[1])
    return np.unique(r[inside] * shape[1] + c[inside])


def project(obs: Observation, feats: PixelFeatures, shape: tuple,
            config: Config = DEFAULT_CONFIG) -> FrameContribution:
    """Accumulate pixel features into grid cells by depth unprojection."""
    rows, cols, r, c, z = pixel_cells(obs, shape, config)
    flat = r * shape[1] + c
    cells, inv = np.unique(flat, return_inverse=True)
    counts = np.bincount(inv, minlength=len(cells))
    # add.at is unbuffered and walks pixels in row-major order, so every cell
    # sum rounds exactly like a pixel-by-pixel loop
    sums = np.zeros((len(cells), feats.features.shape[2]))
    np.add.at(sums, inv, feats.features[rows, cols].astype(np.float64))
    heights = np.full(len(cells), -np.inf)
    np.maximum.at(heights, inv, z)
    instances = {}
    pix_inst = obs.instance_id[rows, cols]
    pix_cat = obs.category_id[rows, cols]
    for iid in np.unique(pix_inst):
        if iid <= tx.WALL_INSTANCE_ID:
            continue
        sel = pix_inst == iid
        instances[int(iid)] = (int(pix_cat[sel][0]), np.unique(flat[sel]))
    obstacle = np.union1d(cells, surface_cells(obs, shape, config))
    return FrameContribution(tuple(shape), cells, sums, counts, heights, obstacle,
                             free_cells(obs, shape, config), instances)


def dilate8(mask: np.ndarray) -> np.ndarray:
    """Binary dilation by the 3x3 square, zero outside the array."""
    rows = mask.copy()
    rows[1:] |= mask[:-1]
    rows[:-1] |= mask[1:]
    out = rows.copy()
    out[:, 1:] |= rows[:, :-1]
    out[:, :-1] |= rows[:, 1:]
    return out


# ---------------------------------------------------------------------------
# map

@dataclass
class DiscoveredObject:
    instance: int
    category: str
    cells: np.ndarray             # flat indices
    first_seen: int
    last_seen: int
    held: bool = False


@dataclass(eq=False)
class Frontier:
    id: int
    cells: np.ndarray             # (n, 2) row/col
    area: int
    centroid: tuple
    bbox: tuple                   # (r0, c0, r1, c1) inclusive-exclusive
    tokens: np.ndarray            # (k, d)
    token_cells: np.ndarray       # (k, 2)


class FeatureMap:
    """Top-down feature grid with attention-weighted temporal fusion."""

    def __init__(self, height: int, width: int, dim: int = 64, cell_size: float = 0.05):
        self.height, self.width, self.dim, self.cell_size = height, width, dim, cell_size
        self.features = np.zeros((height, width, dim), dtype=np.float32)
        self.hit_count = np.zeros((height, width), dtype=np.int32)
        self.free_seen = np.zeros((height, width), dtype=bool)
        self.obstacle_seen = np.zeros((height, width), dtype=bool)
        self.max_height = np.full((height, width), -np.inf, dtype=np.float32)
        self.weight_grid = np.zeros((height, width), dtype=np.float32)
        self.has_feature = np.zeros((height, width), dtype=bool)
        self.weight_history: list = []
        self._history_sum = (0, Fraction(0))
        self.timestep = 0
        self.discovered: dict = {}

    @classmethod
    def for_scene(cls, scene, config: Config = DEFAULT_CONFIG) -> "FeatureMap":
        return cls(scene.height, scene.width, config.feature_dim, scene.cell_size)

    @property
    def shape(self) -> tuple:
        return (self.height, self.width)

    @property
    def explored(self) -> np.ndarray:
        return self.hit_count > 0

    @property
    def free(self) -> np.ndarray:
        return self.free_seen & ~self.obstacle_seen

    @property
    def unknown(self) -> np.ndarray:
        return ~(self.free_seen | self.obstacle_seen)

    def normalized_weight(self, w_raw: float) -> float:
        """Weight for the latest frame given the history (which already includes it)."""
        hist = self.weight_history
        if not hist:
            return 1.0
        # exact rational sum, so a constant history gives a ratio of exactly one
        done, total = self._history_sum
        if done > len(hist):
            done, total = 0, Fraction(0)
        for v in hist[done:]:
            total += Fraction(v)
        self._history_sum = (len(hist), total)
        if total == 0:
            return 1.0
        return min(1.0, float(Fraction(w_raw) * len(hist) / total))

    def update(self, contrib: FrameContribution, w_raw: float) -> float:
        """Blend one frame into the map in place; returns the normalized weight."""
        if not (0.0 <= w_raw <= 1.0) or w_raw != w_raw:
            raise InvalidWeight(f"raw weight {w_raw!r} outside [0, 1]")
        if tuple(contrib.shape) != self.shape:
            raise ValueError("contribution shape does not match the map")
        self.weight_history.append(float(w_raw))
        w = self.normalized_weight(w_raw)
        self.timestep += 1
        flat_feat = self.features.reshape(-1, self.dim)
        if len(contrib.cells):
            new = contrib.sums / contrib.counts[:, None]
            old = flat_feat[contrib.cells].astype(np.float64)
            blended = ((1.0 - w) * old + w * new).astype(np.float32)
            flat_feat[contrib.cells] = blended
            self.has_feature.reshape(-1)[contrib.cells] = np.any(blended != 0, axis=1)
            self.weight_grid.reshape(-1)[contrib.cells] = w
            mh = self.max_height.reshape(-1)
            mh[contrib.cells] = np.maximum(mh[contrib.cells], contrib.heights)
        seen = np.union1d(contrib.cells, contrib.free)
        self.hit_count.reshape(-1)[seen] += 1
        self.free_seen.reshape(-1)[contrib.free] = True
        self.obstacle_seen.reshape(-1)[contrib.obstacle] = True
        for iid, (cat_id, cells) in contrib.instances.items():
            entry = self.discovered.get(iid)
            if entry is None:
                self.discovered[iid] = DiscoveredObject(iid, tx.CATEGORY_BY_ID[cat_id], cells,
                                                        self.timestep, self.timestep)
            else:
                if entry.held:
                    entry.cells = cells
                    entry.held = False
                else:
                    entry.cells = np.union1d(entry.cells, cells)
                entry.last_seen = self.timestep
        return w

    # registry --------------------------------------------------------------
    def mark_held(self, instance: int) -> None:
        if instance in self.discovered:
            self.discovered[instance].held = True

    def mark_placed(self, instance: int, cells: np.ndarray) -> None:
        entry = self.discovered.get(instance)
        if entry is not None:
            entry.cells = np.asarray(cells)
            entry.held = False

    def discovered_categories(self) -> dict:
        out: dict = {}
        for entry in sorted(self.discovered.values(), key=lambda e: e.instance):
            out.setdefault(entry.category, []).append(entry)
        return out

    def object_cells(self, instance: int) -> np.ndarray:
        """(n, 2) row/col cells recorded for a discovered instance."""
        r, c = np.divmod(self.discovered[instance].cells, self.width)
        return np.stack([r, c], axis=1)

    def explored_fraction(self) -> float:
        return float((self.free_seen | self.obstacle_seen).mean())

    # decoding ---------------------------------------------------------------
    def decode(self, table: Optional[EmbeddingTable] = None) -> np.ndarray:
        """Nearest category id per cell by cosine; 0 where the feature is zero."""
        table = table or embedding_table(self.dim)
        f = self.features.reshape(-1, self.dim).astype(np.float64)
        norms = np.linalg.norm(f, axis=1)
        scores = f @ table.matrix.T
        scores[:, 0] = -np.inf
        out = scores.argmax(axis=1)
        out[norms == 0] = 0
        return out.reshape(self.shape)

    # frontiers ---------------------------------------------------------------
    def boundary_mask(self) -> np.ndarray:
        """Free cells 8-adjacent to unknown space."""
        return self._band(1)

    def frontier_mask(self) -> np.ndarray:
        """Boundary cells widened through free space to one forward step."""
        return self._band(FRONTIER_BAND)

    def _band(self, width: int) -> np.ndarray:
        free = self.free
        out = np.zeros(self.shape, dtype=bool)
        rows, cols = np.nonzero(free.any(axis=1))[0], np.nonzero(free.any(axis=0))[0]
        if not len(rows):
            return out
        # everything happens inside the free cells' bounding box plus one cell
        box = (slice(max(rows[0] - 1, 0), rows[-1] + 2), slice(max(cols[0] - 1, 0), cols[-1] + 2))
        free, unknown = free[box], self.unknown[box]
        seed = free & dilate8(unknown)
        if seed.any():
            for _ in range(width - 1):
                seed = dilate8(seed) & free
        out[box] = seed
        return out

    def extract_frontiers(self, threshold: int = 150, n_tokens: int = 32,
                          token_margin: int = 20, seed: int = 0) -> list:
        mask = self.frontier_mask()
        labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=bool))
        if n == 0:
            return []
        areas = np.bincount(labels.ravel(), minlength=n + 1)
        keep = [k for k in range(1, n + 1) if areas[k] >= threshold]
        if not keep:
            return []
        slices = ndimage.find_objects(labels)
        comps = []
        for k in keep:
            sl = slices[k - 1]
            rr, cc = np.nonzero(labels[sl] == k)
            rr = rr + sl[0].start
            cc = cc + sl[1].start
            centroid = (int(np.floor(rr.mean() + 0.5)), int(np.floor(cc.mean() + 0.5)))
            bbox = (sl[0].start, sl[1].start, sl[0].stop, sl[1].stop)
            comps.append((int(areas[k]), centroid, np.stack([rr, cc], axis=1), bbox))
        comps.sort(key=lambda x: (-x[0], x[1]))
        out = []
        for fid, (area, centroid, cells, bbox) in enumerate(comps):
            tokens, token_cells = self._sample_tokens(fid, cells, bbox, n_tokens, token_margin, seed)
            out.append(Frontier(fid, cells, area, centroid, bbox, tokens, token_cells))
        return out

    def _sample_tokens(self, fid, cells, bbox, n_tokens, margin, seed):
        r0, c0, r1, c1 = bbox
        R0, C0 = max(r0 - margin, 0), max(c0 - margin, 0)
        R1, C1 = min(r1 + margin, self.height), min(c1 + margin, self.width)
        window = (slice(R0, R1), slice(C0, C1))
        rr, cc = np.nonzero(self.has_feature[window] & (self.hit_count[window] > 0))
        pool = np.stack([rr + R0, cc + C0], axis=1) if len(rr) else cells
        rng = np.random.default_rng([self.timestep, fid, seed])
        k = min(n_tokens, len(pool))
        pick = rng.choice(len(pool), size=k, replace=False)
        pick = np.resize(pick, n_tokens)           # repeat to pad
        chosen = pool[pick]
        return self.features[chosen[:, 0], chosen[:, 1]].copy(), chosen

    # snapshot ------------------------------------------------------------------
    MAGIC = b"EIFM"

    def export(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(struct.pack("<4sIIIf", self.MAGIC, self.width, self.height, self.dim, self.cell_size))
            fh.write(self.features.astype("<f4").tobytes())
            fh.write(self.hit_count.astype("<i4").tobytes())
            fh.write(self.free_seen.astype(np.uint8).tobytes())
            fh.write(self.obstacle_seen.astype(np.uint8).tobytes())
            fh.write(self.weight_grid.astype("<f4").tobytes())

    @classmethod
    def load(cls, path) -> "FeatureMap":
        with open(path, "rb") as fh:
            data = fh.read()
        magic, w, h, d, cell = struct.unpack_from("<4sIIIf", data)
        if magic != cls.MAGIC:
            raise ValueError("not a feature map snapshot")
        m = cls(h, w, d, cell)
        off = struct.calcsize("<4sIIIf")

        def take(dtype, count):
            nonlocal off
            arr = np.frombuffer(data, dtype=dtype, count=count, offset=off)
            off += arr.nbytes
            return arr

        m.features = take("<f4", h * w * d).reshape(h, w, d).astype(np.float32)
        m.hit_count = take("<i4", h * w).reshape(h, w).astype(np.int32)
        m.free_seen = take(np.uint8, h * w).reshape(h, w).astype(bool)
        m.obstacle_seen = take(np.uint8, h * w).reshape(h, w).astype(bool)
        m.weight_grid = take("<f4", h * w).reshape(h, w).astype(np.float32)
        m.has_feature = np.any(m.features != 0, axis=2)
        return m
