"""Top-down views of a map rebuilt from an episode trace (PNG or ASCII)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import Config
from .featmap import FeatureMap, embedding_table, pixel_features, project
from .scene import Scene, generate_scene
from .simulator import Motion, interact, render_observation, reset, step_motion

MOTIONS = {m.value for m in Motion}

COLORS = {
    "unknown": (40, 40, 48),
    "free": (235, 235, 225),
    "obstacle": (20, 20, 20),
    "frontier": (40, 170, 255),
    "path": (255, 140, 0),
    "agent": (220, 0, 60),
}


@dataclass
class MapReplay:
    scene: Scene
    fmap: FeatureMap
    poses: list          # [(row, col, heading)] after every action
    config: Config


def replay_map(trace: list, scene: Optional[Scene] = None) -> MapReplay:
    """Re-run a trace's perception with its logged weights to rebuild the final map."""
    header = next(r for r in trace if r["kind"] == "header")
    config = Config.from_dict(header["config"])
    if scene is None:
        scene = generate_scene(header["scene_seed"], header["size_class"])
    table = embedding_table(config.feature_dim, config.embedding_seed)
    fmap = FeatureMap.for_scene(scene, config)
    state, obs = reset(scene, header["seed"], config)

    def perceive(o, w_raw):
        feats = pixel_features(o, table, config.fusion_temperature)
        fmap.update(project(o, feats, fmap.shape, config), w_raw)

    start = next(r for r in trace if r["kind"] == "reset")
    perceive(obs, start["w_raw"])
    poses = [tuple(state.pose.to_list())]
    for rec in trace:
        if rec["kind"] != "action":
            continue
        if rec["cmd"] in MOTIONS:
            state, obs, _ = step_motion(scene, state, rec["cmd"], config)
        else:
            out = interact(scene, state, rec["cmd"], rec["target"], obs, config)
            state = out.state
            if not out.success:
                continue
            held_before = scene.held_object()
            scene = out.scene
            if rec["cmd"] == "PickUp":
                fmap.mark_held(rec["target"])
            elif rec["cmd"] == "Place" and held_before is not None:
                fmap.mark_placed(held_before.id, fmap.discovered[rec["target"]].cells)
            obs = render_observation(scene, state.pose, config)
        if "w_raw" in rec:
            perceive(obs, rec["w_raw"])
        poses.append(tuple(state.pose.to_list()))
    return MapReplay(scene, fmap, poses, config)


def render_rgb(fmap: FeatureMap, poses=(), frontier_threshold: int = 150, scale: int = 2) -> np.ndarray:
    """RGB top-down image: occupancy, attention-weight heat, frontiers and the agent path."""
    h, w = fmap.shape
    img = np.empty((h, w, 3), dtype=np.float64)
    img[:] = COLORS["unknown"]
    img[fmap.free] = COLORS["free"]
    heat = np.clip(fmap.weight_grid, 0.0, 1.0)
    hit = fmap.hit_count > 0
    warm = np.stack([np.full_like(heat, 255.0), 255.0 * (1 - heat), 60.0 * (1 - heat)], axis=-1)
    feat = hit & np.any(fmap.features != 0, axis=2)
    img[feat] = 0.45 * img[feat] + 0.55 * warm[feat]
    img[fmap.obstacle_seen & ~feat] = COLORS["obstacle"]
    for f in fmap.extract_frontiers(frontier_threshold, 1, 0, 0):
        img[f.cells[:, 0], f.cells[:, 1]] = COLORS["frontier"]
    for r, c, _ in poses:
        img[r, c] = COLORS["path"]
    if poses:
        r, c, _ = poses[-1]
        img[max(r - 1, 0):r + 2, max(c - 1, 0):c + 2] = COLORS["agent"]
    img = np.round(img).astype(np.uint8)
    return np.repeat(np.repeat(img, scale, axis=0), scale, axis=1)


def save_png(rgb: np.ndarray, path) -> None:
    from PIL import Image
    Image.fromarray(rgb, mode="RGB").save(path, format="PNG")


def render_ascii(fmap: FeatureMap, poses=(), frontier_threshold: int = 150, step: int = 2) -> str:
    """Character view, one char per ``step`` x ``step`` block (worst status in the block wins)."""
    h, w = fmap.shape
    codes = np.zeros((h, w), dtype=np.int8)            # 0 unknown, 1 free, 2 frontier, 3 obstacle, 4 path, 5 agent
    codes[fmap.free] = 1
    for f in fmap.extract_frontiers(frontier_threshold, 1, 0, 0):
        codes[f.cells[:, 0], f.cells[:, 1]] = 2
    codes[fmap.obstacle_seen] = 3
    for r, c, _ in poses:
        codes[r, c] = 4
    if poses:
        codes[poses[-1][0], poses[-1][1]] = 5
    hb, wb = -(-h // step), -(-w // step)
    padded = np.zeros((hb * step, wb * step), dtype=np.int8)
    padded[:h, :w] = codes
    blocks = padded.reshape(hb, step, wb, step).max(axis=(1, 3))
    chars = np.array(list(" .f#*A"))
    return "\n".join("".join(chars[row]) for row in blocks) + "\n"
