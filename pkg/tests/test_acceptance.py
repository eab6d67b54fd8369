"""End-to-end acceptance checks; each prints one PASS/FAIL line in the terminal summary."""
import math
import time
from collections import deque

import numpy as np
import pytest

from eifsim.config import DEFAULT_CONFIG
from eifsim.controller import Controller
from eifsim.eval import (
    EpisodeResult, compute_metrics, fill_expert_lengths, replay_trace, run_episode, run_suite,
)
from eifsim.featmap import FeatureMap, embedding_table, pixel_cells, pixel_features, project
from eifsim.planner import HeuristicPlanner
from eifsim.scene import generate_scene
from eifsim.simulator import Pose, render_observation
from eifsim.tasks import generate_tasks, mixed_counts, substitution_task

from builders import ACCEPTANCE_LINES

pytestmark = pytest.mark.acceptance

THRESHOLDS = (70, 100, 150, 200)


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    assert ok, line


def corpus(n_scenes: int, per_scene: int, base_seed: int) -> list:
    tasks = []
    for s in range(n_scenes):
        scene = generate_scene(base_seed + s, ("small", "large")[s % 2])
        tasks += generate_tasks(scene, mixed_counts(per_scene), seed=s)
    return tasks


def metrics_ok(report) -> bool:
    groups = [report.overall, *report.per_category.values()]
    return all(0 <= g.plwsr <= g.sr <= g.gc <= 1 and g.plwgc <= g.gc for g in groups)


@pytest.fixture(scope="module")
def suites() -> dict:
    """Metric reports from every suite run in this module, keyed by name."""
    return {}


# ---------------------------------------------------------------------------
# 1. oracle soundness

def test_oracle_soundness(suites):
    start = time.perf_counter()
    tasks = corpus(20, 10, 1000)
    results = run_suite(tasks, "oracle", "oracle")
    elapsed = time.perf_counter() - start
    report = compute_metrics(results, {r.task_id: r.ll_actions for r in results})
    suites["oracle"] = report
    scenes = {(t.scene_seed, t.size_class) for t in tasks}
    o = report.overall
    ok = len(tasks) >= 200 and len(scenes) >= 20 and o.sr == 1.0 and o.gc == 1.0 and elapsed < 300
    verdict(1, ok, f"{len(tasks)} tasks on {len(scenes)} scenes, SR={o.sr:.3f} GC={o.gc:.3f}, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 3. batched projection equals a per-pixel loop

def naive_projection(obs, feats, shape, config=DEFAULT_CONFIG):
    n = config.image_size
    half = math.tan(math.radians(config.fov) / 2)
    out = {}
    for row in range(n):
        for col in range(n):
            t = obs.depth[row, col]
            if not math.isfinite(t):
                continue
            u = (2 * (col + 0.5) / n - 1) * half
            a = math.radians(obs.pose.heading) + math.atan(-u)
            r = math.floor(obs.pose.row + 0.5 - t / config.cell_size * math.sin(a))
            c = math.floor(obs.pose.col + 0.5 + t / config.cell_size * math.cos(a))
            if 0 <= r < shape[0] and 0 <= c < shape[1]:
                total, count = out.get((r, c), (0.0, 0))
                out[(r, c)] = (total + feats.features[row, col].astype(np.float64), count + 1)
    return out


def random_observations(n: int, seed: int):
    rng = np.random.default_rng(seed)
    scenes = [generate_scene(s, ("small", "large")[s % 2]) for s in range(4)]
    for i in range(n):
        scene = scenes[i % len(scenes)]
        rows, cols = np.nonzero(~scene.blocked)
        k = int(rng.integers(len(rows)))
        pose = Pose(int(rows[k]), int(cols[k]), int(rng.choice([0, 90, 180, 270])))
        yield scene, render_observation(scene, pose)


def test_projection_matches_per_pixel_oracle():
    mismatches = 0
    for scene, obs in random_observations(100, 3):
        feats = pixel_features(obs)
        shape = (scene.height, scene.width)
        got = project(obs, feats, shape).as_dict()
        want = naive_projection(obs, feats, shape)
        same = got.keys() == want.keys() and all(
            got[k][1] == want[k][1] and np.array_equal(got[k][0], want[k][0]) for k in want)
        mismatches += not same
    verdict(3, mismatches == 0, f"{100 - mismatches}/100 observations bit-identical")


# ---------------------------------------------------------------------------
# 4. attention-weighted update properties

def test_update_properties():
    rng = np.random.default_rng(11)
    constant_ok = outside_ok = convex_ok = True
    states = list(random_observations(48, 7))
    same_scene = [(s, o) for s, o in states if s.seed == states[0][0].seed]
    # constant raw weight: every normalized weight is exactly one
    raw = float(rng.uniform(0.05, 1.0))
    fm = FeatureMap.for_scene(same_scene[0][0])
    for _, obs in same_scene:
        before = fm.features.copy()
        contrib = project(obs, pixel_features(obs), fm.shape)
        w = fm.update(contrib, raw)
        constant_ok &= w == 1.0
        touched = np.zeros(fm.shape, dtype=bool).ravel()
        touched[contrib.cells] = True
        touched = touched.reshape(fm.shape)
        outside_ok &= np.array_equal(before[~touched], fm.features[~touched])
    # varying weights: updated cells stay between the old value and the frame mean
    fm = FeatureMap.for_scene(same_scene[0][0])
    for _, obs in same_scene:
        before = fm.features.reshape(-1, fm.dim).astype(np.float64)
        contrib = project(obs, pixel_features(obs), fm.shape)
        fm.update(contrib, float(rng.uniform(0.0, 1.0)))
        new = contrib.sums / contrib.counts[:, None]
        old = before[contrib.cells]
        after = fm.features.reshape(-1, fm.dim)[contrib.cells]
        lo, hi = np.minimum(old, new) - 1e-6, np.maximum(old, new) + 1e-6
        convex_ok &= bool(((after >= lo) & (after <= hi)).all())
        convex_ok &= bool((np.linalg.norm(after, axis=1) <= 1 + 1e-6).all())
    ok = constant_ok and outside_ok and convex_ok
    verdict(4, ok, f"constant-weight={constant_ok} outside-untouched={outside_ok} convex={convex_ok}")


# ---------------------------------------------------------------------------
# 5 and 9. greedy exploration trends

@pytest.fixture(scope="module")
def sweep_corpus():
    return fill_expert_lengths(corpus(10, 10, 2000))


@pytest.fixture(scope="module")
def sweep(sweep_corpus, suites):
    expert = {t.id: t.expert_actions for t in sweep_corpus}
    out = {}
    for th in THRESHOLDS:
        results = run_suite(sweep_corpus, "heuristic", "greedy", DEFAULT_CONFIG.replace(frontier_threshold=th))
        report = compute_metrics(results, expert)
        suites[f"greedy-{th}"] = report
        out[th] = (results, report)
    return out


def test_frontier_threshold_trend(sweep_corpus, sweep):
    paths = [sweep[th][1].overall.path_m for th in THRESHOLDS]
    srs = [sweep[th][1].overall.sr for th in THRESHOLDS]
    inversions = [(a, b) for a, b in zip(paths, paths[1:]) if b > a]
    monotone = not inversions or (len(inversions) == 1 and inversions[0][1] < inversions[0][0] * 1.05)
    sr_ok = srs[-1] <= max(srs[1], srs[2])
    detail = ", ".join(f"{th}: {p:.2f}m SR={s:.2f}" for th, p, s in zip(THRESHOLDS, paths, srs))
    verdict(5, len(sweep_corpus) >= 100 and monotone and sr_ok, f"{len(sweep_corpus)} tasks; {detail}")


def test_greedy_beats_random(sweep_corpus, sweep, suites):
    short = sorted(t.id for t in sweep_corpus if t.category == "target_specific_short")[:50]
    tasks = [t for t in sweep_corpus if t.id in set(short)]
    greedy = {r.task_id: r for r in sweep[150][0] if r.task_id in set(short)}
    random = run_suite(tasks, "heuristic", "random")
    suites["random"] = compute_metrics(random, {t.id: t.expert_actions for t in tasks})
    g = float(np.mean([greedy[i].path_m for i in short]))
    r = float(np.mean([x.path_m for x in random]))
    verdict(9, len(short) == 50 and g <= 0.9 * r, f"{len(short)} short tasks; greedy {g:.2f}m vs random {r:.2f}m")


# ---------------------------------------------------------------------------
# 6. map decoding after a full sweep

def coverage_sweep(scene, spacing=15):
    """Visit every lattice cell on a coarse grid and look in all four directions."""
    m = FeatureMap.for_scene(scene)
    table = embedding_table(m.dim)
    votes = np.zeros((scene.height * scene.width, len(table.matrix)), dtype=np.int64)
    rows, cols = np.nonzero(scene.navigable(5))
    for r, c in zip(rows, cols):
        if r % spacing or c % spacing:
            continue
        for h in (0, 90, 180, 270):
            obs = render_observation(scene, Pose(int(r), int(c), h))
            m.update(project(obs, pixel_features(obs, table), m.shape), 1.0)
            pr, pc, gr, gc, _ = pixel_cells(obs, m.shape)
            np.add.at(votes, (gr * scene.width + gc, obs.category_id[pr, pc].astype(np.int64)), 1)
    return m, votes.argmax(axis=1)


def test_decode_accuracy():
    accs = []
    for seed in range(10):
        scene = generate_scene(seed, ("small", "large")[seed % 2])
        m, truth = coverage_sweep(scene)
        decoded = m.decode().ravel()
        sel = m.has_feature.ravel() & (truth > 0)
        accs.append(float((decoded[sel] == truth[sel]).mean()))
    acc = float(np.mean(accs))
    verdict(6, acc >= 0.9, f"decode accuracy {acc:.4f} over 10 scenes (worst {min(accs):.4f})")


# ---------------------------------------------------------------------------
# 7. frontier extraction against a flood fill

def flood_fill_frontiers(free, unknown, width, threshold):
    h, w = free.shape
    near = lambda r, c: [(r + a, c + b) for a in (-1, 0, 1) for b in (-1, 0, 1)
                         if (a or b) and 0 <= r + a < h and 0 <= c + b < w]
    dist = np.full(free.shape, -1)
    queue = deque()
    for r in range(h):
        for c in range(w):
            if free[r, c] and any(unknown[p] for p in near(r, c)):
                dist[r, c] = 0
                queue.append((r, c))
    while queue:
        p = queue.popleft()
        for q in near(*p):
            if free[q] and dist[q] < 0:
                dist[q] = dist[p] + 1
                queue.append(q)
    band = (dist >= 0) & (dist < width)
    seen = np.zeros_like(band)
    comps = []
    for r in range(h):
        for c in range(w):
            if not band[r, c] or seen[r, c]:
                continue
            stack, cells = [(r, c)], []
            seen[r, c] = True
            while stack:
                p = stack.pop()
                cells.append(p)
                for q in near(*p):
                    if band[q] and not seen[q]:
                        seen[q] = True
                        stack.append(q)
            if len(cells) >= threshold:
                rr = sum(p[0] for p in cells) / len(cells)
                cc = sum(p[1] for p in cells) / len(cells)
                comps.append((len(cells), (math.floor(rr + 0.5), math.floor(cc + 0.5)), sorted(cells)))
    return sorted(comps, key=lambda x: (-x[0], x[1]))


def random_layout(rng, size=48):
    """Unknown background with random free rooms and obstacle blocks."""
    g = np.zeros((size, size), dtype=np.int8)
    for _ in range(int(rng.integers(2, 7))):
        r, c = rng.integers(0, size - 4, 2)
        g[r:r + rng.integers(4, 24), c:c + rng.integers(4, 24)] = 1
    for _ in range(int(rng.integers(0, 5))):
        r, c = rng.integers(0, size - 2, 2)
        g[r:r + rng.integers(1, 8), c:c + rng.integers(1, 8)] = 2
    return g


def test_frontier_extraction_matches_flood_fill():
    from eifsim.featmap import FRONTIER_BAND
    rng = np.random.default_rng(17)
    checked = mismatches = 0
    for i in range(60):
        g = random_layout(rng)
        m = FeatureMap(*g.shape, 4)
        m.free_seen, m.obstacle_seen = g == 1, g == 2
        threshold = 150 if i % 2 else int(rng.integers(1, 150))
        got = m.extract_frontiers(threshold, 32)
        want = flood_fill_frontiers(g == 1, g == 0, FRONTIER_BAND, threshold)
        checked += len(want)
        same = len(got) == len(want) and all(
            f.area == a and f.centroid == cen and sorted(map(tuple, f.cells.tolist())) == cells
            and f.tokens.shape == (32, 4) and len(f.token_cells) == 32
            for f, (a, cen, cells) in zip(got, want))
        mismatches += not same
    # a frontier of 10 cells still yields 32 tokens by repetition
    m = FeatureMap(20, 20, 4)
    m.obstacle_seen[:] = True
    m.obstacle_seen[5, 5:15] = False
    m.free_seen[5, 5:15] = True
    m.obstacle_seen[4, 5:15] = False
    tiny = m.extract_frontiers(1, 32)
    padded = len(tiny) == 1 and tiny[0].area == 10 and len(tiny[0].token_cells) == 32 \
        and len({tuple(c) for c in tiny[0].token_cells.tolist()}) == 10
    ok = mismatches == 0 and checked > 0 and padded
    verdict(7, ok, f"{60 - mismatches}/60 layouts match ({checked} frontiers), padding={padded}")


# ---------------------------------------------------------------------------
# 8. substitution

def test_substitution_contrast(suites):
    pairs = []
    for seed in range(400):
        scene = generate_scene(seed, "small")
        task = substitution_task(scene, seed)
        if task is not None:
            pairs.append((scene, task))
        if len(pairs) == 10:
            break
    sr = {}
    for sub in (True, False):
        results = [run_episode(s, t, HeuristicPlanner(substitution=sub), Controller("greedy"), seed=0)
                   for s, t in pairs]
        sr[sub] = float(np.mean([r.success for r in results]))
        suites[f"substitution-{sub}"] = compute_metrics(results, {r.task_id: max(r.ll_actions, 1) for r in results})
    verdict(8, len(pairs) >= 10 and sr[True] >= 0.7 and sr[False] == 0.0,
            f"{len(pairs)} scenes; SR with substitution {sr[True]:.2f}, without {sr[False]:.2f}")


# ---------------------------------------------------------------------------
# 10. determinism and replay

def test_determinism_and_replay():
    checked, ok = 0, True
    for seed in (3, 8):
        scene = generate_scene(seed, ("small", "large")[seed % 2])
        for task in generate_tasks(scene, mixed_counts(3), seed=seed):
            for policy in ("greedy", "random"):
                a = run_episode(scene, task, HeuristicPlanner(), Controller(policy, seed=4), seed=4)
                b = run_episode(scene, task, HeuristicPlanner(), Controller(policy, seed=4), seed=4)
                final, state = replay_trace(scene, a.trace.records)
                ok &= a.trace.dumps() == b.trace.dumps()
                ok &= final.serialize() == a.final_scene.serialize()
                ok &= state.low_level_actions == a.ll_actions
                checked += 1
    verdict(10, ok, f"{checked} episodes rerun byte-identically and replayed to the same final state")


# ---------------------------------------------------------------------------
# 2. metric sanity (runs last so it sees every suite above)

def test_metric_sanity(suites):
    fixture = [EpisodeResult(f"t{i}", "c", i % 3 != 0, 1 if i % 3 else 0, 1, 1.0, 1, 200, "none" if i % 3 else
                             "goal_unmet") for i in range(12)]
    report = compute_metrics(fixture, {f"t{i}": 100 for i in range(12)})
    halved = report.overall.plwsr == report.overall.sr / 2
    bad = [name for name, rep in suites.items() if not metrics_ok(rep)]
    verdict(2, halved and not bad and len(suites) > 0,
            f"PLWSR=SR/2 on the doubled-length fixture: {halved}; {len(suites) - len(bad)}/{len(suites)} suites in bounds")
