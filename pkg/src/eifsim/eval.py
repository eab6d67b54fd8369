"""Episode runner, failure classification, metrics and suite evaluation."""
from __future__ import annotations

import json
import multiprocessing
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Iterable, Optional

import numpy as np

from .attention import build_prompts, relevance
from .config import DEFAULT_CONFIG, Config
from .controller import NAVIGATE, Controller, ExplorationExhausted, NoPath
from .featmap import FeatureMap, embedding_table, pixel_features, project
from .planner import (AdapterProtocolError, AdapterTimeout, ExternalPlanner, HeuristicPlanner,
                      MapSummary, OraclePlanner, Planner, PlannerExhausted)
from .scene import Scene, generate_scene, goal_conditions_met
from .simulator import (AgentState, Motion, NotVisible, OutOfRange, interact, object_distance,
                        render_observation, reset, step_motion)

FAILURE_CLASSES = ("none", "target_not_found", "interaction_precondition", "navigation_blocked",
                   "plan_cap_exceeded", "exploration_exhausted", "goal_unmet", "planner_error")
NO_PROGRESS_LIMIT = 20


class MissingExpertLength(KeyError):
    pass


@dataclass
class EpisodeResult:
    task_id: str
    category: str
    success: bool
    conditions_met: int
    conditions_total: int
    path_m: float
    hl_steps: int
    ll_actions: int
    failure_class: str = "none"
    failure_tag: Optional[str] = None
    expert_actions: Optional[int] = None
    expert_path_m: Optional[float] = None
    trace_path: Optional[str] = None

    def __post_init__(self):
        if self.success != (self.failure_class == "none"):
            raise ValueError("failure_class must be 'none' exactly when the episode succeeds")
        if self.success and self.conditions_met != self.conditions_total:
            raise ValueError("a successful episode meets every goal condition")

    @property
    def gc(self) -> float:
        return self.conditions_met / self.conditions_total if self.conditions_total else float(self.success)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeResult":
        return cls(**d)


# ---------------------------------------------------------------------------
# trace

class Trace:
    """Append-only episode log; serialized as canonical JSON lines."""

    def __init__(self):
        self.records: list = []

    def add(self, kind: str, **fields) -> None:
        self.records.append({"kind": kind, **fields})

    def lines(self) -> list:
        return [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in self.records]

    def dumps(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())


def load_trace(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ---------------------------------------------------------------------------
# runner

class _Episode:
    def __init__(self, scene: Scene, task, planner: Planner, controller: Controller,
                 config: Config, seed: int):
        self.scene = scene
        self.task = task
        self.planner = planner
        self.controller = controller
        self.config = config
        self.seed = seed
        self.table = embedding_table(config.feature_dim, config.embedding_seed)
        self.trace = Trace()
        self.fmap = FeatureMap.for_scene(scene, config)
        self.prompts = build_prompts((), self.table)
        self.failure: Optional[dict] = None
        self.hl_steps = 0
        self.exhausted_step: Optional[str] = None

    # perception ------------------------------------------------------------
    def perceive(self, obs) -> tuple:
        feats = pixel_features(obs, self.table, self.config.fusion_temperature)
        w_raw = relevance(feats.global_feature, self.prompts, self.config.softmax_temperature)
        contrib = project(obs, feats, self.fmap.shape, self.config)
        w = self.fmap.update(contrib, w_raw)
        return w_raw, w

    def _log_action(self, cmd, outcome, target=None, w=None):
        st = self.state
        rec = {"t": st.low_level_actions, "cmd": cmd, "pose": st.pose.to_list(), "outcome": outcome,
               "odometer": st.odometer}
        if target is not None:
            rec["target"] = target
        if w is not None:
            rec["w_raw"], rec["w"] = round(w[0], 9), round(w[1], 9)
        self.trace.add("action", **rec)

    def move(self, motion) -> bool:
        prev = self.state.pose
        self.state, self.obs, blocked = step_motion(self.scene, self.state, motion, self.config)
        w = self.perceive(self.obs)
        self._log_action(Motion(motion).value, "blocked" if blocked else "ok", w=w)
        if blocked:
            self.controller.note_blocked(prev)
        return blocked

    # helpers ---------------------------------------------------------------
    def held_category(self) -> Optional[str]:
        return self.scene.obj(self.state.held_object).category if self.state.held_object is not None else None

    def frontiers(self):
        c = self.config
        return self.fmap.extract_frontiers(c.frontier_threshold, c.frontier_tokens, c.token_margin, self.seed)

    def find_done(self, step) -> bool:
        """A find step ends once a matching instance is visible and within reach."""
        visible = self.obs.visible_instances()
        for iid in visible:
            o = self.scene.obj(iid)
            if step.target_id is not None and self.controller.uses_ground_truth and iid != step.target_id:
                continue
            if o.category != step.target or o.is_held:
                continue
            d = object_distance(self.scene, self.state.pose.cell, iid)
            if self.config.min_interaction_range < d <= self.config.interaction_range:
                return True
        return False

    def fail(self, error: str, **detail) -> None:
        self.failure = {"error": error, **detail}
        self.trace.add("error", hl=self.hl_steps, error=error, **detail)

    def exhausted_detail(self, category: Optional[str]) -> dict:
        inst = self.scene.instances(category) if category else []
        present = bool(inst)
        hidden = present and all(not self.scene.is_visible(o) for o in inst)
        return {"category": category, "present": present, "closed_space": hidden}

    # step execution ----------------------------------------------------------
    def execute(self, step) -> Optional[bool]:
        """True when the step completes, False on failure, None to ask the planner again."""
        failures = 0
        idle = 0
        scene_for = lambda: self.scene if self.controller.uses_ground_truth else None  # noqa: E731
        while True:
            if step.primitive_hint is None and self.find_done(step):
                return True
            if self.state.low_level_actions >= self.config.max_ll_actions:
                discovered = any(e.category == step.target for e in self.fmap.discovered.values())
                self.fail("ActionBudget", category=step.target, discovered=discovered,
                          **{k: v for k, v in self.exhausted_detail(step.target).items() if k != "category"})
                return False
            frontiers = self.frontiers()
            try:
                cmd = self.controller.decide(step, frontiers, self.fmap, self.state, self.obs, scene_for())
            except ExplorationExhausted as err:
                if self.exhausted_step == step.body:
                    self.fail("ExplorationExhausted", **self.exhausted_detail(err.category))
                    return False
                # hand control back to the planner once; it may substitute or open a container
                self.exhausted_step = step.body
                self.trace.add("replan", hl=self.hl_steps, error="ExplorationExhausted", category=err.category)
                return None
            except NoPath as err:
                failures += 1
                self.trace.add("retry", hl=self.hl_steps, error="NoPath", reason=str(err))
                if failures > self.config.max_step_retries:
                    self.fail("NoPath", reason=str(err))
                    return False
                self.controller.reset()
                continue
            self.trace.add("decide", hl=self.hl_steps, step=step.text,
                           frontiers=[[*map(int, f.centroid), int(f.area)] for f in frontiers],
                           command=cmd.to_dict())
            if cmd.primitive == NAVIGATE:
                motions = self.controller.motions(cmd, self.state, self.fmap, scene_for())
                if not motions:
                    idle += 1
                    if idle > NO_PROGRESS_LIMIT:
                        self.fail("NoProgress", reason="controller produced no motion")
                        return False
                    continue
                idle = 0
                for m in motions[: self.config.replan_interval]:
                    if self.move(m):
                        break
                continue
            target = cmd.target_object[1]
            held_before = self.state.held_object
            out = interact(self.scene, self.state, cmd.primitive, target, self.obs, self.config)
            self.state = out.state
            if out.success:
                self.scene = out.scene
                if cmd.primitive == "PickUp":
                    self.fmap.mark_held(target)
                elif cmd.primitive == "Place" and held_before is not None:
                    self.fmap.mark_placed(held_before, self.fmap.discovered[target].cells)
                self.obs = render_observation(self.scene, self.state.pose, self.config)
                self._log_action(cmd.primitive, "success", target=target, w=self.perceive(self.obs))
                if cmd.primitive == step.primitive_hint:
                    return True
                continue
            kind = out.error_kind
            tag = out.error.tag if isinstance(out.error, OutOfRange) else (
                "not_visible" if isinstance(out.error, NotVisible) else "precondition")
            self._log_action(cmd.primitive, kind, target=target)
            self.trace.add("retry", hl=self.hl_steps, error=kind, tag=tag, reason=out.reason,
                           distance=None if out.distance != out.distance else round(out.distance, 6))
            failures += 1
            self.controller.note_interaction_failed(target, self.state.pose.cell)
            if failures > self.config.max_step_retries:
                self.fail(kind, tag=tag, reason=out.reason)
                return False

    def run(self) -> None:
        c = self.config
        self.state, self.obs = reset(self.scene, self.seed, c)
        w_raw, w = self.perceive(self.obs)
        self.trace.add("reset", pose=self.state.pose.to_list(), w_raw=round(w_raw, 9), w=round(w, 9))
        for _ in range(4):
            self.move(Motion.RotateLeft)
        done = []
        while True:
            frontiers = self.frontiers()
            usable = self.controller.usable_frontiers(frontiers)
            summary = MapSummary.from_map(self.fmap, len(usable), self.held_category())
            self.planner.frontiers = [list(f.centroid) for f in frontiers]
            try:
                step = self.planner.next_step(self.task.instruction, done, summary)
            except PlannerExhausted as err:
                self.fail("PlannerExhausted", reason=str(err))
                return
            except (AdapterTimeout, AdapterProtocolError) as err:
                self.fail(type(err).__name__, reason=str(err))
                return
            self.trace.add("plan", hl=self.hl_steps, step=step.to_dict(), done=[d.text for d in done],
                           summary=summary.to_dict())
            if step.terminal:
                return
            self.hl_steps += 1
            self.prompts = build_prompts(step.demanded_objects, self.table)
            self.controller.goal = None
            outcome = self.execute(step)
            if outcome is None:
                continue
            if not outcome:
                return
            self.exhausted_step = None
            done.append(step)


def run_episode(scene: Scene, task, planner: Planner, controller: Controller,
                config: Config = DEFAULT_CONFIG, seed: int = 0, trace_path=None) -> EpisodeResult:
    """Run one instruction to completion or failure; never raises on agent failure."""
    controller.reset()
    ep = _Episode(scene, task, planner, controller, config, seed)
    ep.trace.add("header", task_id=task.id, instruction=task.instruction, scene_seed=scene.seed,
                 size_class=scene.size_class, planner=planner.name, controller=controller.policy,
                 seed=seed, config=config.to_dict())
    ep.run()
    met = goal_conditions_met(ep.scene, task.goal)
    total = len(task.goal.conjuncts)
    success = ep.failure is None and met == total
    if ep.failure is None and not success:
        ep.fail("GoalUnmet", met=met, total=total)
    fclass, tag = ("none", None) if success else classify_failure(ep.trace.records)
    ep.trace.add("end", success=success, met=met, total=total, failure_class=fclass, tag=tag,
                 odometer=ep.state.odometer, ll_actions=ep.state.low_level_actions, hl_steps=ep.hl_steps)
    if trace_path is not None:
        ep.trace.save(trace_path)
    result = EpisodeResult(task.id, task.category, success, met, total, ep.state.odometer, ep.hl_steps,
                           ep.state.low_level_actions, fclass, tag, task.expert_actions, task.expert_path_m,
                           str(trace_path) if trace_path is not None else None)
    result.trace = ep.trace          # in-memory access for callers; not serialized
    result.final_scene = ep.scene
    return result


# ---------------------------------------------------------------------------
# failure taxonomy

def classify_failure(trace: list, result: Optional[EpisodeResult] = None) -> tuple:
    """(failure_class, sub-tag) from the last error recorded in a trace."""
    errors = [r for r in trace if r.get("kind") == "error"]
    if not errors:
        end = [r for r in trace if r.get("kind") == "end"]
        if end and end[-1].get("success"):
            return "none", None
        return "goal_unmet", None
    e = errors[-1]
    name = e["error"]
    if name == "PlannerExhausted":
        return "plan_cap_exceeded", None
    if name in ("AdapterTimeout", "AdapterProtocolError"):
        return "planner_error", name
    if name in ("OutOfRange", "NotVisible", "PreconditionViolated"):
        return "interaction_precondition", e.get("tag")
    if name == "ExplorationExhausted":
        if not e.get("present", True):
            return "exploration_exhausted", None
        return "target_not_found", "closed_space" if e.get("closed_space") else None
    if name == "ActionBudget":
        if not e.get("discovered", False):
            return "target_not_found", "closed_space" if e.get("closed_space") else None
        return "navigation_blocked", "budget"
    if name in ("NoPath", "NoProgress"):
        return "navigation_blocked", None
    if name == "GoalUnmet":
        return "goal_unmet", None
    return "goal_unmet", name


# ---------------------------------------------------------------------------
# replay

def replay_trace(scene: Scene, trace: list, config: Optional[Config] = None) -> tuple:
    """Re-execute a trace's action log; returns the final (scene, agent state)."""
    header = next(r for r in trace if r["kind"] == "header")
    config = config or Config.from_dict(header["config"])
    state, _ = reset(scene, header["seed"], config)
    for rec in trace:
        if rec["kind"] != "action":
            continue
        if rec["cmd"] in (m.value for m in Motion):
            state, _, _ = step_motion(scene, state, rec["cmd"], config)
        else:
            out = interact(scene, state, rec["cmd"], rec["target"], None, config)
            if out.success != (rec["outcome"] == "success"):
                raise ValueError(f"replay diverged at t={rec['t']}")
            state = out.state
            scene = out.scene if out.success else scene
        if state.pose.to_list() != rec["pose"]:
            raise ValueError(f"replay pose diverged at t={rec['t']}")
    return scene, state


# ---------------------------------------------------------------------------
# metrics

@dataclass
class GroupMetrics:
    n: int
    sr: float
    gc: float
    plwsr: float
    plwgc: float
    path_m: float

    def to_dict(self) -> dict:
        return {"n": self.n, "SR": self.sr, "PLWSR": self.plwsr, "GC": self.gc, "PLWGC": self.plwgc,
                "Path": self.path_m}


@dataclass
class SuiteReport:
    overall: GroupMetrics
    per_category: dict
    failures: dict
    results: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"overall": self.overall.to_dict(),
                "per_category": {k: v.to_dict() for k, v in sorted(self.per_category.items())},
                "failures": dict(sorted(self.failures.items())),
                "episodes": [r.to_dict() for r in self.results]}


def path_weight(agent_len: float, expert_len: float) -> float:
    """Expert-over-agent length ratio, clamped to 1."""
    return expert_len / max(agent_len, expert_len) if max(agent_len, expert_len) > 0 else 1.0


def _group(results: list, expert: dict) -> GroupMetrics:
    if not results:
        return GroupMetrics(0, 0.0, 0.0, 0.0, 0.0, 0.0)
    sr, gc, plwsr, plwgc, path = [], [], [], [], []
    for r in results:
        if r.task_id not in expert or expert[r.task_id] is None:
            raise MissingExpertLength(r.task_id)
        w = path_weight(r.ll_actions, expert[r.task_id])
        s = float(r.success)
        sr.append(s)
        gc.append(r.gc)
        plwsr.append(s * w)
        plwgc.append(r.gc * w)
        path.append(r.path_m)
    return GroupMetrics(len(results), float(np.mean(sr)), float(np.mean(gc)), float(np.mean(plwsr)),
                        float(np.mean(plwgc)), float(np.mean(path)))


def compute_metrics(results: Iterable[EpisodeResult], expert_lengths: Optional[dict] = None) -> SuiteReport:
    """SR, GC, their path-weighted variants and mean path, overall and per category."""
    results = sorted(results, key=lambda r: r.task_id)
    if expert_lengths is None:
        expert_lengths = {r.task_id: r.expert_actions for r in results}
    cats = sorted({r.category for r in results})
    failures: dict = {}
    for r in results:
        key = r.failure_class if r.failure_tag is None or r.success else f"{r.failure_class}/{r.failure_tag}"
        failures[key] = failures.get(key, 0) + 1
    return SuiteReport(_group(results, expert_lengths),
                       {c: _group([r for r in results if r.category == c], expert_lengths) for c in cats},
                       failures, results)


# ---------------------------------------------------------------------------
# suites

@lru_cache(maxsize=64)
def cached_scene(seed: int, size_class: str) -> Scene:
    return generate_scene(seed, size_class)


def make_planner(spec: str, task, config: Config = DEFAULT_CONFIG) -> Planner:
    if spec == "oracle":
        return OraclePlanner(task.gt_plan, config.max_hl_steps)
    if spec == "heuristic":
        return HeuristicPlanner(True, max_steps=config.max_hl_steps)
    if spec == "heuristic-nosub":
        return HeuristicPlanner(False, max_steps=config.max_hl_steps)
    if spec.startswith("external:"):
        return ExternalPlanner(spec.split(":", 1)[1], max_steps=config.max_hl_steps)
    raise ValueError(f"unknown planner {spec!r}")


def _run_one(args) -> EpisodeResult:
    task, planner_spec, policy, config, seed, trace_dir = args
    scene = cached_scene(task.scene_seed, task.size_class)
    planner = make_planner(planner_spec, task, config)
    try:
        path = None if trace_dir is None else f"{trace_dir}/{task.id}.jsonl"
        result = run_episode(scene, task, planner, Controller(policy, config, seed), config, seed, path)
    finally:
        planner.close()
    result.trace = None
    result.final_scene = None
    return result


def run_suite(tasks: Iterable, planner: str = "oracle", controller: str = "oracle",
              config: Config = DEFAULT_CONFIG, seed: int = 0, workers: int = 1,
              trace_dir: Optional[str] = None) -> list:
    """Run every task; results come back sorted by task id whatever the worker count."""
    jobs = [(t, planner, controller, config, seed, trace_dir) for t in tasks]
    if workers <= 1:
        results = [_run_one(j) for j in jobs]
    else:
        with multiprocessing.get_context("spawn").Pool(workers) as pool:
            results = pool.map(_run_one, jobs, chunksize=1)
    return sorted(results, key=lambda r: r.task_id)


def fill_expert_lengths(tasks: list, config: Config = DEFAULT_CONFIG, seed: int = 0, workers: int = 1) -> list:
    """Attach oracle-episode action counts and path lengths; drops tasks the oracle fails."""
    results = {r.task_id: r for r in run_suite(tasks, "oracle", "oracle", config, seed, workers)}
    out = []
    for t in tasks:
        r = results[t.id]
        if r.success:
            t.expert_actions = r.ll_actions
            t.expert_path_m = r.path_m
            out.append(t)
    return out
