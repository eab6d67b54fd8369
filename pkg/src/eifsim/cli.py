"""Command-line entry point: scene and task generation, episodes, evaluation,
SFT export and trace rendering.

Every subcommand resolves a Config from ``--config FILE``, then ``EIF_*``
environment variables, then flags, and logs the result as a JSON block that
can be fed back through ``--config`` to reproduce the run.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .config import Config, ConfigError, load_config
from .controller import Controller
from .eval import (
    MissingExpertLength, compute_metrics, fill_expert_lengths, load_trace, make_planner,
    run_episode, run_suite,
)
from .planner import AdapterProtocolError, AdapterTimeout
from .render import render_ascii, render_rgb, replay_map, save_png
from .scene import SIZE_CLASSES, GenerationError, Scene, generate_scene
from .tasks import emit_sft_samples, generate_tasks, load_tasks, save_tasks, substitution_task

log = logging.getLogger("eifsim")

DOMAIN_ERRORS = (ConfigError, GenerationError, MissingExpertLength, AdapterTimeout,
                 AdapterProtocolError, OSError, ValueError, KeyError)

CSV_FIELDS = ("task_id", "category", "success", "conditions_met", "conditions_total", "path_m",
              "hl_steps", "ll_actions", "expert_actions", "failure_class", "failure_tag")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        sys.stderr.write("config file schema (JSON object, all keys optional):\n" + config_schema_help())
        raise UsageError(message)


def config_schema_help() -> str:
    default = Config()
    lines = [f"  {f.name}: {f.type if isinstance(f.type, str) else f.type.__name__} = {getattr(default, f.name)!r}"
             for f in fields(Config)]
    return "\n".join(lines) + "\n"


def parse_seeds(text: str) -> list:
    """``A..B`` (inclusive) or a comma-separated list."""
    if ".." in text:
        lo, hi = text.split("..", 1)
        lo, hi = int(lo), int(hi)
        if hi < lo:
            raise argparse.ArgumentTypeError(f"empty seed range {text!r}")
        return list(range(lo, hi + 1))
    try:
        return [int(s) for s in text.split(",") if s]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def _key_value(text: str) -> tuple:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--set", dest="overrides", action="append", type=_key_value, default=[],
                        metavar="KEY=VALUE", help="override one config field (repeatable)")
    common.add_argument("--seed", type=int, help="seed threaded to every stochastic component")
    common.add_argument("--frontier-threshold", type=int, help="minimum frontier area in cells")
    common.add_argument("--max-hl-steps", type=int, help="high-level plan step cap")
    common.add_argument("-q", "--quiet", action="store_true", help="only log warnings")

    parser = _Parser(prog="eifsim", description=__doc__.splitlines()[0],
                     formatter_class=argparse.RawDescriptionHelpFormatter,
                     epilog="config file schema (JSON object, all keys optional):\n" + config_schema_help())
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-scenes", parents=[common], help="generate scene files")
    p.add_argument("--seeds", type=parse_seeds, required=True, help="A..B or comma list")
    p.add_argument("--size", choices=SIZE_CLASSES + ("mixed",), default="small",
                   help="mixed alternates small (even seeds) and large (odd seeds)")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("gen-tasks", parents=[common], help="generate a validated task corpus")
    p.add_argument("--scene", action="append", required=True, help="scene file (repeatable)")
    p.add_argument("--n-short", type=int, default=0)
    p.add_argument("--n-long", type=int, default=0)
    p.add_argument("--n-abstract", type=int, default=0)
    p.add_argument("--substitution", action="store_true",
                   help="add one absent-object substitution task per scene where possible")
    p.add_argument("--no-expert", action="store_true",
                   help="skip the oracle episodes that record expert lengths")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="task file to write")

    p = sub.add_parser("run", parents=[common], help="run one episode")
    p.add_argument("--scene", required=True, help="scene file")
    p.add_argument("--task", required=True, help="task file")
    p.add_argument("--task-id", help="task to run (default: first task for the scene)")
    p.add_argument("--planner", default="oracle", help="oracle | heuristic | heuristic-nosub | external:CMD")
    p.add_argument("--controller", default="oracle", choices=Controller.POLICIES)
    p.add_argument("--trace", help="JSONL trace output")

    p = sub.add_parser("eval", parents=[common], help="evaluate a planner/controller pair on a corpus")
    p.add_argument("--corpus", required=True, help="task file")
    p.add_argument("--planner", default="oracle")
    p.add_argument("--controller", default="oracle", choices=Controller.POLICIES)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--report", help="JSON report output (default: stdout)")
    p.add_argument("--csv", help="per-episode CSV output")
    p.add_argument("--trace-dir", help="directory for per-episode traces")

    p = sub.add_parser("export-sft", parents=[common], help="write SFT samples from oracle episodes")
    p.add_argument("--corpus", required=True, help="task file")
    p.add_argument("--out", required=True, help="JSONL output")

    p = sub.add_parser("render", parents=[common], help="top-down view of a trace's final map")
    p.add_argument("--trace", required=True, help="JSONL trace")
    p.add_argument("--out", required=True, help="output file (.png for an image, anything else for text)")
    p.add_argument("--format", choices=("png", "ascii"), help="override the format implied by --out")
    p.add_argument("--scene", help="scene file (default: regenerate from the trace header)")
    p.add_argument("--scale", type=int, default=2, help="PNG pixels per cell")
    p.add_argument("--snapshot", help="also write the binary map snapshot here")
    return parser


def resolve_config(args) -> Config:
    overrides = dict(args.overrides)
    for key in ("seed", "frontier_threshold", "max_hl_steps"):
        if getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    return load_config(args.config, overrides)


# ---------------------------------------------------------------------------
# subcommands

def cmd_gen_scenes(args, config: Config) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for seed in args.seeds:
        size = args.size if args.size != "mixed" else SIZE_CLASSES[seed % 2]
        scene = generate_scene(seed, size)
        path = out / f"scene_{size}_{seed}.json"
        scene.save(path)
        log.info("wrote %s (%d objects, %d rooms)", path, len(scene.objects), len(scene.rooms))
    return 0


def cmd_gen_tasks(args, config: Config) -> int:
    counts = {"target_specific_short": args.n_short, "target_specific_long": args.n_long,
              "abstract": args.n_abstract}
    tasks = []
    for path in args.scene:
        scene = Scene.load(path)
        made = generate_tasks(scene, counts, config.seed, existing=[t.instruction for t in tasks])
        if args.substitution:
            sub = substitution_task(scene, config.seed)
            if sub is not None:
                made.append(sub)
        log.info("%s: %d tasks", path, len(made))
        tasks.extend(made)
    if not args.no_expert:
        before = len(tasks)
        tasks = fill_expert_lengths(tasks, config, config.seed, args.workers)
        if len(tasks) < before:
            log.warning("dropped %d tasks the oracle could not complete", before - len(tasks))
    save_tasks(tasks, args.out)
    log.info("wrote %d tasks to %s", len(tasks), args.out)
    return 0


def cmd_run(args, config: Config) -> int:
    scene = Scene.load(args.scene)
    tasks = load_tasks(args.task)
    if args.task_id is not None:
        matches = [t for t in tasks if t.id == args.task_id]
    else:
        matches = [t for t in tasks if (t.scene_seed, t.size_class) == (scene.seed, scene.size_class)]
    if not matches:
        raise KeyError(f"no matching task in {args.task}")
    task = matches[0]
    if (task.scene_seed, task.size_class) != (scene.seed, scene.size_class):
        raise ValueError(f"task {task.id} belongs to scene {task.size_class}-{task.scene_seed}")
    planner = make_planner(args.planner, task, config)
    try:
        result = run_episode(scene, task, planner, Controller(args.controller, config, config.seed),
                             config, config.seed, args.trace)
    finally:
        planner.close()
    print(json.dumps(result.to_dict(), sort_keys=True))
    return 0


def _write_csv(results, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS, extrasaction="ignore")
        writer.writeheader()
        for r in results:
            writer.writerow(r.to_dict())


def cmd_eval(args, config: Config) -> int:
    tasks = load_tasks(args.corpus)
    missing = [t for t in tasks if t.expert_actions is None]
    if missing:
        log.warning("%d tasks lack expert lengths; running the oracle for them", len(missing))
        fill_expert_lengths(missing, config, config.seed, args.workers)
    if args.trace_dir:
        Path(args.trace_dir).mkdir(parents=True, exist_ok=True)
    results = run_suite(tasks, args.planner, args.controller, config, config.seed, args.workers,
                        args.trace_dir)
    expert = {t.id: t.expert_actions for t in tasks}
    report = compute_metrics(results, expert).to_dict()
    report["config"] = config.to_dict()
    report["planner"], report["controller"] = args.planner, args.controller
    text = json.dumps(report, indent=1, sort_keys=True)
    if args.report:
        Path(args.report).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)
    if args.csv:
        _write_csv(results, args.csv)
    o = report["overall"]
    log.info("n=%d SR=%.3f GC=%.3f PLWSR=%.3f PLWGC=%.3f Path=%.2fm",
             o["n"], o["SR"], o["GC"], o["PLWSR"], o["PLWGC"], o["Path"])
    return 0


def cmd_export_sft(args, config: Config) -> int:
    tasks = load_tasks(args.corpus)
    written = skipped = 0
    with open(args.out, "w", encoding="utf-8") as fh:
        for task in tasks:
            scene = generate_scene(task.scene_seed, task.size_class)
            planner = make_planner("oracle", task, config)
            result = run_episode(scene, task, planner, Controller("oracle", config, config.seed),
                                 config, config.seed)
            if not result.success:
                skipped += 1
                log.warning("oracle failed on %s (%s); no samples", task.id, result.failure_class)
                continue
            for rec in emit_sft_samples(result.trace.records, task):
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
                written += 1
    log.info("wrote %d samples to %s (%d tasks skipped)", written, args.out, skipped)
    return 0


def cmd_render(args, config: Config) -> int:
    trace = load_trace(args.trace)
    scene = Scene.load(args.scene) if args.scene else None
    replay = replay_map(trace, scene)
    threshold = replay.config.frontier_threshold
    fmt = args.format or ("png" if str(args.out).lower().endswith(".png") else "ascii")
    if fmt == "png":
        save_png(render_rgb(replay.fmap, replay.poses, threshold, args.scale), args.out)
    else:
        Path(args.out).write_text(render_ascii(replay.fmap, replay.poses, threshold), encoding="utf-8")
    if args.snapshot:
        replay.fmap.export(args.snapshot)
    log.info("wrote %s (%s)", args.out, fmt)
    return 0


COMMANDS = {"gen-scenes": cmd_gen_scenes, "gen-tasks": cmd_gen_tasks, "run": cmd_run,
            "eval": cmd_eval, "export-sft": cmd_export_sft, "render": cmd_render}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return 2
    except SystemExit as exc:            # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        config = resolve_config(args)
        log.info("effective config:\n%s", config.canonical_json().rstrip())
        return COMMANDS[args.command](args, config)
    except DOMAIN_ERRORS as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
