"""Command-line entry point.

Exit codes: 0 success, 2 usage or I/O problem, 3 domain failure (diverged
training, infeasible plan, unresolvable evidence passed to execution).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig, load_config
from .core import read_episode, split_dataset, write_episode
from .errors import Demo2PlanError, IoError, SchemaError, UsageError
from .evaluation import (
    execute_plan,
    format_ablation,
    format_grasps,
    keyframe_hits,
    mean_or_nan,
    plan_for,
)
from .planning import PlanStep
from .render import timeline_svg, timeline_text
from .segmenter import (
    ABLATION,
    LossConfig,
    cosine_schedule,
    even_steps,
    frame_accuracy,
    infer,
    init_params,
    load_params,
    save_params,
    train,
    write_log,
)
from .sim import gen_dataset, score_run

log = logging.getLogger("demo2plan")

MANIFEST = "manifest.json"


# --- helpers -----------------------------------------------------------------


def _clean(obj):
    """JSON-safe copy: numpy scalars become Python numbers, NaN becomes null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _dumps(obj):
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _write_text(path, text):
    path = Path(path)
    try:
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _read_json(path, what):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read {what} {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{what} {path} is not valid JSON (line {exc.lineno}): {exc.msg}") from exc


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _load_dataset(data_dir):
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise IoError(f"data directory {data_dir} does not exist")
    manifest = data_dir / MANIFEST
    if manifest.exists():
        files = [data_dir / e["file"] for e in _read_json(manifest, "manifest")["episodes"]]
    else:
        files = sorted(data_dir.glob("*.jsonl"))
    if not files:
        raise IoError(f"no episodes found in {data_dir}")
    return [read_episode(f) for f in files]


def _split(cfg: PipelineConfig, episodes):
    return split_dataset(episodes, cfg.dataset.train_fraction, cfg.seeds.split)


def _steps_for(arg, total):
    if arg == "direct":
        return [total]
    try:
        n = int(arg)
    except ValueError:
        raise UsageError(f"--steps must be 'direct' or a positive integer, got {arg!r}") from None
    if not 1 <= n <= total:
        raise UsageError(f"--steps must lie in [1, {total}]")
    return even_steps(total, n)


def _losses(arg):
    try:
        return LossConfig.from_names(arg.split(","))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _loss_slug(lc: LossConfig):
    return lc.name.lower().replace(" + ", "_")


# --- commands ----------------------------------------------------------------


def cmd_gen_dataset(args, cfg: PipelineConfig):
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise IoError(f"cannot write to {out}: {exc}") from exc
    per_object = cfg.dataset.per_object if args.per_object is None else args.per_object
    seed = cfg.seeds.dataset if args.seed is None else args.seed
    if per_object < 1:
        raise UsageError("--per-object must be at least 1")
    ds = cfg.dataset
    episodes = gen_dataset(
        list(cfg.catalog), per_object, seed, cfg.noise, cfg.camera_model(), cfg.table,
        frame_count=ds.frame_count, fps=ds.fps, feature_dim=ds.feature_dim,
    )
    entries = []
    for i, ep in enumerate(episodes):
        name = f"ep{i:04d}_{ep.id.split('-')[0]}.jsonl"
        write_episode(ep, out / name)
        entries.append({"file": name, "id": ep.id, "sha256": _sha256(out / name)})
    digest = hashlib.sha256("".join(e["sha256"] for e in entries).encode()).hexdigest()
    manifest = {
        "version": __version__,
        "seed": seed,
        "per_object": per_object,
        "objects": [o.object_id for o in cfg.catalog],
        "noise": asdict(cfg.noise),
        "episodes": entries,
        "dataset_sha256": digest,
    }
    _write_text(out / MANIFEST, _dumps(manifest))
    print(f"wrote {len(entries)} episodes to {out} (dataset hash {digest[:16]})")
    return 0


def cmd_train(args, cfg: PipelineConfig):
    lc = _losses(args.losses) if args.losses else cfg.loss
    episodes = _load_dataset(args.data)
    train_set, test_set = _split(cfg, episodes)
    overrides = {} if args.epochs is None else {"epochs": args.epochs}
    hyper = cfg.train_hyper(**overrides)
    sched = cfg.noise_schedule()
    rows = []
    params = train(train_set, lc, sched, hyper, log_rows=rows)
    save_params(params, args.out)
    log_path = Path(args.log) if args.log else Path(args.out).with_suffix(".csv")
    try:
        write_log(rows, log_path)
    except OSError as exc:
        raise IoError(f"cannot write training log {log_path}: {exc}") from exc
    print(
        f"trained {lc.name} on {len(train_set)} episodes ({len(test_set)} held out), "
        f"{len(rows)} steps; checkpoint {args.out}, log {log_path}"
    )
    return 0


def cmd_segment(args, cfg: PipelineConfig):
    params = load_params(args.model)
    ep = read_episode(args.episode)
    sched = cosine_schedule(params.total_steps, cfg.schedule.scale)
    steps = _steps_for(args.steps, params.total_steps)
    labels = infer(ep.feature_matrix(), params, sched, steps, cfg.seeds.infer)
    gt = ep.labels()
    acc = None if gt is None else frame_accuracy(labels, gt)
    doc = {
        "episode": ep.id,
        "steps": args.steps,
        "labels": labels.tolist(),
        "frame_accuracy": acc,
    }
    _write_text(args.out, _dumps(doc))
    extra = "" if acc is None else f", frame accuracy {acc:.4f}"
    print(f"segmented {ep.id} with {len(steps)} step(s){extra}")
    return 0


def _labels_from_timeline(path, frame_count):
    doc = _read_json(path, "timeline")
    labels = doc.get("labels") if isinstance(doc, dict) else None
    if not isinstance(labels, list) or not all(isinstance(v, int) for v in labels):
        raise SchemaError(f"timeline {path} has no integer 'labels' array")
    if frame_count is not None and len(labels) != frame_count:
        raise SchemaError(f"timeline has {len(labels)} labels, episode has {frame_count} frames")
    return labels


def cmd_plan(args, cfg: PipelineConfig):
    ep = read_episode(args.episode)
    if args.timeline:
        labels = _labels_from_timeline(args.timeline, ep.frame_count)
    else:
        labels = ep.labels()
        if labels is None:
            raise UsageError("episode has no ground-truth labels; pass --timeline")
    report = plan_for(ep, labels, cfg)
    doc = report.to_dict()
    doc["episode"] = str(args.episode)
    doc["episode_id"] = ep.id
    _write_text(args.out, _dumps(doc))
    if report.is_plan:
        print(f"plan with {len(report.steps)} steps written to {args.out}")
    else:
        why = ", ".join(sorted({r["reason"] for r in report.reasons}))
        print(f"request for a new demonstration ({why}) written to {args.out}")
    return 0


def _resolve_episode_path(plan_path, recorded):
    p = Path(recorded)
    if p.is_absolute() or p.exists():
        return p
    alt = Path(plan_path).parent / p
    return alt if alt.exists() else p


def cmd_execute(args, cfg: PipelineConfig):
    doc = _read_json(args.plan, "plan")
    if not isinstance(doc, dict) or "outcome" not in doc or "episode" not in doc:
        raise SchemaError(f"{args.plan} is not a plan document")
    if doc["outcome"] != "plan":
        print("plan document requests a new demonstration; nothing to execute", file=sys.stderr)
        return 3
    try:
        steps = [PlanStep.from_dict(s) for s in doc["steps"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed plan step: {exc}") from exc
    ep = read_episode(_resolve_episode_path(args.plan, doc["episode"]))
    result = execute_plan(steps, ep, cfg)
    _write_text(args.out, _dumps(result.to_dict()))
    ok = sum(g["success"] for g in result.grasp_outcomes)
    print(
        f"executed {len(steps)} steps: {ok}/{len(result.grasp_outcomes)} grasps succeeded, "
        f"imitation {'succeeded' if result.imitation_success else 'failed'}"
    )
    return 0


def _models_for_eval(model_arg, cfg, train_set, sched):
    """Checkpoint per ablation row: loaded when provided, trained otherwise."""
    found = {}
    if model_arg:
        p = Path(model_arg)
        if p.is_dir():
            for lc in ABLATION:
                f = p / f"{_loss_slug(lc)}.bin"
                if f.exists():
                    found[lc.name] = load_params(f)
        elif p.exists():
            found[ABLATION[0].name] = load_params(p)
        else:
            raise IoError(f"model path {p} does not exist")
    out = {}
    for lc in ABLATION:
        if lc.name in found:
            out[lc.name] = (found[lc.name], "loaded")
        else:
            log.info("training %s for the ablation", lc.name)
            out[lc.name] = (train(train_set, lc, sched, cfg.train_hyper()), "trained")
    return out


def cmd_eval(args, cfg: PipelineConfig):
    episodes = _load_dataset(args.data)
    train_set, test_set = _split(cfg, episodes)
    sched = cfg.noise_schedule()
    models = _models_for_eval(args.model, cfg, train_set, sched)
    tol = cfg.execute.position_tolerance
    rows, grasp_block = [], None
    for lc in ABLATION:
        params, origin = models[lc.name]
        psched = cosine_schedule(params.total_steps, cfg.schedule.scale)
        direct, multi, hits = [], [], []
        results, requests, infeasible, per_episode = [], 0, 0, []
        for ep in test_set:
            cond, gt = ep.feature_matrix(), ep.labels()
            lab_d = infer(cond, params, psched, [params.total_steps], cfg.seeds.infer)
            lab_m = infer(cond, params, psched, even_steps(params.total_steps, 100), cfg.seeds.infer)
            direct.append(frame_accuracy(lab_d, gt))
            multi.append(frame_accuracy(lab_m, gt))
            report = plan_for(ep, lab_m, cfg)
            h = keyframe_hits(report.segments, ep, tol)
            hits.extend(h)
            entry = {"episode": ep.id, "seg_direct": direct[-1], "seg_100": multi[-1],
                     "keyframe_hits": h, "outcome": "plan" if report.is_plan else "request_new_demonstration"}
            if lc == ABLATION[0]:
                if not report.is_plan:
                    requests += 1
                else:
                    try:
                        res = execute_plan(report.steps, ep, cfg)
                        results.append(res)
                        entry["imitation_success"] = res.imitation_success
                    except Demo2PlanError as exc:
                        infeasible += 1
                        entry["execution_error"] = str(exc)
            per_episode.append(entry)
        rows.append({
            "name": lc.name, "model": origin,
            "seg_direct": mean_or_nan(direct), "seg_100": mean_or_nan(multi),
            "seg_direct_min": min(direct), "seg_100_min": min(multi),
            "position": mean_or_nan(hits), "episodes": per_episode,
        })
        if lc == ABLATION[0]:
            summary = score_run(results) if results else {
                "grasp_rate": None, "first_grasp_rate": None, "second_grasp_rate": None,
                "imitation_rate": None, "runs": 0,
            }
            grasp_block = {**summary, "requests_new_demonstration": requests,
                           "infeasible_plans": infeasible, "test_episodes": len(test_set)}
    text = "\n".join([
        f"Evaluation on {len(test_set)} held-out episodes ({len(train_set)} used for training)",
        "",
        format_ablation(rows),
        "",
        f"Grasping and imitation ({grasp_block['runs']} executed plans, CE model, 100-step labels;"
        f" {grasp_block['requests_new_demonstration']} requests for a new demonstration,"
        f" {grasp_block['infeasible_plans']} infeasible)",
        format_grasps(grasp_block),
        "",
    ])
    doc = {"ablation": rows, "grasping": grasp_block, "position_tolerance_m": tol,
           "train_episodes": len(train_set), "test_episodes": len(test_set)}
    out = Path(args.out)
    json_path = out if out.suffix == ".json" else out.with_suffix(".json")
    _write_text(json_path, _dumps(doc))
    _write_text(json_path.with_suffix(".txt"), text)
    print(text, end="")
    return 0


def cmd_render_timeline(args, cfg: PipelineConfig):
    doc = _read_json(args.timeline, "timeline")
    pred = _labels_from_timeline(args.timeline, None)
    gt = None
    if args.gt:
        if str(args.gt).endswith(".jsonl"):
            gt = read_episode(args.gt).labels()
            if gt is None:
                raise SchemaError(f"{args.gt} has no ground-truth labels")
            gt = gt.tolist()
        else:
            gt = _labels_from_timeline(args.gt, None)
        if len(gt) != len(pred):
            raise SchemaError(f"ground truth has {len(gt)} frames, prediction {len(pred)}")
    out = Path(args.out)
    if out.suffix == ".txt":
        _write_text(out, timeline_text(pred, gt))
    elif out.suffix == ".svg":
        _write_text(out, timeline_svg(pred, gt, title=doc.get("episode")))
    else:
        raise UsageError("--out must end in .svg or .txt")
    print(f"timeline written to {out}")
    return 0


# --- parser ------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="demo2plan", description="Imitation from a single demonstration, synthetically.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="pipeline TOML file (defaults built in)")
        sp.set_defaults(func=fn)
        return sp

    sp = add("gen-dataset", cmd_gen_dataset, "generate synthetic demonstrations")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--per-object", type=int)
    sp.add_argument("--seed", type=int)

    sp = add("train", cmd_train, "train the segmenter on the training split")
    sp.add_argument("--data", required=True, help="dataset directory")
    sp.add_argument("--losses", help="comma list from ce, ba, ts (default: [loss] section)")
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--log", help="CSV loss log (default: checkpoint path with .csv)")
    sp.add_argument("--epochs", type=int)

    sp = add("segment", cmd_segment, "label every frame of an episode")
    sp.add_argument("--model", required=True)
    sp.add_argument("--episode", required=True)
    sp.add_argument("--steps", default="100", help="'direct' or a number of denoising steps")
    sp.add_argument("--out", required=True)

    sp = add("plan", cmd_plan, "ground a timeline and synthesize a plan")
    sp.add_argument("--episode", required=True)
    sp.add_argument("--timeline", help="timeline JSON (default: the episode's own labels)")
    sp.add_argument("--out", required=True)

    sp = add("execute", cmd_execute, "run a plan on the simulated arm")
    sp.add_argument("--plan", required=True)
    sp.add_argument("--out", required=True)

    sp = add("eval", cmd_eval, "ablation table and grasp statistics on the test split")
    sp.add_argument("--data", required=True)
    sp.add_argument("--model", help="checkpoint for the CE row, or a directory of <losses>.bin files")
    sp.add_argument("--out", required=True, help="report path; .json and .txt are written")

    sp = add("render-timeline", cmd_render_timeline, "draw predicted (and true) timelines")
    sp.add_argument("--timeline", required=True)
    sp.add_argument("--gt", help="episode JSONL or timeline JSON with ground truth")
    sp.add_argument("--out", required=True, help="output .svg or .txt")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except Demo2PlanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
