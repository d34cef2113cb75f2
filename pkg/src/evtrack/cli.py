"""Command-line pipeline: simulate, track, evaluate, gradcheck.

Each subcommand is driven by a flat `key = value` config file (see
config.RunConfig for the key list). `simulate` writes an event stream,
per-step states, per-event-frame ground truth, and a manifest echoing every
config value; `track` recovers per-frame parameters from the event file;
`evaluate` scores tracked output against ground truth as a metrics CSV.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, write_manifest
from .errors import ConfigError, EvtrackError, MetricError
from .events import (EventStream, adaptive_next_timestamp, frame_windows,
                     load_events, save_events_binary, save_events_text,
                     synth_events_from_images)
from .geometry import (ArticulatedModel, ParamSet, load_obj, posed_joints,
                       posed_vertices, save_obj, template_mesh)
from .metrics import e_3d, e_joint3d, write_metrics_csv
from .optim import TrackSetup, initial_params, track_sequence
from .render import render_gray, save_pgm
from .scenes import build_scene, load_model_json, save_model_json


def _float_csv(v: float) -> str:
    return repr(float(v))


# ---------------------------------------------------------------------------
# simulate


def _simulate_states(cfg: RunConfig, scene, camera, settings):
    """Render scene states at uniform or adaptive timestamps."""
    duration = cfg.n_steps * cfg.dt_us
    c_int = cfg.c_internal
    times, images, params = [], [], []

    def state_at(t_us: int):
        tau = t_us / duration
        p = scene.params_at(tau)
        mesh = template_mesh(scene.model).with_vertices(posed_vertices(scene.model, p))
        return p, render_gray(mesh, camera, settings)

    if not cfg.adaptive:
        for k in range(cfg.n_steps):
            t = k * cfg.dt_us
            p, img = state_at(t)
            times.append(t)
            params.append(p)
            images.append(img)
        return times, images, params

    t = 0
    p, img = state_at(t)
    times, params, images = [t], [p], [img]
    t = cfg.dt_us
    max_steps = max(cfg.n_steps * 50, 2000)
    while t < duration and len(times) < max_steps:
        p, img = state_at(t)
        times.append(t)
        params.append(p)
        images.append(img)
        diff = images[-1].pixels - images[-2].pixels
        t = adaptive_next_timestamp(diff, times[-1], times[-2], c_int,
                                    lam=cfg.adaptive_lam)
    return times, images, params


def cmd_simulate(cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene = build_scene(cfg)
    camera = cfg.camera()
    settings = cfg.raster_settings()
    rng = np.random.default_rng(cfg.seed)

    times, images, params = _simulate_states(cfg, scene, camera, settings)

    if cfg.dump_images:
        (out / "renders").mkdir(exist_ok=True)
        for k, img in enumerate(images):
            save_pgm(img, out / "renders" / f"step_{k:04d}.pgm")

    batches = []
    for k in range(1, len(times)):
        seg = synth_events_from_images(images[k - 1], images[k], cfg.c_internal,
                                       times[k - 1], times[k])
        if cfg.noise_rate > 0:
            n = int(rng.poisson(cfg.noise_rate))
            if n:
                noise = EventStream(
                    np.full(n, times[k], dtype=np.uint64),
                    rng.integers(0, cfg.width, n),
                    rng.integers(0, cfg.height, n),
                    rng.choice(np.array([-1, 1], dtype=np.int8), n),
                    cfg.width, cfg.height)
                seg = EventStream.concatenate([seg, noise])
        # a sensor fires pixels asynchronously, not in readout order: shuffle
        # each equal-timestamp batch so count-based windows stay spatially
        # unbiased when they split a batch
        perm = rng.permutation(len(seg))
        batches.append(EventStream(seg.t[perm], seg.x[perm], seg.y[perm],
                                   seg.p[perm], seg.width, seg.height))
    stream = (EventStream.concatenate(batches) if batches
              else EventStream.empty(cfg.width, cfg.height))

    events_path = Path(cfg.events) if cfg.events else out / "events.txt"
    events_path.parent.mkdir(parents=True, exist_ok=True)
    if cfg.event_format == "binary":
        save_events_binary(stream, events_path)
    else:
        save_events_text(stream, events_path)

    # template / model and per-step states
    states_dir = out / "states"
    states_dir.mkdir(exist_ok=True)
    if scene.branch == "parametric":
        save_model_json(scene.model, out / "model.json")
        with open(states_dir / "params.csv", "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["step", "t_us"] + [f"p{i}" for i in range(params[0].dim)])
            for k, p in enumerate(params):
                wr.writerow([k, times[k]] + [_float_csv(v) for v in p.flatten()])
    else:
        save_obj(out / "template.obj", template_mesh(scene.model))
    for k, p in enumerate(params):
        save_obj(states_dir / f"state_{k:04d}.obj",
                 posed_vertices(scene.model, p), template_mesh(scene.model).faces)

    # ground truth per event frame (window of T events)
    gt_dir = out / "gt"
    gt_dir.mkdir(exist_ok=True)
    windows = frame_windows(stream, cfg.T)
    times_arr = np.asarray(times)
    gt_rows = []
    gt_joint_rows = []
    for i, frame in enumerate(windows):
        idx = int(np.argmin(np.abs(times_arr - frame.t_last)))
        p = params[idx]
        save_obj(gt_dir / f"frame_{i:04d}.obj",
                 posed_vertices(scene.model, p), template_mesh(scene.model).faces)
        gt_rows.append([i, frame.t_last, idx])
        if scene.branch == "parametric":
            joints = posed_joints(scene.model, p)
            gt_joint_rows.append([i] + [_float_csv(v) for v in joints.ravel()])
    with open(gt_dir / "frames.csv", "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["frame", "t_end", "state_index"])
        wr.writerows(gt_rows)
    if gt_joint_rows:
        n_joints = scene.model.n_joints
        with open(gt_dir / "joints.csv", "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["frame"] + [f"j{j}{ax}" for j in range(n_joints) for ax in "xyz"])
            wr.writerows(gt_joint_rows)

    write_manifest(out / "manifest.txt", cfg, derived={
        "n_sim_steps": len(times),
        "n_events": len(stream),
        "n_event_frames": len(windows),
        "events_path": events_path,
    })
    print(f"simulate: {len(times)} steps, {len(stream)} events, "
          f"{len(windows)} event frames -> {out}")
    return 0


# ---------------------------------------------------------------------------
# track


def _load_model(cfg: RunConfig):
    if cfg.branch == "parametric":
        if not cfg.model or not Path(cfg.model).is_file():
            raise ConfigError(f"model file not found: {cfg.model!r}")
        return load_model_json(cfg.model)
    if not cfg.template or not Path(cfg.template).is_file():
        raise ConfigError(f"template mesh not found: {cfg.template!r}")
    return load_obj(cfg.template)


def cmd_track(cfg: RunConfig) -> int:
    if not cfg.events or not Path(cfg.events).is_file():
        raise ConfigError(f"event file not found: {cfg.events!r}")
    stream = load_events(cfg.events)
    if (stream.width, stream.height) != (cfg.width, cfg.height):
        raise ConfigError(
            f"sensor size {stream.width}x{stream.height} does not match config "
            f"{cfg.width}x{cfg.height}")
    model = _load_model(cfg)
    frames = frame_windows(stream, cfg.T, cfg.frames if cfg.frames > 0 else None)
    if not frames:
        raise ConfigError("no complete event frames in the stream")

    setup = TrackSetup(branch=cfg.branch, model=model, camera=cfg.camera(),
                       settings=cfg.raster_settings(), thresh=cfg.threshold_params(),
                       weights=cfg.weights(), schedule=cfg.schedule(), lr=cfg.lr,
                       stride=cfg.stride, min_count=cfg.min_count,
                       vis_tol=cfg.sil_vis_tol, log_every=cfg.log_every)
    result = track_sequence(frames, setup)

    out = Path(cfg.out_dir)
    tracked = out / "tracked"
    tracked.mkdir(parents=True, exist_ok=True)
    faces = template_mesh(model).faces
    joint_rows = []
    for i, p in enumerate(result.params):
        save_obj(tracked / f"frame_{i:04d}.obj", posed_vertices(model, p), faces)
        if cfg.branch == "parametric":
            joint_rows.append([i] + [_float_csv(v)
                                     for v in posed_joints(model, p).ravel()])
    with open(tracked / "params.csv", "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["frame"] + [f"p{i}" for i in range(result.params[0].dim)])
        for i, p in enumerate(result.params):
            wr.writerow([i] + [_float_csv(v) for v in p.flatten()])
    if joint_rows:
        with open(tracked / "joints.csv", "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["frame"] + [f"j{j}{ax}" for j in range(model.n_joints)
                                     for ax in "xyz"])
            wr.writerows(joint_rows)
    with open(tracked / "frames.csv", "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["frame", "t_end", "e_init", "e_final", "iters_rigid",
                     "iters_full", "wall_s", "failed"])
        for i in range(len(result)):
            wr.writerow([i, result.t_end[i], _float_csv(result.e_init[i]),
                         _float_csv(result.e_final[i]), result.iters_rigid[i],
                         result.iters_full[i], _float_csv(result.wall_time[i]),
                         int(result.failed[i])])
    write_manifest(out / "manifest_track.txt", cfg, derived={
        "n_tracked_frames": len(result),
        "n_failed_frames": int(sum(result.failed)),
    })
    print(f"track: {len(result)} frames -> {tracked}")
    return 0


# ---------------------------------------------------------------------------
# evaluate


def _read_joints_csv(path: Path):
    rows = []
    with open(path, newline="") as f:
        rd = csv.reader(f)
        next(rd)
        for row in rd:
            rows.append(np.array([float(v) for v in row[1:]]).reshape(-1, 3))
    return rows


def _read_obj_frames(directory: Path):
    paths = sorted(directory.glob("frame_*.obj"))
    return [load_obj(p).vertices for p in paths]


def cmd_evaluate(cfg: RunConfig, tracked_dir: str | None = None,
                 gt_dir: str | None = None) -> int:
    out = Path(cfg.out_dir)
    tracked = Path(tracked_dir) if tracked_dir else out / "tracked"
    gt = Path(gt_dir) if gt_dir else (Path(cfg.events).parent / "gt"
                                      if cfg.events else out / "gt")
    if not tracked.is_dir():
        raise ConfigError(f"tracked directory not found: {tracked}")
    if not gt.is_dir():
        raise ConfigError(f"ground-truth directory not found: {gt}")

    if (tracked / "joints.csv").is_file() and (gt / "joints.csv").is_file():
        rec = _read_joints_csv(tracked / "joints.csv")
        ref = _read_joints_csv(gt / "joints.csv")
        if len(rec) != len(ref):
            raise MetricError(f"frame counts differ: {len(rec)} vs {len(ref)}")
        mean, per_frame = e_joint3d(rec, ref)
    else:
        rec = _read_obj_frames(tracked)
        ref = _read_obj_frames(gt)
        if len(rec) != len(ref):
            raise MetricError(f"frame counts differ: {len(rec)} vs {len(ref)}")
        mean, per_frame = e_3d(rec, ref)

    metrics_path = out / "metrics.csv"
    write_metrics_csv(metrics_path, per_frame)
    print(f"evaluate: {len(per_frame)} frames, mean={mean:.6g} "
          f"std={float(np.std(per_frame)):.6g} -> {metrics_path}")
    return 0


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(seed: int) -> int:
    from .gradcheck import run_gradcheck
    results = run_gradcheck(seed=seed)
    worst = 0.0
    for name, err in results.items():
        print(f"term={name} rel_err={err:.3e}")
        worst = max(worst, err)
    print(f"max_rel_err={worst:.3e}")
    return 0 if worst < 1e-4 else 1


# ---------------------------------------------------------------------------
# entry point


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="evtrack",
        description="Event-driven non-rigid 3D tracking by analysis-by-synthesis")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "track", "evaluate"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="flat key = value config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--frames", type=int, default=None,
                       help="override the number of frames")
        if name == "evaluate":
            p.add_argument("--tracked", default=None, help="tracked output directory")
            p.add_argument("--gt", default=None, help="ground-truth directory")
    g = sub.add_parser("gradcheck")
    g.add_argument("--config", default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--frames", type=int, default=None)

    args = parser.parse_args(argv)
    try:
        if args.command == "gradcheck":
            return cmd_gradcheck(seed=args.seed)
        cfg = RunConfig.from_file(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.frames is not None:
            cfg.frames = args.frames
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "track":
            return cmd_track(cfg)
        return cmd_evaluate(cfg, tracked_dir=args.tracked, gt_dir=args.gt)
    except EvtrackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
