"""Command-line entry point.

Exit codes: 0 success, 1 computation error, 2 usage, config or missing-file
error. Relative output paths are resolved against ``$MEMGATE_OUT_DIR`` when
it is set. Every random choice comes from ``--seed`` (default 0).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import gating, membank, metrics, simworld, trajectory
from .config import ConfigError, RunConfig

OUT_DIR_ENV = "MEMGATE_OUT_DIR"


class UsageError(Exception):
    pass


def _out_path(p: str) -> Path:
    path = Path(p)
    root = os.environ.get(OUT_DIR_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _write(p, text: str) -> None:
    """Write to ``p``, or stdout when ``p`` is None or ``-``."""
    if p is None or p == "-":
        sys.stdout.write(text)
        return
    path = _out_path(p)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _read(p) -> str:
    path = Path(p)
    if not path.is_file():
        raise UsageError(f"file not found: {p}")
    return path.read_text(encoding="utf-8")


def _need_dir(p) -> Path:
    path = Path(p)
    if not path.is_dir():
        raise UsageError(f"directory not found: {p}")
    return path


def _config(p) -> RunConfig:
    return RunConfig() if p is None else RunConfig.load(_need_file(p))


def _need_file(p) -> Path:
    if not Path(p).is_file():
        raise UsageError(f"file not found: {p}")
    return Path(p)


def _load_traj(p) -> trajectory.Trajectory:
    try:
        return trajectory.Trajectory.from_json(_read(p))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise UsageError(f"{p}: not a trajectory file ({exc})") from None


# -- subcommands -------------------------------------------------------------


def cmd_traj_gen(a) -> int:
    params = {"frames": a.frames}
    for key in ("cycles", "amplitude", "loops", "offset", "segment_length"):
        val = getattr(a, key)
        if val is not None:
            params[key] = val
    traj = trajectory.gen_pattern(a.kind, params, a.seed)
    _write(a.output, traj.to_json() + "\n")
    return 0


def cmd_traj_import(a) -> int:
    traj = trajectory.import_re10k(_read(a.input), a.width, a.height)
    _write(a.output, traj.to_json() + "\n")
    return 0


def cmd_traj_export(a) -> int:
    _write(a.output, trajectory.export_re10k(_load_traj(a.input)))
    return 0


def cmd_gates(a) -> int:
    cfg = _config(a.config)
    traj = _load_traj(a.traj)
    bank = membank.load(_need_dir(a.history))
    decisions = gating.compute_gates(traj.poses, bank.poses, cfg.gating(), history_ids=bank.indices)
    _write(a.output, gating.format_trace(decisions))
    return 0


def cmd_synth(a) -> int:
    order, pairs = trajectory.synth_pseudo_loop(a.frames, a.stride)
    if a.dropout:
        pairs = trajectory.apply_history_dropout(pairs, a.dropout, a.seed)
    doc = {"frames": a.frames, "stride": a.stride, "dropout": a.dropout, "seed": a.seed,
           "order": order, "pairs": [asdict(p) for p in pairs]}
    _write(a.output, json.dumps(doc, indent=1) + "\n")
    return 0


def cmd_sim(a) -> int:
    cfg = _config(a.config)
    traj = _load_traj(a.traj)
    if traj.segment_length != cfg.segment_length:
        traj = dataclasses.replace(traj, segment_length=cfg.segment_length)
    seed = cfg.seed if a.seed is None else a.seed
    ep = simworld.run_episode(
        cfg.scene(), traj, cfg.gating(), cfg.drift(), seed,
        memory=not a.no_memory, window=cfg.window, patch=cfg.patch,
        resolution=tuple(cfg.resolution) if cfg.resolution else None,
    )
    ep.save(_out_path(a.out))
    on = sum(ep.gates)
    print(f"{len(ep)} frames, {on} gated on, written to {_out_path(a.out)}")
    return 0


def _report(p, tolerance: float) -> metrics.ConsistencyReport:
    path = Path(p)
    if path.is_dir():
        ep = simworld.EpisodeRecord.load(path)
        return metrics.evaluate(ep, metrics.pair_revisits(ep.trajectory, tolerance), str(path))
    try:
        return metrics.ConsistencyReport.from_dict(json.loads(_read(p)))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise UsageError(f"{p}: not a report or episode ({exc})") from None


def cmd_eval(a) -> int:
    ep_dir = _need_dir(a.episode)
    if not (ep_dir / "episode.json").is_file():
        raise UsageError(f"no episode.json in {ep_dir}")
    report = _report(ep_dir, a.tolerance)
    _write(a.output, report.to_json() + "\n")
    if a.csv:
        _write(a.csv, report.to_csv())
    sys.stdout.write(report.to_table())
    return 0


def cmd_compare(a) -> int:
    ra, rb = _report(a.a, a.tolerance), _report(a.b, a.tolerance)
    _write(a.output, metrics.compare_reports(ra, rb))
    return 0


def cmd_config_defaults(a) -> int:
    _write(a.output, RunConfig().to_json())
    return 0


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="memgate", description="Camera-gated memory toolkit.")
    sub = p.add_subparsers(dest="group", required=True)

    traj = sub.add_parser("traj", help="trajectory generation and conversion").add_subparsers(dest="cmd", required=True)
    g = traj.add_parser("gen", help="generate a stress trajectory")
    g.add_argument("--kind", required=True, choices=trajectory.KINDS)
    g.add_argument("--frames", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--cycles", type=int)
    g.add_argument("--amplitude", type=float, help="revisit yaw amplitude in degrees")
    g.add_argument("--loops", type=int)
    g.add_argument("--offset", type=float, help="lateral return offset")
    g.add_argument("--segment-length", dest="segment_length", type=int)
    g.add_argument("-o", "--output")
    g.set_defaults(fn=cmd_traj_gen)

    g = traj.add_parser("import-re10k", help="RealEstate10K camera file to trajectory JSON")
    g.add_argument("input")
    g.add_argument("--width", type=int, default=128)
    g.add_argument("--height", type=int, default=128)
    g.add_argument("-o", "--output")
    g.set_defaults(fn=cmd_traj_import)

    g = traj.add_parser("export-re10k", help="trajectory JSON to RealEstate10K camera file")
    g.add_argument("input")
    g.add_argument("-o", "--output")
    g.set_defaults(fn=cmd_traj_export)

    gates = sub.add_parser("gates", help="gate computation").add_subparsers(dest="cmd", required=True)
    g = gates.add_parser("compute", help="gate trajectory poses against a saved memory bank")
    g.add_argument("--traj", required=True)
    g.add_argument("--history", required=True, help="memory bank directory")
    g.add_argument("--config")
    g.add_argument("-o", "--output")
    g.set_defaults(fn=cmd_gates)

    synth = sub.add_parser("synth", help="training-data synthesis").add_subparsers(dest="cmd", required=True)
    g = synth.add_parser("pseudo-loop", help="forward-backward pairs with a temporal stride")
    g.add_argument("--frames", type=int, required=True)
    g.add_argument("--stride", type=int, required=True)
    g.add_argument("--dropout", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output")
    g.set_defaults(fn=cmd_synth)

    sim = sub.add_parser("sim", help="episode simulation").add_subparsers(dest="cmd", required=True)
    g = sim.add_parser("run", help="roll out a trajectory in the procedural world")
    g.add_argument("--traj", required=True)
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, help="overrides the config seed")
    g.add_argument("--no-memory", action="store_true", help="force every gate closed")
    g.set_defaults(fn=cmd_sim)

    ev = sub.add_parser("eval", help="evaluation").add_subparsers(dest="cmd", required=True)
    g = ev.add_parser("consistency", help="revisit PSNR/SSIM of an episode")
    g.add_argument("--episode", required=True)
    g.add_argument("--tolerance", type=float, default=1e-6)
    g.add_argument("--csv")
    g.add_argument("-o", "--output")
    g.set_defaults(fn=cmd_eval)

    rep = sub.add_parser("report", help="reporting").add_subparsers(dest="cmd", required=True)
    g = rep.add_parser("compare", help="per-pair deltas between two runs (a - b)")
    g.add_argument("--a", required=True, help="episode directory or report JSON")
    g.add_argument("--b", required=True, help="episode directory or report JSON")
    g.add_argument("--tolerance", type=float, default=1e-6)
    g.add_argument("-o", "--output")
    g.set_defaults(fn=cmd_compare)

    conf = sub.add_parser("config", help="configuration").add_subparsers(dest="cmd", required=True)
    g = conf.add_parser("defaults", help="print the default configuration")
    g.add_argument("-o", "--output")
    g.set_defaults(fn=cmd_config_defaults)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (UsageError, ConfigError, FileNotFoundError) as exc:
        print(f"memgate: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"memgate: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
