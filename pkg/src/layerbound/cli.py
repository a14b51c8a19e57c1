"""Command-line front end.

Commands: ``bound``, ``sweep``, ``simulate``, ``adapt`` and ``validate``.
Data goes to stdout as CSV (default) or JSON; logs go to stderr.  A CSV starts
with ``#`` comment lines (command, canonical scenario echo) followed by the
header row.

Exit codes:
    0  success
    1  ``validate``: at least one acceptance criterion failed
    2  invalid arguments or scenario
    3  unstable configuration without ``--allow-unstable``
    4  ``simulate``: empirical violation above the bound by more than 3 sigma
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import math
import sys
from dataclasses import replace
from typing import Any, Optional, Sequence

import numpy as np

from . import acceptance, bounds, optimizer, simulator
from .errors import ConfigError, InfeasibleError, UnstableSystemError
from .model import (ChannelParams, PathSpec, SlotGrid, VideoParams, avg_capacity_bps,
                    utilization)
from .scenario import Scenario, canonical_json, load_scenario

log = logging.getLogger("layerbound")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_UNSTABLE = 3
EXIT_DOMINANCE = 4

NEAR_SATURATION = 0.95
MIN_SIM_SLOTS = 100_000

PRESETS = {
    "paper-vi": {
        "bandwidth_hz": 2.2e6,
        "slot_s": 0.01,
        "frame_rate_fps": 2.5,
        "playout_delay_s": 0.45,
        "layer_payload_bits": 100e3,
        "layer_header_bits": 0.0,
        "max_layers": 24,
    },
}

_PARAM_DEFAULTS = {"layer_header_bits": 0.0, "frame_rate_fps": 2.5, "max_layers": 24, "hops": 1}

SWEEP_AXES = ("d_bits", "layers", "frame_bits", "snr_dB", "hops", "playout_delay_s", "epsilon")

BOUND_COLUMNS = ("mode", "hops", "snr_dB", "frame_bits", "layers", "playout_delay_s", "d_bits",
                 "epsilon", "theta_star", "stable", "capped", "infeasible", "raw_value",
                 "rate_bound_bps", "utilization", "avg_capacity_bps")
SWEEP_COLUMNS = ("mode", "snr_dB", "hops", "playout_delay_s", "L", "r_bits", "d_bits", "epsilon",
                 "theta_star", "d_eps_bits", "rate_bound_bps", "stable", "capped",
                 "fluid_d_eps_bits", "fluid_rate_bound_bps")
SIM_COLUMNS = ("d_bits", "p_hat", "stderr", "count", "frames", "low_confidence", "bound",
               "theta_star", "dominated", "utilization", "near_saturation")
ADAPT_COLUMNS = ("epoch", "start_s", "path", "hops", "snr_dB", "layers", "r_bits", "d_eps_bits",
                 "rate_bound_bps", "fallback", "path_switch", "sim_frames", "sim_p_hat",
                 "sim_reliable", "sim_mean_layers", "opt_layers", "opt_r_bits")
VALIDATE_COLUMNS = ("criterion", "name", "passed", "detail")


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------- output


def _cell(v: Any) -> str:
    if isinstance(v, bool) or isinstance(v, np.bool_):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def _json_cell(v: Any):
    if isinstance(v, np.bool_):
        return bool(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    return v


def emit(rows: Sequence[dict], columns: Sequence[str], fmt: str, command: str,
         scenario: Optional[Scenario], stream=None) -> None:
    stream = stream or sys.stdout
    if fmt == "json":
        doc = {"command": command,
               "scenario": None if scenario is None else scenario.raw,
               "columns": list(columns),
               "rows": [{c: _json_cell(r.get(c)) for c in columns} for r in rows]}
        json.dump(doc, stream, indent=1, allow_nan=False)
        stream.write("\n")
        return
    stream.write(f"# command: {command}\n")
    if scenario is not None:
        stream.write(f"# scenario: {canonical_json(scenario.raw)}\n")
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])


def read_csv(text: str) -> tuple[dict, list[dict]]:
    """Parse CSV output back into (comment header fields, rows of strings)."""
    meta = {}
    body = []
    for line in text.splitlines():
        if line.startswith("# "):
            key, _, val = line[2:].partition(": ")
            meta[key] = val
        else:
            body.append(line)
    return meta, list(csv.DictReader(io.StringIO("\n".join(body))))


# --------------------------------------------------------------------------- parameters


def _resolve(args) -> dict:
    """Merge preset < scenario < explicit flags into one flat parameter dict."""
    p = dict(_PARAM_DEFAULTS)
    if args.preset:
        p.update(PRESETS[args.preset])
    sc = args.scenario_obj
    if sc is not None:
        p.update(bandwidth_hz=sc.bandwidth_hz, slot_s=sc.grid.slot_seconds,
                 frame_rate_fps=sc.video.frame_rate_fps, playout_delay_s=sc.playout_delay_s,
                 layer_payload_bits=sc.video.layer_payload_bits,
                 layer_header_bits=sc.video.layer_header_bits, max_layers=sc.video.max_layers)
        if sc.epsilon is not None:
            p["epsilon"] = sc.epsilon
        if "num_layers" in sc.raw["video"]:
            p["layers"] = sc.video.num_layers
        path = sc.path(args.path_id) if args.path_id else sc.paths[0]
        p.update(hops=path.hops, snr_dB=path.channel.snr_db, path_id=path.path_id)
        p.update(seed=sc.simulation.seed, slots=sc.simulation.slots,
                 warmup_slots=sc.simulation.warmup_slots, forwarding=sc.simulation.forwarding,
                 arrival_mode=sc.simulation.arrival_mode)
    for key in ("bandwidth_hz", "slot_s", "frame_rate_fps", "playout_delay_s", "layer_payload_bits",
                "layer_header_bits", "max_layers", "epsilon", "snr_dB", "hops", "layers",
                "frame_bits", "d_bits", "seed", "slots", "warmup_slots", "forwarding",
                "arrival_mode"):
        val = getattr(args, key, None)
        if val is not None:
            p[key] = val
    return p


def _need(p: dict, *keys: str) -> None:
    missing = [k for k in keys if p.get(k) is None]
    if missing:
        raise UsageError("missing parameter(s): " + ", ".join("--" + k.replace("_", "-")
                                                             for k in missing))


def _video(p: dict, layers: Optional[float] = None) -> VideoParams:
    _need(p, "layer_payload_bits")
    tmpl = VideoParams(float(p["layer_payload_bits"]), float(p["layer_header_bits"]),
                       float(p["frame_rate_fps"]), 1, int(p["max_layers"]))
    if layers is None:
        if p.get("frame_bits") is not None:
            layers = float(p["frame_bits"]) / tmpl.layer_bits
        elif p.get("layers") is not None:
            layers = float(p["layers"])
        else:
            return tmpl
    return replace(tmpl, num_layers=layers, max_layers=max(tmpl.max_layers, math.ceil(layers - 1e-9)))


def _path(p: dict) -> PathSpec:
    _need(p, "bandwidth_hz", "snr_dB", "hops")
    return PathSpec(int(p["hops"]), ChannelParams.from_db(float(p["snr_dB"]), float(p["bandwidth_hz"])),
                    p.get("path_id", "path"))


def _grid(p: dict) -> SlotGrid:
    _need(p, "slot_s")
    return SlotGrid(float(p["slot_s"]))


def _parse_values(spec: str, integer: bool = False) -> list:
    try:
        if ":" in spec:
            a, b, n = spec.split(":")
            vals = list(np.linspace(float(a), float(b), int(n)))
        else:
            vals = [float(x) for x in spec.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad value list {spec!r} (use a,b,c or start:stop:count)") from None
    if not vals:
        raise UsageError(f"empty value list {spec!r}")
    if integer:
        if any(v != int(v) for v in vals):
            raise UsageError(f"integer values required in {spec!r}")
        vals = [int(v) for v in vals]
    return vals


# --------------------------------------------------------------------------- commands


def _bound_row(p: dict, video: VideoParams, path: PathSpec, grid: SlotGrid, allow_unstable: bool) -> dict:
    td = float(p["playout_delay_s"])
    row = {"hops": path.hops, "snr_dB": float(p["snr_dB"]), "frame_bits": video.frame_bits,
           "layers": video.num_layers, "playout_delay_s": td,
           "utilization": utilization(video, path.channel),
           "avg_capacity_bps": avg_capacity_bps(path.channel)}
    if p.get("d_bits") is not None:
        query = bounds.BoundQuery(video, path, grid, td, target_departure_bits=float(p["d_bits"]))
    else:
        _need(p, "epsilon")
        query = bounds.BoundQuery(video, path, grid, td, epsilon=float(p["epsilon"]))
    row["mode"] = query.mode
    try:
        res = bounds.evaluate(query)
    except UnstableSystemError as exc:
        if not allow_unstable:
            raise
        log.warning("unstable: %s", exc)
        row.update(stable=False, d_bits=query.target_departure_bits, epsilon=query.epsilon,
                   theta_star=math.nan, capped=False, infeasible=True, raw_value=math.nan,
                   rate_bound_bps=0.0)
        return row
    if query.mode == "bits":
        row.update(d_bits=res.value, epsilon=query.epsilon,
                   rate_bound_bps=bounds.playout_rate_bound(video, res.value))
    else:
        row.update(d_bits=query.target_departure_bits, epsilon=res.value, rate_bound_bps=math.nan)
    row.update(theta_star=res.theta_star, stable=res.stable, capped=res.capped_at_frame_size,
               infeasible=res.infeasible, raw_value=res.raw_value)
    return row


def cmd_bound(args) -> int:
    p = _resolve(args)
    _need(p, "playout_delay_s")
    if p.get("frame_bits") is None and p.get("layers") is None:
        raise UsageError("give --frame-bits or --layers")
    video = _video(p)
    row = _bound_row(p, video, _path(p), _grid(p), args.allow_unstable)
    emit([row], BOUND_COLUMNS, args.out, "bound", args.scenario_obj)
    return EXIT_OK


def _parse_axes(specs: Sequence[str]) -> list[tuple[str, list]]:
    if not 1 <= len(specs) <= 2:
        raise UsageError("sweep takes one or two --axis options")
    axes = []
    for spec in specs:
        name, sep, values = spec.partition("=")
        if not sep or name not in SWEEP_AXES:
            raise UsageError(f"bad axis {spec!r}; names: {', '.join(SWEEP_AXES)}")
        if name in (a for a, _ in axes):
            raise UsageError(f"axis {name} given twice")
        axes.append((name, _parse_values(values, integer=name == "hops")))
    names = {a for a, _ in axes}
    if {"layers", "frame_bits"} <= names:
        raise UsageError("layers and frame_bits are the same axis")
    if {"d_bits", "epsilon"} <= names:
        raise UsageError("d_bits and epsilon axes select different bound modes")
    return axes


def _sweep_row(p: dict, grid: SlotGrid) -> dict:
    video = _video(p)
    path = _path(p)
    td = float(p["playout_delay_s"])
    row = {"snr_dB": float(p["snr_dB"]), "hops": path.hops, "playout_delay_s": td,
           "L": video.num_layers, "r_bits": video.frame_bits}
    if p.get("d_bits") is not None:
        row.update(mode="probability", d_bits=float(p["d_bits"]))
        try:
            res = bounds.departure_tail_closed(video, path, grid, float(p["d_bits"]), td)
        except UnstableSystemError:
            row.update(stable=False, epsilon=1.0)
            return row
        row.update(epsilon=res.value, theta_star=res.theta_star, stable=True,
                   capped=res.capped_at_frame_size)
        return row
    _need(p, "epsilon")
    eps = float(p["epsilon"])
    row.update(mode="bits", epsilon=eps)
    try:
        res = bounds.invert_d_epsilon(video, path, grid, td, eps)
    except UnstableSystemError:
        row.update(stable=False, d_eps_bits=0.0, rate_bound_bps=0.0)
        return row
    fluid = max(res.raw_value, 0.0)
    row.update(theta_star=res.theta_star, d_eps_bits=res.value, stable=True,
               rate_bound_bps=bounds.playout_rate_bound(video, res.value),
               capped=res.capped_at_frame_size, fluid_d_eps_bits=res.raw_value,
               fluid_rate_bound_bps=fluid * video.frame_rate_fps
               * video.layer_payload_bits / video.layer_bits)
    return row


def cmd_sweep(args) -> int:
    base = _resolve(args)
    axes = _parse_axes(args.axis)
    _need(base, "playout_delay_s")
    grid = _grid(base)
    rows = []
    for combo in itertools.product(*(vals for _, vals in axes)):
        p = dict(base)
        for (name, _), val in zip(axes, combo):
            if name == "layers":
                p["frame_bits"] = None
            if name == "frame_bits":
                p["layers"] = None
            p[name] = val
        if p.get("frame_bits") is None and p.get("layers") is None:
            raise UsageError("sweep needs a frame size: --layers, --frame-bits or a layers axis")
        rows.append(_sweep_row(p, grid))
    emit(rows, SWEEP_COLUMNS, args.out, "sweep", args.scenario_obj)
    return EXIT_OK


def _sim_config(p: dict, video: VideoParams, path: PathSpec, grid: SlotGrid) -> simulator.SimConfig:
    _need(p, "slots")
    if int(p["slots"]) < MIN_SIM_SLOTS:
        raise UsageError(f"--slots must be at least {MIN_SIM_SLOTS}")
    return simulator.SimConfig(video, path, grid, float(p["playout_delay_s"]), int(p["slots"]),
                               seed=int(p.get("seed") or 0),
                               warmup_slots=int(p.get("warmup_slots") or 0),
                               forwarding=p.get("forwarding") or simulator.CUT_THROUGH,
                               arrival_mode=p.get("arrival_mode") or simulator.FLUID)


def cmd_simulate(args) -> int:
    p = _resolve(args)
    _need(p, "playout_delay_s")
    video = _video(p)
    if p.get("frame_bits") is None and p.get("layers") is None:
        raise UsageError("give --frame-bits or --layers")
    path = _path(p)
    grid = _grid(p)
    cfg = _sim_config(p, video, path, grid)
    if args.d_grid:
        d_grid = _parse_values(args.d_grid)
    else:
        d_grid = list(video.frame_bits * np.arange(1, 21) / 20)
    util = utilization(video, path.channel)
    near = util >= NEAR_SATURATION
    if near:
        log.warning("utilization %.3f: near saturation", util)
    log.info("simulating %d slots on %d hop(s)", cfg.total_slots, path.hops)
    stats, summary = simulator.run(cfg)
    rows = []
    violated = False
    for vr in simulator.empirical_violation(stats, d_grid):
        try:
            res = bounds.departure_tail_closed(video, path, grid, vr.d_bits, cfg.playout_delay_s)
            bound, theta = res.value, res.theta_star
        except UnstableSystemError:
            bound, theta = 1.0, math.nan
        ok = vr.p_hat <= bound + 3 * vr.stderr
        violated |= not ok
        rows.append({"d_bits": vr.d_bits, "p_hat": vr.p_hat, "stderr": vr.stderr,
                     "count": vr.count, "frames": vr.frames, "low_confidence": vr.low_confidence,
                     "bound": bound, "theta_star": theta, "dominated": ok,
                     "utilization": util, "near_saturation": near})
    emit(rows, SIM_COLUMNS, args.out, "simulate", args.scenario_obj)
    if violated:
        log.error("empirical violation exceeds the bound by more than 3 sigma")
        return EXIT_DOMINANCE
    return EXIT_OK


def cmd_adapt(args) -> int:
    sc = args.scenario_obj
    if sc is None:
        raise UsageError("adapt needs --scenario")
    p = _resolve(args)
    _need(p, "epsilon")
    eps = float(p["epsilon"])
    template = _video({**p, "frame_bits": None, "layers": None})
    decisions = optimizer.run_adaptation(sc.epochs, template, sc.grid, sc.playout_delay_s, eps,
                                         args.objective)
    rows = []
    prev = None
    for i, d in enumerate(decisions):
        switch = prev is not None and prev != d.chosen_path
        if switch:
            log.info("path switch at t=%gs: %s -> %s", d.start_s, prev, d.chosen_path)
        prev = d.chosen_path
        rows.append({"epoch": i, "start_s": d.start_s, "path": d.chosen_path, "hops": d.hops,
                     "snr_dB": d.snr_db, "layers": d.layers, "r_bits": d.transmitted_frame_bits,
                     "d_eps_bits": d.predicted_d_eps_bits,
                     "rate_bound_bps": d.predicted_rate_bound_bps, "fallback": d.fallback,
                     "path_switch": switch})
    if args.simulate or args.opt:
        first = sc.paths[0]
        cfg = _sim_config(p, template, first, sc.grid)
        if args.simulate:
            phases = simulator.simulate_adaptation(sc.epochs, cfg, decisions, epsilon=eps)
            for row, ph in zip(rows, phases):
                row.update(sim_frames=len(ph.stats), sim_mean_layers=ph.mean_decodable_layers,
                           sim_p_hat=None if ph.violation is None else ph.violation.p_hat,
                           sim_reliable=ph.reliable)
        if args.opt:
            resolved = optimizer.resolve_epochs(sc.epochs)
            for i, (row, d, paths) in enumerate(zip(rows, decisions, resolved)):
                path = next(q for q in paths if q.path_id == d.chosen_path)
                L, _ = simulator.opt_layers_by_simulation(replace(cfg, path=path), eps,
                                                          path_key=1000 + i)
                row.update(opt_layers=L, opt_r_bits=L * template.layer_bits)
    emit(rows, ADAPT_COLUMNS, args.out, "adapt", sc)
    return EXIT_OK


def cmd_validate(args) -> int:
    slots = args.slots or acceptance.DEFAULT_SLOTS
    seed = acceptance.DEFAULT_SEED if args.seed is None else args.seed
    results = acceptance.run_all(slots, seed)
    for c in results:
        log.info(c.line())
    rows = [{"criterion": c.number, "name": c.name, "passed": c.passed, "detail": c.detail}
            for c in results]
    emit(rows, VALIDATE_COLUMNS, args.out, "validate", None)
    return EXIT_OK if all(c.passed for c in results) else EXIT_FAILED


# --------------------------------------------------------------------------- parser


def _add_common(sp: argparse.ArgumentParser, model: bool = True) -> None:
    sp.add_argument("--out", choices=("csv", "json"), default="csv")
    sp.add_argument("--seed", type=int)
    sp.add_argument("-v", "--verbose", action="count", default=0)
    if not model:
        return
    sp.add_argument("--preset", choices=sorted(PRESETS))
    sp.add_argument("--scenario", help="scenario JSON file or built-in name (fig8, fig9)")
    sp.add_argument("--path-id", help="scenario path to use (default: the first)")
    sp.add_argument("--bandwidth-hz", type=float)
    sp.add_argument("--slot-s", type=float)
    sp.add_argument("--frame-rate-fps", type=float)
    sp.add_argument("--playout-delay-s", type=float)
    sp.add_argument("--layer-payload-bits", type=float)
    sp.add_argument("--layer-header-bits", type=float)
    sp.add_argument("--max-layers", type=int)
    sp.add_argument("--snr-dB", dest="snr_dB", type=float)
    sp.add_argument("--hops", type=int)
    sp.add_argument("--epsilon", type=float)
    sp.add_argument("--allow-unstable", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="layerbound", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("bound", help="d^eps for a given eps, or the violation bound for a given d")
    _add_common(sp)
    sp.add_argument("--frame-bits", type=float)
    sp.add_argument("--layers", type=float)
    sp.add_argument("--d-bits", type=float)
    sp.set_defaults(func=cmd_bound)

    sp = sub.add_parser("sweep", help="cartesian sweep over one or two axes")
    _add_common(sp)
    sp.add_argument("--frame-bits", type=float)
    sp.add_argument("--layers", type=float)
    sp.add_argument("--d-bits", type=float)
    sp.add_argument("--axis", action="append", default=[],
                    help="NAME=a,b,c or NAME=start:stop:count; NAME in " + ", ".join(SWEEP_AXES))
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("simulate", help="Monte-Carlo violation table next to the bound")
    _add_common(sp)
    sp.add_argument("--frame-bits", type=float)
    sp.add_argument("--layers", type=float)
    sp.add_argument("--slots", type=int)
    sp.add_argument("--warmup-slots", type=int)
    sp.add_argument("--d-grid", help="d values in bits (default: 20 points k r / 20)")
    sp.add_argument("--forwarding", choices=(simulator.CUT_THROUGH, simulator.STORE_AND_FORWARD))
    sp.add_argument("--arrival-mode", choices=(simulator.FLUID, simulator.BURST))
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("adapt", help="replay a scenario's epochs through the optimizer")
    _add_common(sp)
    sp.add_argument("--objective", choices=optimizer.OBJECTIVES, default=optimizer.RATE)
    sp.add_argument("--simulate", action="store_true", help="simulate every phase")
    sp.add_argument("--opt", action="store_true",
                    help="add the simulation-driven reference layer count per phase")
    sp.add_argument("--slots", type=int, help="simulated slots per phase")
    sp.add_argument("--warmup-slots", type=int)
    sp.set_defaults(func=cmd_adapt)

    sp = sub.add_parser("validate", help="run the acceptance suite")
    _add_common(sp, model=False)
    sp.add_argument("--slots", type=int, help="slots per Monte-Carlo run (default 10^7)")
    sp.set_defaults(func=cmd_validate, scenario=None)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.handlers[:] = [handler]
    log.propagate = False
    log.setLevel(logging.WARNING - 10 * min(args.verbose, 1))
    try:
        args.scenario_obj = load_scenario(args.scenario) if getattr(args, "scenario", None) else None
        return args.func(args)
    except UnstableSystemError as exc:
        log.error("unstable configuration: %s (use --allow-unstable)", exc)
        return EXIT_UNSTABLE
    except (UsageError, ConfigError, ValueError, KeyError, InfeasibleError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
