"""Command-line entry point: ``pdnn-isp {simulate,invert,sweep,render,fresnel}``.

Every command reads a YAML run config (``--config``; defaults apply to all
missing keys) and writes into ``--out``. Exit codes: 0 success, 1 usage or
config error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from .config import RunConfig, load_config
from .errors import ConfigError, DataError, NumericalError, SolverError
from .forward import assemble_operators, incident_field, simulate_measurements
from .geometry import ContrastMap, FieldMatrix, add_awgn, profile_shapes
from .inversion import InversionRun, relative_error, run_bim, run_bp, run_pdnn
from .loss import LossWeights
from .network import NetworkSpec
from .region import RegionMask, identify_region
from . import render

log = logging.getLogger("pdnn_isp")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

RESULT_FIELDS = ["key", "scenario", "scenario_hash", "solver", "parameter", "value", "seed",
                 "delta", "runtime_s", "active_cells", "total_cells", "iterations", "status"]


# ------------------------------------------------------------------ pipeline

def scenario_name(rc: RunConfig) -> str:
    return rc.scenario.preset if rc.scenario.preset is not None else "custom"


def build_truth(rc: RunConfig) -> ContrastMap:
    spec = rc.scenario.preset if rc.scenario.preset is not None else list(rc.scenario.shapes)
    return profile_shapes(rc.imaging_config(), spec)


def _noise_free_key(rc: RunConfig) -> str:
    return rc.with_value("scenario.snr_db", None).scenario_hash()


def noise_free_data(rc: RunConfig, cache_dir: Path | None = None) -> FieldMatrix:
    """Scattered field for the scenario, cached on disk by config hash."""
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / f"{_noise_free_key(rc)}.npy"
        if path.exists():
            return FieldMatrix(np.load(path), "scattered")
    data = simulate_measurements(rc.imaging_config(), build_truth(rc), rc.imaging.data_grid)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.save(path, data.values)
    return data


def measured_data(rc: RunConfig, cache_dir: Path | None = None) -> FieldMatrix:
    data = noise_free_data(rc, cache_dir)
    return add_awgn(data, rc.scenario.snr_db, rc.scenario.noise_seed)


def network_spec(rc: RunConfig) -> NetworkSpec:
    n = rc.solver.network
    return NetworkSpec(tuple(n.conv_channels), n.n_res_blocks, n.hidden, n.pool_grid)


def reconstruct(rc: RunConfig, measured: FieldMatrix, truth: ContrastMap | None = None,
                cfg=None, ops=None, e_inc=None, input_map: ContrastMap | None = None):
    """Run the configured solver; returns ``(estimate, trace_or_None, info)``."""
    cfg = cfg or rc.imaging_config()
    ops = ops or assemble_operators(cfg)
    e_inc = e_inc or incident_field(cfg)
    s = rc.solver
    t0 = time.perf_counter()
    info = {"solver": s.method, "total_cells": cfg.n_cells, "active_cells": cfg.n_cells}
    trace = None
    if s.method == "bp":
        est = run_bp(measured, ops, e_inc)
    elif s.method == "bim":
        est = run_bim(measured, ops, e_inc, s.bim.outer_iters, s.bim.tikhonov_lambda)
    else:
        bp = None
        if s.input == "bp" or s.region.enabled:
            bp = run_bp(measured, ops, e_inc)
        region = None
        if s.region.enabled:
            region = identify_region(bp, s.region.delta, s.region.r, s.region.sort)
            info["active_cells"] = region.n_active
            info["region"] = region
        if s.input == "file":
            if input_map is None:
                if s.input_map is None:
                    raise ConfigError("solver.input_map: required when solver.input is 'file'")
                input_map = render.read_map_csv(s.input_map)
            input_map.check_config(cfg)
        run = InversionRun(cfg, measured, ops, e_inc, region=region,
                           weights=LossWeights(s.alpha, s.beta), iterations=s.iterations,
                           seed=s.seed, input_mode=s.input,
                           input_map=input_map if s.input == "file" else bp,
                           truth=truth, learning_rate=s.learning_rate, network=network_spec(rc),
                           stop_window=s.stop_window, stop_tol=s.stop_tol,
                           solver_method=s.linear_solver, snapshot_every=s.snapshot_every)
        est, trace = run_pdnn(run)
        info["iterations"] = len(trace)
    info["runtime_s"] = time.perf_counter() - t0
    if truth is not None:
        info["delta"] = relative_error(est, truth)
    return est, trace, info


def write_outputs(rc: RunConfig, out: Path, est: ContrastMap, trace, info: dict, stem="estimate"):
    out.mkdir(parents=True, exist_ok=True)
    fmts = set(rc.output.formats)
    if "csv" in fmts:
        est.to_csv(out / stem)
    if "png" in fmts:
        render.render_map(est, out / f"{stem}.png", rc.output.re_range, rc.output.im_range,
                          title=f"{info['solver']} {scenario_name(rc)}")
    if trace is not None:
        trace.to_csv(out / "trace.csv")
        if trace.snapshots:
            M = rc.imaging.grid
            cells = info["region"].active_indices if "region" in info else np.arange(M * M)
            maps = []
            for chi in trace.snapshots.values():
                full = np.zeros(M * M, complex)
                full[cells] = chi
                maps.append(ContrastMap(full.reshape(M, M)))
            render.snapshot_grid(maps, [f"k={k}" for k in trace.snapshots], out / "snapshots.png",
                                 rc.output.re_range)
    if "region" in info:
        region: RegionMask = info["region"]
        region.to_csv(out / "region.csv")
        render.render_mask(region.mask, out / "region.png")


def summary_row(rc: RunConfig, info: dict, parameter="", value="") -> dict:
    delta = info.get("delta")
    row = {
        "scenario": scenario_name(rc), "scenario_hash": rc.scenario_hash(),
        "solver": info.get("solver", rc.solver.method), "parameter": parameter,
        "value": "" if value is None else value, "seed": rc.solver.seed,
        "delta": "" if delta is None else f"{delta:.6f}",
        "runtime_s": f"{info.get('runtime_s', float('nan')):.3f}",
        "active_cells": info.get("active_cells", ""), "total_cells": info.get("total_cells", ""),
        "iterations": info.get("iterations", ""), "status": info.get("status", "ok"),
    }
    row["key"] = "|".join(str(row[k]) for k in ("scenario_hash", "solver", "parameter", "value", "seed"))
    return row


def existing_keys(table: Path) -> set:
    if not table.exists():
        return set()
    with open(table, newline="") as fh:
        return {r["key"] for r in csv.DictReader(fh) if r.get("status") == "ok"}


def append_row(table: Path, row: dict):
    """Append one row; the header is written only when the table is new."""
    new = not table.exists()
    with open(table, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_FIELDS)
        if new:
            w.writeheader()
        w.writerow(row)


def _manifest(rc: RunConfig, out: Path, **extra):
    doc = {"config": yaml.safe_load(rc.to_yaml()), "scenario_hash": rc.scenario_hash(), **extra}
    (out / "manifest.yaml").write_text(yaml.safe_dump(doc, sort_keys=False))


# ------------------------------------------------------------------ commands

def cmd_simulate(rc: RunConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    truth = build_truth(rc)
    data = measured_data(rc, out / "cache")
    data.to_csv(out / "measured.csv")
    truth.to_csv(out / "truth")
    if "png" in rc.output.formats:
        render.render_map(truth, out / "truth.png", rc.output.re_range, rc.output.im_range,
                          title=f"truth {scenario_name(rc)}")
    _manifest(rc, out, command="simulate")
    return {"scenario_hash": rc.scenario_hash(), "shape": list(data.shape)}


def _read_data_dir(data_path: Path):
    measured = FieldMatrix.from_csv(data_path)
    truth_stem = data_path.parent / "truth"
    truth = ContrastMap.from_csv(truth_stem) if truth_stem.with_name("truth_real.csv").exists() else None
    man = data_path.parent / "manifest.yaml"
    data_hash = yaml.safe_load(man.read_text()).get("scenario_hash") if man.exists() else None
    return measured, truth, data_hash


def cmd_invert(rc: RunConfig, out: Path, data_path: Path | None = None, force: bool = False) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    if data_path is None:
        measured, truth, data_hash = measured_data(rc, out / "cache"), build_truth(rc), rc.scenario_hash()
    else:
        try:
            measured, truth, data_hash = _read_data_dir(Path(data_path))
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read data {data_path}: {exc}") from None
        if data_hash is not None and data_hash != rc.scenario_hash() and not force:
            raise DataError(f"data hash {data_hash} does not match config hash {rc.scenario_hash()} "
                            "(use --force to invert anyway)")
    cfg = rc.imaging_config()
    if measured.shape != (cfg.n_tx, cfg.n_rx):
        raise DataError(f"measured data shape {measured.shape} does not match {cfg.n_tx} x {cfg.n_rx} antennas")
    if truth is not None and truth.values.shape != cfg.shape:
        log.warning("truth map %s does not match the grid; delta not reported", truth.values.shape)
        truth = None
    est, trace, info = reconstruct(rc, measured, truth, cfg)
    write_outputs(rc, out, est, trace, info)
    row = summary_row(rc, info)
    append_row(out / "results.csv", row)
    _manifest(rc, out, command="invert", data=str(data_path) if data_path else None)
    return row


def _sweep_point(args):
    rc_dict, parameter, value, scenario, seed, out, cache = args
    rc = RunConfig.model_validate(rc_dict)
    try:
        if scenario is not None:
            rc = rc.with_value("scenario.preset", scenario)
        if parameter:
            rc = rc.with_value(parameter, value)
        rc = rc.with_value("solver.seed", seed)
        truth = build_truth(rc)
        measured = measured_data(rc, Path(cache))
        est, trace, info = reconstruct(rc, measured, truth)
        point_dir = Path(out) / "runs" / f"{scenario_name(rc)}_{parameter}={value}_seed{seed}"
        write_outputs(rc, point_dir, est, trace, info)
    except (ConfigError, DataError, NumericalError, SolverError, ValueError) as exc:
        info = {"status": f"error: {exc}".replace("\n", " ")}
    return summary_row(rc, info, parameter, value)


def cmd_sweep(rc: RunConfig, out: Path, workers: int = 1) -> list:
    """Independent inversions over (scenario, value, seed); resumable and append-safe."""
    out.mkdir(parents=True, exist_ok=True)
    sw = rc.sweep
    if sw.parameter is None and not sw.scenarios:
        raise ConfigError("sweep.parameter: required (or list sweep.scenarios)")
    values = list(sw.values) if sw.parameter else [None]
    scenarios = list(sw.scenarios) or [None]
    table = out / "results.csv"
    done = existing_keys(table)
    jobs = []
    for scen in scenarios:
        for v in values:
            for seed in sw.seeds:
                probe = rc
                try:
                    if scen is not None:
                        probe = probe.with_value("scenario.preset", scen)
                    if sw.parameter:
                        probe = probe.with_value(sw.parameter, v)
                    probe = probe.with_value("solver.seed", seed)
                except ConfigError:
                    pass        # the worker reproduces the error and records it as a failed point
                else:
                    if summary_row(probe, {}, sw.parameter or "", v)["key"] in done:
                        continue
                jobs.append((rc.model_dump(), sw.parameter or "", v, scen, seed, str(out),
                             str(out / "cache")))
    rows = []
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            for row in pool.map(_sweep_point, jobs):
                append_row(table, row)
                rows.append(row)
    else:
        for job in jobs:
            row = _sweep_point(job)
            append_row(table, row)
            rows.append(row)
    _plot_sweep(table, out, sw.parameter or "scenario")
    _manifest(rc, out, command="sweep")
    return rows


def _plot_sweep(table: Path, out: Path, parameter: str):
    with open(table, newline="") as fh:
        rows = [r for r in csv.DictReader(fh) if r["status"] == "ok" and r["delta"]]
    if not rows:
        return
    try:
        xs = sorted({float(r["value"]) for r in rows})
    except ValueError:
        return
    series = {}
    for scen in sorted({r["scenario"] for r in rows}):
        ys = []
        for x in xs:
            d = [100 * float(r["delta"]) for r in rows if r["scenario"] == scen and float(r["value"]) == x]
            ys.append(float(np.median(d)) if d else float("nan"))
        series[scen] = ys
    render.line_plot(xs, series, out / f"sweep_{parameter.replace('.', '_')}.png",
                     xlabel=parameter, ylabel="delta (%)")


def cmd_render(rc: RunConfig, map_path: Path, out: Path) -> Path:
    try:
        cmap = render.read_map_csv(map_path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read map {map_path}: {exc}") from None
    out.mkdir(parents=True, exist_ok=True)
    name = Path(map_path).name.removesuffix(".csv").removesuffix("_real").removesuffix("_imag")
    return render.render_map(cmap, out / f"{name}.png", rc.output.re_range, rc.output.im_range)


def cmd_fresnel(rc: RunConfig, out: Path, data_path: Path | None = None) -> dict:
    """Parse a Fresnel file, calibrate one frequency and reconstruct."""
    from .fresnelio import calibrate, parse_fresnel
    path = data_path or rc.fresnel.path
    if path is None:
        raise ConfigError("fresnel.path: required (or pass --data)")
    record = parse_fresnel(path)
    fr = rc.fresnel
    if not 0 <= fr.freq_index < len(record.frequencies):
        raise ConfigError(f"fresnel.freq_index: {fr.freq_index} outside {len(record.frequencies)} frequencies")
    cfg = record.imaging_config(fr.freq_index, fr.doi, fr.grid, rc.imaging.source_amplitude)
    measured = calibrate(record, cfg, fr.freq_index)
    ops = assemble_operators(cfg)
    est, trace, info = reconstruct(rc, measured, None, cfg, ops, incident_field(cfg))
    out.mkdir(parents=True, exist_ok=True)
    write_outputs(rc, out, est, trace, info)
    summary = {"frequency_hz": cfg.frequency, "n_tx": record.n_tx, "n_rx": record.n_rx,
               "tx_radius": record.tx_radius, "rx_radius": record.rx_radius,
               "grid": cfg.grid_m, "runtime_s": info["runtime_s"], "active_cells": info["active_cells"]}
    (out / "fresnel_summary.json").write_text(json.dumps(summary, indent=2))
    return {**summary, "estimate": est, "config": cfg}


# ----------------------------------------------------------------------- main

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run config (missing keys take defaults)")
    common.add_argument("--seed", type=int, help="network seed (noise seed for simulate)")
    common.add_argument("--reproducible", action="store_true",
                        help="direct LU solves and sequential sweeps for bit-identical reruns")
    common.add_argument("--out", type=Path, help="output directory (default: output.directory)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="pdnn-isp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="forward-solve a scenario and write data")
    inv = sub.add_parser("invert", parents=[common], help="reconstruct from measured data")
    inv.add_argument("--data", type=Path, help="measured.csv from simulate (default: simulate in memory)")
    inv.add_argument("--force", action="store_true", help="ignore a data/config hash mismatch")
    sw = sub.add_parser("sweep", parents=[common], help="run a parameter sweep")
    sw.add_argument("--workers", type=int, default=1)
    rd = sub.add_parser("render", parents=[common], help="render a map CSV to PNG")
    rd.add_argument("map", type=Path, help="map stem or <stem>_real.csv")
    fr = sub.add_parser("fresnel", parents=[common], help="parse, calibrate and invert Fresnel data")
    fr.add_argument("--data", type=Path, help="Fresnel ASCII file (default: fresnel.path)")
    return p


def _apply_flags(rc: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        key = "scenario.noise_seed" if args.command == "simulate" else "solver.seed"
        rc = rc.with_value(key, args.seed)
    if args.reproducible:
        rc = rc.with_value("solver.linear_solver", "lu")
    return rc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = _apply_flags(load_config(args.config), args)
        out = args.out or Path(rc.output.directory)
        if args.command == "simulate":
            res = cmd_simulate(rc, out)
            print(f"simulate: wrote {out / 'measured.csv'} ({res['shape'][0]}x{res['shape'][1]}), "
                  f"scenario hash {res['scenario_hash']}")
        elif args.command == "invert":
            row = cmd_invert(rc, out, args.data, args.force)
            print(" ".join(f"{k}={row[k]}" for k in ("solver", "delta", "runtime_s", "active_cells")))
        elif args.command == "sweep":
            rows = cmd_sweep(rc, out, 1 if args.reproducible else args.workers)
            failed = [r for r in rows if r["status"] != "ok"]
            print(f"sweep: {len(rows)} runs, {len(failed)} failed; table {out / 'results.csv'}")
        elif args.command == "render":
            print(f"render: wrote {cmd_render(rc, args.map, out)}")
        elif args.command == "fresnel":
            res = cmd_fresnel(rc, out, args.data)
            print(f"fresnel: {res['n_tx']} tx x {res['n_rx']} rx at {res['frequency_hz'] / 1e9:g} GHz; "
                  f"wrote {out}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, SolverError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
