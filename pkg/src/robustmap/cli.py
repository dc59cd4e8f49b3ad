"""``robustmap`` command line: run, compare, terrain utilities.

Exit codes: 0 success, 2 configuration or input error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from importlib import resources
from pathlib import Path

from . import __version__
from .belief import belief_to_csv
from .config import ConfigError, dump_config, load_config, parse_config
from .geometry import Workspace, order_k_assignment, partition_to_json
from .metrics import metrics_csv
from .output import cost_trace_csv, render_map_pgm, waypoints_csv, write_atomic
from .simulator import DEFAULT_WORKSPACE, Simulation, compare_methods
from .terrain import GridParseError, TerrainField, ascii_grid_text, csv_grid_text, load_grid, synthetic_terrain

log = logging.getLogger("robustmap")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class _Fail(Exception):
    def __init__(self, code: int, msg: str):
        super().__init__(msg)
        self.code = code


def _bundled_demo() -> Path:
    return Path(str(resources.files("robustmap") / "data" / "demo.toml"))


def _config_path(arg: str | None) -> Path | None:
    if arg is None:
        return None
    p = Path(arg)
    # "demo" or "demo.toml" fall back to the copy shipped in the package
    if not p.exists() and p.name in ("demo", "demo.toml"):
        return _bundled_demo()
    return p


def _resolve(args):
    try:
        path = _config_path(args.config)
        if path is None:
            return parse_config({}, args.set, args.seed)
        return load_config(path, args.set, args.seed)
    except ConfigError as exc:
        raise _Fail(EXIT_CONFIG, str(exc)) from exc


def _setup(cfg):
    try:
        return Simulation(cfg.scenario)
    except (OSError, ValueError) as exc:
        raise _Fail(EXIT_CONFIG, str(exc)) from exc


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise _Fail(EXIT_CONFIG, f"cannot create output directory {out}: {exc}") from exc
    return out


def cmd_run(args) -> int:
    cfg = _resolve(args)
    sim = _setup(cfg)
    out = _out_dir(args)
    sc = cfg.scenario
    try:
        trace = sim.run()
    except Exception as exc:  # noqa: BLE001 - anything here is a runtime failure
        raise _Fail(EXIT_RUNTIME, f"simulation failed: {exc}") from exc

    write_atomic(out / "metrics.csv", metrics_csv(trace.metrics))
    initial = sim.initial_state().positions
    write_atomic(out / "robots_0.csv", waypoints_csv([(0, initial)]))
    for s in trace.steps:
        write_atomic(out / f"robots_{s.t}.csv", waypoints_csv([(s.t, s.positions)]))
    write_atomic(out / "cost_trace.csv", cost_trace_csv((s.t, s.descent_costs) for s in trace.steps))
    by_t = {s.t: s for s in trace.steps}
    for t, particles in sorted(trace.snapshots.items()):
        assignment = order_k_assignment(by_t[t].positions, sim.grid, sc.k)
        write_atomic(out / f"partition_{t}.json", partition_to_json(assignment, sim.grid))
        write_atomic(out / f"belief_{t}.csv", belief_to_csv(particles))
    width = cfg.output["map_width"]
    write_atomic(out / "map_final.pgm", render_map_pgm(trace.final_map, trace.locations, sc.workspace, sc.measurement, width))
    write_atomic(out / "map_truth.pgm", render_map_pgm(trace.truth, trace.locations, sc.workspace, sc.measurement, width))
    prov = dict(trace.provenance)
    prov["constraint_violated"] = trace.constraint_violated
    write_atomic(out / "run.toml", dump_config(cfg.data, prov))

    last = trace.steps[-1].metrics
    if trace.constraint_violated:
        log.warning("k=%d < |F|+1 during the run: one reliable detector per region is not guaranteed", sc.k)
    _say(args, f"{sc.horizon} steps, final KL {last.kl:.4g}, RMSE {last.rmse:.4g}; outputs in {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _resolve(args)
    _setup(cfg)  # surfaces terrain and validation errors before any trial runs
    out = _out_dir(args)
    if args.trials < 1:
        raise _Fail(EXIT_CONFIG, "--trials must be >= 1")
    try:
        comp = compare_methods(cfg.scenario, args.methods, args.trials, workers=args.workers)
    except ValueError as exc:
        raise _Fail(EXIT_CONFIG, str(exc)) from exc
    except Exception as exc:  # noqa: BLE001
        raise _Fail(EXIT_RUNTIME, f"comparison failed: {exc}") from exc
    write_atomic(out / "comparison.csv", comp.to_csv())
    write_atomic(out / "run.toml", dump_config(cfg.data, {"config_hash": cfg.scenario.fingerprint(),
                                                          "seed": cfg.scenario.seed, "version": __version__,
                                                          "methods": comp.methods, "trials": args.trials}))
    med = comp.medians()
    _say(args, "  ".join(f"{m}: median KL {v:.4g}" for m, v in med.items()))
    if len(comp.methods) > 1:
        wins = comp.win_rates()
        _say(args, "  ".join(f"{m}: wins {v:.0%}" for m, v in wins.items()))
    return EXIT_OK


def _bounds_arg(values) -> Workspace | None:
    return None if values is None else Workspace.from_intervals(values[:2], values[2:])


def _load(path, bounds=None) -> TerrainField:
    try:
        return load_grid(path, bounds)
    except FileNotFoundError as exc:
        raise _Fail(EXIT_CONFIG, f"no such file: {path}") from exc
    except (GridParseError, ValueError, OSError) as exc:
        raise _Fail(EXIT_CONFIG, str(exc)) from exc


def _write_grid(fld: TerrainField, path: Path) -> None:
    text = csv_grid_text(fld) if path.suffix.lower() == ".csv" else ascii_grid_text(fld)
    write_atomic(path, text)


def cmd_terrain_gen(args) -> int:
    ws = _bounds_arg(args.bounds) or DEFAULT_WORKSPACE
    cell = (ws.x_max - ws.x_min) / args.nx
    ny = max(2, round((ws.y_max - ws.y_min) / cell))
    # ESRI ASCII needs square cells, so the northern edge snaps to a whole cell
    ws = Workspace(ws.x_min, ws.x_max, ws.y_min, ws.y_min + ny * cell)
    try:
        fld = synthetic_terrain(args.seed or 0, args.kind, ws, args.count, args.i_min, args.i_max, args.value, args.nx, ny)
    except ValueError as exc:
        raise _Fail(EXIT_CONFIG, str(exc)) from exc
    _write_grid(fld, Path(args.output))
    _say(args, f"wrote {args.output} ({args.nx}x{ny})")
    return EXIT_OK


def cmd_terrain_info(args) -> int:
    fld = _load(args.path, _bounds_arg(args.bounds))
    b = fld.bounds
    print(f"ncols={fld.ncols} nrows={fld.nrows}")
    print(f"bounds x=[{b.x_min!r}, {b.x_max!r}] y=[{b.y_min!r}, {b.y_max!r}]")
    print(f"min={float(fld.values.min())!r} max={float(fld.values.max())!r}")
    print(f"nodata={fld.filled}")
    return EXIT_OK


def cmd_terrain_convert(args) -> int:
    fld = _load(args.src, _bounds_arg(args.bounds))
    try:
        _write_grid(fld, Path(args.dst))
    except ValueError as exc:
        raise _Fail(EXIT_CONFIG, str(exc)) from exc
    _say(args, f"wrote {args.dst}")
    return EXIT_OK


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario TOML ('demo' selects the bundled demo)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. filter.n1=100 (repeatable)")
    common.add_argument("--out", default="out", metavar="DIR", help="output directory (default: out)")
    common.add_argument("--seed", type=int, help="master seed, overrides the config")
    common.add_argument("--quiet", action="store_true", help="only errors on stderr, nothing on stdout")

    parser = argparse.ArgumentParser(prog="robustmap", description="Robust multi-robot mapping: run, compare, terrain utilities.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run one scenario and write the output bundle")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", parents=[common], help="paired comparison of partition orders")
    p.add_argument("--methods", nargs="+", default=["non-robust", "robust-2"],
                   help="labels such as non-robust, robust, robust-3, k=2")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--workers", type=int, help="worker processes (default: ROBUSTMAP_THREADS or 1)")
    p.set_defaults(func=cmd_compare)

    t = sub.add_parser("terrain", help="terrain grid utilities")
    tsub = t.add_subparsers(dest="terrain_command", required=True)
    bounds_help = "x_min x_max y_min y_max"

    p = tsub.add_parser("gen", parents=[common], help="write a synthetic grid (.asc or .csv)")
    p.add_argument("output")
    p.add_argument("--kind", default="gaussian-bumps", choices=["gaussian-bumps", "ramp", "constant"])
    p.add_argument("--value", type=float)
    p.add_argument("--count", type=int, default=6)
    p.add_argument("--nx", type=int, default=128)
    p.add_argument("--i-min", type=float, default=-1000.0)
    p.add_argument("--i-max", type=float, default=4000.0)
    p.add_argument("--bounds", type=float, nargs=4, metavar="B", help=bounds_help)
    p.set_defaults(func=cmd_terrain_gen)

    p = tsub.add_parser("info", parents=[common], help="print grid size, bounds, range, NODATA count")
    p.add_argument("path")
    p.add_argument("--bounds", type=float, nargs=4, metavar="B", help=f"for CSV input: {bounds_help}")
    p.set_defaults(func=cmd_terrain_info)

    p = tsub.add_parser("convert", parents=[common], help="convert between ESRI ASCII and CSV by extension")
    p.add_argument("src")
    p.add_argument("dst")
    p.add_argument("--bounds", type=float, nargs=4, metavar="B", help=f"for CSV input: {bounds_help}")
    p.set_defaults(func=cmd_terrain_convert)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="robustmap: %(levelname)s: %(message)s")
    try:
        return args.func(args)
    except _Fail as exc:
        print(f"robustmap: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
