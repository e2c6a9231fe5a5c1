"""Command-line front end.

    xbar margin   --line-config 3 --rows 64 --cols 128
    xbar sweep    --grid rows --all-configs --format csv
    xbar simulate --weights w.csv --inputs x.csv --mode oracle --dump-netlist net.txt
    xbar mnist    --sizes table2

Exit codes: 0 success, 2 the design (or run) fails its check, 1 bad input.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from .compute import Mode, SubarrayState, threshold_window, tmvm_execute
from .device import OtsParams, PcmCellParams
from .drive import DrivePattern
from .interconnect import (DEFAULT_R_DRIVER, GeometryError, LineConfiguration, SubarrayGeometry,
                           get_config, load_line_config, min_cell_pitch)
from .margin import (TREND_GRIDS, noise_margin, records_to_csv, records_to_json, sweep,
                     trend_grid)
from .units import UnitError, parse


class ConfigError(ValueError):
    pass


_DEVICE_KEYS = {"g_amorphous": "conductance", "g_crystalline": "conductance",
                "i_set": "current", "i_reset": "current", "t_set": "time", "t_reset": "time"}
_OTS_KEYS = {"v_threshold": "voltage", "g_on": "conductance", "g_off": "conductance"}


@dataclass
class RunConfig:
    device: PcmCellParams = field(default_factory=PcmCellParams)
    ots: OtsParams = field(default_factory=OtsParams)
    line_config: LineConfiguration = field(default_factory=lambda: get_config("cfg3"))
    n_row: int = 64
    n_column: int = 128
    l_cell: Optional[float] = None      # nm; None -> 4 x l_min
    w_cell: Optional[float] = None      # nm; None -> w_min
    r_driver: float = DEFAULT_R_DRIVER
    v_dd: object = "mid"                # "mid" or volts
    mode: str = "analytic"
    fmt: str = "json"
    out: Optional[str] = None

    def geometry(self) -> SubarrayGeometry:
        w_min, l_min = min_cell_pitch(self.line_config)
        return SubarrayGeometry(self.n_row, self.n_column,
                                w_min if self.w_cell is None else self.w_cell,
                                4 * l_min if self.l_cell is None else self.l_cell,
                                self.r_driver)

    @classmethod
    def from_dict(cls, d: dict, base: Optional["RunConfig"] = None) -> "RunConfig":
        cfg = base or cls()
        known = {"device", "ots", "line_config", "geometry", "v_dd", "mode", "format", "out"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown keys: {sorted(extra)}")
        try:
            if "device" in d:
                cfg.device = PcmCellParams(**_quantities(d["device"], _DEVICE_KEYS, "device"))
            if "ots" in d:
                cfg.ots = OtsParams(**_quantities(d["ots"], _OTS_KEYS, "ots"))
            if "line_config" in d:
                cfg.line_config = _line_config(d["line_config"])
            g = d.get("geometry", {})
            bad = set(g) - {"n_row", "n_column", "l_cell", "w_cell", "r_driver"}
            if bad:
                raise ConfigError(f"unknown geometry keys: {sorted(bad)}")
            for k in ("n_row", "n_column"):
                if k in g:
                    if not isinstance(g[k], int) or isinstance(g[k], bool):
                        raise ConfigError(f"geometry.{k} must be an integer")
                    setattr(cfg, k, g[k])
            if "l_cell" in g:
                cfg.l_cell = parse(g["l_cell"], "length")
            if "w_cell" in g:
                cfg.w_cell = parse(g["w_cell"], "length")
            if "r_driver" in g:
                cfg.r_driver = parse(g["r_driver"], "resistance")
            if "v_dd" in d:
                cfg.v_dd = _vdd(d["v_dd"])
            if "mode" in d:
                cfg.mode = Mode(d["mode"]).value
            if "format" in d:
                cfg.fmt = _fmt(d["format"])
            if "out" in d:
                cfg.out = str(d["out"])
        except (UnitError, ValueError, TypeError, KeyError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
        return cfg

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(d)


def _quantities(d, keys, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    out = {}
    for k, v in d.items():
        if k not in keys:
            raise ConfigError(f"unknown {where} key {k!r}")
        out[k] = parse(v, keys[k])
    return out


def _line_config(v) -> LineConfiguration:
    if isinstance(v, dict):
        return LineConfiguration(name=v.get("name", "custom"), wlt_layers=tuple(v["wlt"]),
                                 bl_layers=tuple(v["bl"]), wlb_layers=tuple(v["wlb"]),
                                 bl_along=v.get("bl_along", "w_cell"),
                                 via_aware=bool(v.get("via_aware", False)))
    s = str(v)
    if Path(s).suffix == ".json" or os.path.sep in s:
        return load_line_config(s)
    return get_config(s)


def _vdd(v):
    if v == "mid":
        return "mid"
    return parse(v, "voltage")


def _fmt(v):
    if v not in ("csv", "json"):
        raise ConfigError("format must be csv or json")
    return v


# ------------------------------------------------------------ arguments


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="run configuration JSON, or a built-in line configuration id")
    p.add_argument("--rows", type=int)
    p.add_argument("--cols", type=int)
    p.add_argument("--cell-length", help="cell length with unit, e.g. 480nm")
    p.add_argument("--cell-width", help="cell width with unit, e.g. 36nm")
    p.add_argument("--l-mult", type=float, help="cell length as a multiple of l_min")
    p.add_argument("--w-mult", type=float, help="cell width as a multiple of w_min")
    p.add_argument("--r-driver", help="driver resistance with unit, e.g. 0.1ohm")
    p.add_argument("--line-config", help="1, 2, 3 or a JSON file")
    p.add_argument("--vdd", help="supply with unit (0.6V) or 'mid'")
    p.add_argument("--mode", choices=[m.value for m in Mode])
    p.add_argument("--format", choices=["csv", "json"])
    p.add_argument("--out", help="output file (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="xbar", description="3D crosspoint PCM TMVM analysis")
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("margin", help="noise margin of one design")
    _common(p)
    p.add_argument("--inputs", default="1", help="driven inputs the window must tolerate: N or 'row'")
    p = sub.add_parser("sweep", help="noise margin over a grid")
    _common(p)
    p.add_argument("--grid", choices=sorted(TREND_GRIDS), help="preset grid of a trend figure")
    p.add_argument("--axis", choices=["n_row", "n_column", "l_cell", "w_cell"])
    p.add_argument("--values", help="comma separated; lengths with units")
    p.add_argument("--all-configs", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p = sub.add_parser("simulate", help="one TMVM step from CSV weights and inputs")
    _common(p)
    p.add_argument("--weights", required=True, help="CSV, one row per subarray row")
    p.add_argument("--inputs", required=True, help="CSV, one input vector per line")
    p.add_argument("--output-column", type=int, help="default: last column")
    p.add_argument("--threshold", type=int, default=1, help="k for the mid-window supply")
    p.add_argument("--dump-netlist", help="write the oracle netlist of the first step")
    p = sub.add_parser("mnist", help="single-layer binary NN on MNIST")
    _common(p)
    p.add_argument("--data-dir", help="IDX directory (default $XBAR_DATA_DIR or bundled sample)")
    p.add_argument("--model", help="model directory (default bundled)")
    p.add_argument("--limit", type=int, help="use the first N images")
    p.add_argument("--sizes", choices=["one", "table2"], default="one")
    return ap


def resolve(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        c = args.config
        if Path(c).is_file() and Path(c).suffix == ".json" and not _is_line_config(c):
            cfg = RunConfig.from_file(c)
        else:
            try:
                cfg.line_config = _line_config(c)
            except (KeyError, ValueError, OSError) as exc:
                raise ConfigError(f"--config {c}: {exc}") from exc
    try:
        if args.line_config:
            lc = args.line_config
            cfg.line_config = _line_config(lc if not lc.isdigit() else f"cfg{lc}")
        if args.rows is not None:
            cfg.n_row = args.rows
        if args.cols is not None:
            cfg.n_column = args.cols
        w_min, l_min = min_cell_pitch(cfg.line_config)
        if args.cell_length:
            cfg.l_cell = parse(args.cell_length, "length")
        if args.l_mult is not None:
            cfg.l_cell = args.l_mult * l_min
        if args.cell_width:
            cfg.w_cell = parse(args.cell_width, "length")
        if args.w_mult is not None:
            cfg.w_cell = args.w_mult * w_min
        if args.r_driver:
            cfg.r_driver = parse(args.r_driver, "resistance")
        if args.vdd:
            cfg.v_dd = _vdd(args.vdd)
        if args.mode:
            cfg.mode = args.mode
        if args.format:
            cfg.fmt = args.format
        if args.out:
            cfg.out = args.out
    except (UnitError, KeyError, ValueError, OSError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _is_line_config(path) -> bool:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError):
        return False
    return isinstance(d, dict) and {"wlt", "bl", "wlb"} <= set(d)


def _emit(text: str, cfg: RunConfig):
    if cfg.out:
        Path(cfg.out).write_text(text)
    else:
        sys.stdout.write(text)


def _json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def _clean(x):
    # JSON has no infinities: encode them as null
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


# ------------------------------------------------------------ commands


def cmd_margin(args) -> int:
    cfg = resolve(args)
    geom = cfg.geometry()
    n_in = args.inputs if args.inputs == "row" else int(args.inputs)
    rep = noise_margin(geom, cfg.line_config, cfg.device, n_inputs=n_in)
    d = {"config": cfg.line_config.name, "n_row": geom.n_row, "n_column": geom.n_column,
         "w_cell": geom.w_cell, "l_cell": geom.l_cell, "r_driver": geom.r_driver}
    d.update(rep.to_dict())
    if cfg.fmt == "csv":
        rec = dict(d, axis="", value="", v_min_last=rep.combined.v_lo, v_max=rep.combined.v_hi,
                   note="")
        _emit(records_to_csv([_clean(rec)]), cfg)
    else:
        _emit(_json(d), cfg)
    return 0 if rep.feasible else 2


def _sweep_job(args, cfg: RunConfig, config: LineConfiguration):
    if args.grid:
        axis, vals, base = trend_grid(args.grid, config, cfg.r_driver)
        over = {}
        if args.rows is not None and axis != "n_row":
            over["n_row"] = args.rows
        if args.cols is not None and axis != "n_column":
            over["n_column"] = args.cols
        return axis, vals, base.resized(**over) if over else base
    if not args.axis or args.values is None:
        raise ConfigError("sweep needs --grid or --axis with --values")
    parts = [s.strip() for s in args.values.split(",") if s.strip()]
    if not parts:
        raise ConfigError("empty grid")
    if args.axis in ("n_row", "n_column"):
        try:
            vals = [int(s) for s in parts]
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    else:
        vals = [parse(s, "length") for s in parts]
    return args.axis, vals, replace(cfg, line_config=config).geometry()


def _sweep_one(job):
    axis, vals, base, config, params = job
    return sweep(axis, vals, base, config, params)


def cmd_sweep(args) -> int:
    cfg = resolve(args)
    configs = [get_config(k) for k in ("cfg1", "cfg2", "cfg3")] if args.all_configs \
        else [cfg.line_config]
    jobs = []
    for c in configs:
        axis, vals, base = _sweep_job(args, cfg, c)
        jobs.append((axis, vals, base, c, cfg.device))
    if args.jobs > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(args.jobs) as ex:
            parts = list(ex.map(_sweep_one, jobs))   # map keeps the input order
    else:
        parts = [_sweep_one(j) for j in jobs]
    recs = [_clean(r) for part in parts for r in part]
    _emit(records_to_csv(recs) if cfg.fmt == "csv" else records_to_json(recs), cfg)
    return 0


def _read_bits(path) -> np.ndarray:
    try:
        a = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not np.isin(a, (0, 1)).all():
        raise ConfigError(f"{path}: entries must be 0 or 1")
    return a.astype(np.int8)


def cmd_simulate(args) -> int:
    cfg = resolve(args)
    W = _read_bits(args.weights)
    X = _read_bits(args.inputs)
    if W.shape[1] != X.shape[1]:
        raise ConfigError("weights and inputs differ in width")
    if args.rows is None:
        cfg.n_row = W.shape[0]
    if args.cols is None:
        cfg.n_column = W.shape[1] + 1
    geom = cfg.geometry()
    if W.shape[0] > geom.n_row or W.shape[1] > geom.n_column:
        raise ConfigError("weights do not fit the subarray")
    col = geom.n_column - 1 if args.output_column is None else args.output_column
    win = threshold_window(args.threshold, W.shape[1], geom, cfg.line_config, cfg.device,
                           rows=W.shape[0])
    v = win.mid if cfg.v_dd == "mid" else cfg.v_dd
    if not win.contains(v):
        sys.stderr.write(f"WARNING: v_dd={v:.4g} V is outside the window "
                         f"[{win.v_lo:.4g}, {win.v_hi:.4g}] V\n")
    state = SubarrayState.blank(geom, cfg.line_config, cfg.device).with_weights(W)
    rows = list(range(W.shape[0]))
    results = []
    failed = False
    for n, x in enumerate(X):
        drive = DrivePattern.from_inputs(x, geom.n_row, col, v, n_column=geom.n_column,
                                         rows=rows)
        dump = args.dump_netlist if n == 0 else None
        if dump and cfg.mode != "oracle":
            raise ConfigError("--dump-netlist needs --mode oracle")
        res = tmvm_execute(state, drive, cfg.mode, commit=False, netlist_path=dump)
        failed |= not res.disturb.empty
        results.append({"step": n, "bits": [int(b) for b in res.bits[rows]],
                        "row_currents": [float(c) for c in res.trace.row_currents[rows]],
                        "energy": res.trace.energy, "disturb": res.disturb.to_dict()})
    if cfg.fmt == "csv":
        lines = ["step,row,bit,current,disturbs"]
        for r in results:
            for k in rows:
                lines.append(f"{r['step']},{k},{r['bits'][k]},{r['row_currents'][k]!r},"
                             f"{r['disturb']['count']}")
        _emit("\n".join(lines) + "\n", cfg)
    else:
        _emit(_json({"v_dd": v, "window": win.to_dict(), "mode": cfg.mode, "steps": results}),
              cfg)
    return 2 if failed else 0


def _mnist_geometries(args, cfg: RunConfig):
    if args.sizes == "one":
        return [cfg.geometry()]
    from .workload import table2_geometries
    return table2_geometries(cfg.line_config, cfg.r_driver)


def cmd_mnist(args) -> int:
    from .workload import (binarize_batch, bundled_model, data_dir, evaluate_accuracy,
                           load_mnist, map_and_run, reference_forward, BinaryNnModel)
    cfg = resolve(args)
    d = Path(args.data_dir) if args.data_dir else data_dir()
    try:
        images, labels = load_mnist(d)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"MNIST data: {exc}") from exc
    if args.limit:
        images, labels = images[: args.limit], labels[: args.limit]
    model = BinaryNnModel.load(args.model) if args.model else bundled_model()
    X = binarize_batch(images)
    ref_bits, _, ref = reference_forward(model, X)
    rows = []
    ok = True
    for geom in _mnist_geometries(args, cfg):
        rep = map_and_run(model, X, geom, cfg.line_config, cfg.v_dd, cfg.device)
        agree = bool(np.array_equal(rep.predictions, ref))
        ok &= agree
        rows.append(dict(n_row=geom.n_row, n_column=geom.n_column, l_cell=geom.l_cell,
                         accuracy=evaluate_accuracy(rep.predictions, labels),
                         reference_accuracy=evaluate_accuracy(ref, labels),
                         matches_reference=agree,
                         bits_match_reference=bool(np.array_equal(rep.bits, ref_bits)),
                         **rep.summary()))
    if cfg.fmt == "csv":
        cols = ["n_row", "n_column", "l_cell", "images", "images_per_step", "steps", "v_dd",
                "accuracy", "reference_accuracy", "matches_reference", "bits_match_reference",
                "energy_per_image",
                "disturbs"]
        lines = [",".join(cols)] + [",".join(str(_clean(r[c])) for c in cols) for r in rows]
        _emit("\n".join(lines) + "\n", cfg)
    else:
        _emit(_json(rows if len(rows) > 1 else rows[0]), cfg)
    return 0 if ok else 2


COMMANDS = {"margin": cmd_margin, "sweep": cmd_sweep, "simulate": cmd_simulate,
            "mnist": cmd_mnist}


def main(argv: Optional[List[str]] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, GeometryError, UnitError) as exc:
        sys.stderr.write(f"xbar {args.command}: error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
