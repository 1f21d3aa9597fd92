"""Command-line driver: ``nullhorizon {vacuum-regression,evolve,rates,audit}``.

Exit codes: 0 success, 2 configuration error or refused input, 3 I/O failure,
4 evolution error, 5 missing data, 1 when a regression threshold is missed.
"""
from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
import time
from dataclasses import fields
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import analysis as A
from . import diagnostics as D
from .core import DataError, DomainError, ModelParams, u_from_U
from .evolution import EvolutionError, GridSheet, StepControls, evolve, load_sheet, save_sheet
from .initial_data import IngoingProfile, load_profile_table, power_law_profile

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO, EXIT_EVOLVE, EXIT_MISSING = 0, 1, 2, 3, 4, 5

SLICE_HEADER = ("U,u,v,r,w,sigma,omega2hat,phi,dUr,dvr,dUphi,dvphi,m,K,res_u,res_v")
SHEET_FILE = "sheet.npz"

VACUUM_M_TOL = 1e-5
VACUUM_K_TOL = 1e-4
VACUUM_R_CUT = 0.05
ORDER_TARGET, ORDER_TOL = 2.0, 0.3


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration

DEFAULT_CONFIG = {
    "params": ModelParams().to_dict(),
    "grid": StepControls().to_dict(),
    "profiles": {"horizon": {"kind": "power_law", "two_term": False, "path": None},
                 "ingoing": {"rYphi": None, "dUr0": None}},
    "outputs": {"slices": True, "curves": True, "rates": True, "out_dir": "out"},
    "analysis": {"stations": list(A.DEFAULT_STATIONS), "r_fit_max": None, "evolve_inline": True},
    "convergence": {"levels": 4, "nU": 256, "v_span": 2.0, "u0": -11.5, "r_min": 0.2,
                    "r_cut": 0.3},
}

# vacuum regression domain: a short v-interval reaching r = r_min on a uniform U grid
VACUUM_CONFIG = {
    "params": {"M": 1.0, "p": 2.0, "q": 2.0, "D1": 0.0, "D2": 0.0, "D3": 0.0, "v0": 10.0,
               "U0": 4.0 * math.exp(-11.5 / 4.0), "r_min": 1e-3, "r0": 0.4},
    "grid": {"nU": 512, "U_spacing": "uniform", "base_dv": 2.0 / 1024, "v_max": 12.0,
             "max_dw": 0.1, "eta": 0.0125, "max_dsigma": 0.0125, "eta_U": 0.008,
             "max_dsigma_U": 0.008, "r_refine_floor": 0.05},
    "outputs": {"slices": False, "curves": False, "rates": False},
}

BENCHMARK_CONFIG = {
    "params": {"M": 1.0, "p": 2.0, "q": 2.0, "D1": 0.05, "D2": 0.05, "D3": 0.05, "v0": 10.0,
               "U0": 4.0 * math.exp(-20.0 / 4.0), "r_min": 1e-3, "r0": 0.4},
    "grid": {"nU": 512, "U_spacing": "log", "u_first": -400.0, "base_dv": 0.1, "v_max": 400.0,
             "eta": 0.05, "max_dsigma": 0.05, "eta_U": 0.1, "max_dsigma_U": 0.1},
    "outputs": {"slices": False},
}


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        where = f"{path}.{k}" if path else k
        if k not in base:
            raise ConfigError(f"unknown key '{where}'")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"'{where}' must be an object")
            out[k] = _merge(base[k], v, where)
        else:
            out[k] = v
    return out


def normalize_config(raw: dict, preset: Optional[dict] = None) -> dict:
    """Fill defaults, coerce types and validate; idempotent on its own output."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    cfg = _merge(DEFAULT_CONFIG, preset or {})
    cfg = _merge(cfg, raw)
    try:
        params = ModelParams(**{k: float(v) for k, v in cfg["params"].items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"params: {exc}") from exc
    cfg["params"] = params.to_dict()
    ints = {f.name for f in fields(StepControls) if f.type in ("int", int)}
    grid = {}
    for k, v in cfg["grid"].items():
        if k == "U_spacing":
            if v not in ("log", "uniform"):
                raise ConfigError("grid.U_spacing must be 'log' or 'uniform'")
            grid[k] = v
        elif k in ints:
            grid[k] = int(v)
        else:
            grid[k] = float(v)
    for k in ("nU", "base_dv", "dv_min", "max_dw", "max_dsigma", "eta", "v_max", "tol"):
        if not grid[k] > 0:
            raise ConfigError(f"grid.{k} must be positive")
    if grid["v_max"] <= params.v0:
        raise ConfigError("grid.v_max must exceed params.v0")
    cfg["grid"] = grid
    hz = cfg["profiles"]["horizon"]
    if hz["kind"] not in ("power_law", "table"):
        raise ConfigError("profiles.horizon.kind must be 'power_law' or 'table'")
    if hz["kind"] == "table" and not hz.get("path"):
        raise ConfigError("profiles.horizon.path is required for kind 'table'")
    hz["two_term"] = bool(hz["two_term"])
    ing = cfg["profiles"]["ingoing"]
    for k in ("rYphi", "dUr0"):
        if ing[k] is not None:
            ing[k] = float(ing[k])
    out = cfg["outputs"]
    for k in ("slices", "curves", "rates"):
        out[k] = bool(out[k])
    out["out_dir"] = str(out["out_dir"])
    an = cfg["analysis"]
    an["stations"] = sorted(float(s) for s in an["stations"])
    if any(s <= params.v0 for s in an["stations"]):
        raise ConfigError("analysis.stations must lie above v0")
    an["r_fit_max"] = None if an["r_fit_max"] is None else float(an["r_fit_max"])
    an["evolve_inline"] = bool(an["evolve_inline"])
    cv = cfg["convergence"]
    cv["levels"], cv["nU"] = int(cv["levels"]), int(cv["nU"])
    for k in ("v_span", "u0", "r_min", "r_cut"):
        cv[k] = float(cv[k])
    if cv["levels"] < 2:
        raise ConfigError("convergence.levels must be at least 2")
    return cfg


def load_config(path: Optional[str], preset: Optional[dict] = None) -> dict:
    if path is None:
        return normalize_config({}, preset)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return normalize_config(raw, preset)


def dump_config(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


def build_run(cfg: dict):
    params = ModelParams(**cfg["params"])
    controls = StepControls(**cfg["grid"])
    hz = cfg["profiles"]["horizon"]
    horizon = (load_profile_table(hz["path"]) if hz["kind"] == "table"
               else power_law_profile(params, hz["two_term"]))
    ing = cfg["profiles"]["ingoing"]
    rY = 0.5 * params.D3 if ing["rYphi"] is None else ing["rYphi"]
    ingoing = IngoingProfile.constant(rY, ing["dUr0"])
    return params, controls, horizon, ingoing


def run_evolution(cfg: dict) -> GridSheet:
    params, controls, horizon, ingoing = build_run(cfg)
    return evolve(params, controls, horizon, ingoing)


# ---------------------------------------------------------------------------
# output

def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_slices(sheet: GridSheet, out_dir: Path) -> int:
    """One CSV per column; returns the number of files written."""
    M = sheet.params.M
    d = out_dir / "slices"
    d.mkdir(parents=True, exist_ok=True)
    for j, col in enumerate(sheet.columns):
        x = col.x
        g = D.null_gradients(x)
        m = D.hawking_mass_array(x)
        K = D.kretschmann_array(x)
        ru = D.residual_u(sheet, j)
        rv = D.residual_v(col.v, x)
        u = u_from_U(col.U, M) if col.U > 0 else -math.inf
        with open(d / f"column_{j:05d}.csv", "w") as fh:
            fh.write(SLICE_HEADER + "\n")
            for i in range(len(col.v)):
                row = (col.U, u, col.v[i], g["r"][i], x[i, 0], x[i, 1], g["O2"][i], x[i, 2],
                       g["ru"][i], g["rv"][i], g["pu"][i], g["pv"][i], m[i], K[i], ru[i], rv[i])
                fh.write(",".join(_fmt(float(val)) for val in row) + "\n")
    return len(sheet.columns)


def write_curves(sheet: GridSheet, out_dir: Path) -> None:
    curves = [D.locate_apparent_horizon(sheet), D.locate_singularity(sheet),
              D.locate_r_level(sheet, sheet.params.r0)]
    D.write_curves_csv(curves, out_dir / "curves.csv")


# ---------------------------------------------------------------------------
# verdicts

def _line(ok: bool, label: str, detail: str) -> str:
    return f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}"


def rate_verdicts(rep: A.RateReport, params: ModelParams) -> List[str]:
    out = []
    st = [s for s in rep.stations if math.isfinite(s.N)]
    if params.is_vacuum:
        ok = all(abs(s.N - 6) <= 0.02 for s in st)
        out.append(_line(ok and bool(st), "N(v)=6",
                         ", ".join(f"{s.N:.6f}" for s in st) or "no stations"))
        return out
    out.append(_line(bool(st) and all(s.N > 6 for s in st), "N(v)>6",
                     ", ".join(f"v={s.v:.0f}: N-6={s.N - 6:.3e}" for s in st)))
    mono = all(b.N <= a.N + 2 * math.hypot(a.N_stderr, b.N_stderr) for a, b in zip(st, st[1:]))
    out.append(_line(mono and len(st) > 1, "N(v) nonincreasing", f"{len(st)} stations"))
    f = rep.fits.get("N_minus_6_vs_v")
    target = -2 * params.p
    out.append(_line(f is not None and abs(f.exponent - target) <= 0.15 * abs(target),
                     "N(v)-6 slope ~ -2p",
                     f"{f.exponent:.3f} +- {f.stderr:.3f} (target {target:g})" if f else "no fit"))
    out.append(_line(bool(st) and all(s.beta > 0 for s in st), "beta(v)>0",
                     ", ".join(f"{s.beta:.3e}" for s in st)))
    dec = all(b.beta < a.beta for a, b in zip(st, st[1:]))
    out.append(_line(dec and len(st) > 1, "beta(v)->0", "strictly decreasing" if dec else "not decreasing"))
    cons = [A.consistency_2beta(s) for s in st]
    out.append(_line(bool(cons) and all(d <= 3 * e for d, e in cons), "|2beta-(N-6)| <= 3 stderr",
                     ", ".join(f"{d / e if e else math.inf:.2f}" for d, e in cons)))
    for name, floor in (("f1_decay", params.p - 0.3), ("f2_decay", params.p - 0.3)):
        ff = rep.fits.get(name)
        out.append(_line(ff is not None and ff.exponent >= floor, f"{name} exponent >= p-0.3",
                         f"{ff.exponent:.3f} +- {ff.stderr:.3f}" if ff else "no fit"))
    return out


def audit_verdicts(sheet: GridSheet, audit: A.AuditReport) -> List[str]:
    out = []
    lo, n = D.mass_inequality_margin(sheet)
    out.append(_line(lo >= 1 - 1e-6, "K r^6 >= 32 m^2", f"min ratio {lo:.9f} over {n} cells"))
    mc = D.trapped_mass_monotonicity(sheet)
    out.append(_line(mc.n_cells > 0 and mc.n_below == 0, "trapped d_U m >= -1e-8 M",
                     f"min increment {mc.min_increment:.3e} over {mc.n_cells} pairs"))
    try:
        f = A.apparent_horizon_slope(sheet)
        target = -2 * sheet.params.p + 1
        out.append(_line(abs(f.exponent - target) <= 0.3, "|r_A - 2M| slope ~ -2p+1",
                         f"{f.exponent:.4f} (target {target:g})"))
    except (A.InsufficientDataError, DomainError) as exc:
        out.append(_line(False, "|r_A - 2M| slope ~ -2p+1", str(exc)))
    if not sheet.params.is_vacuum:
        for name in ("r2_dvphi_weighted", "r2_duphi_weighted"):
            ln = audit.line(name)
            k = ln.constants
            ok = ln.violation_fraction == 0 and k.get("c", 0) > 0 and k.get("C_over_c", math.inf) <= 20
            out.append(_line(ok, f"{name} in [c, C], C/c <= 20",
                             f"c={k.get('c', math.nan):.4g} C={k.get('C', math.nan):.4g} "
                             f"C/c={k.get('C_over_c', math.nan):.3g}"))
    return out


# ---------------------------------------------------------------------------
# commands

def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg, flush=True)


def _out_dir(args, cfg) -> Path:
    return Path(args.out if args.out else cfg["outputs"]["out_dir"])


def convergence_study(cfg: dict) -> dict:
    """Vacuum errors and residual norms on uniform grids doubled ``levels - 1`` times."""
    cv = cfg["convergence"]
    P = cfg["params"]
    params = ModelParams(M=P["M"], p=P["p"], q=P["q"], D1=0.0, D2=0.0, D3=0.0, v0=P["v0"],
                         U0=4 * P["M"] * math.exp(cv["u0"] / (4 * P["M"])), r_min=cv["r_min"],
                         r0=max(P["r0"], 1.5 * cv["r_min"]))
    big = 1e9
    rows = []
    for k in range(cv["levels"]):
        n = cv["nU"] * 2 ** k
        c = StepControls(nU=n, U_spacing="uniform", base_dv=cv["v_span"] / n,
                         v_max=params.v0 + cv["v_span"], max_dw=big, eta=big, max_dsigma=big,
                         eta_U=0.0, max_dsigma_U=0.0)
        sheet = evolve(params, c)
        em, eK = D.vacuum_errors(sheet, cv["r_cut"] * params.M)
        rs = D.residual_summary(sheet, cv["r_cut"] * params.M)
        rows.append({"nU": n, "mass_error": em, "kretschmann_error": eK,
                     "max_res_u": rs.max_res_u, "max_res_v": rs.max_res_v, "l2_res": rs.l2_res})
    keys = ["mass_error", "kretschmann_error", "max_res_u", "max_res_v", "l2_res"]
    orders = {k: [math.log2(a[k] / b[k]) for a, b in zip(rows, rows[1:])] for k in keys}
    return {"levels": rows, "orders": orders}


def cmd_vacuum_regression(args) -> int:
    cfg = load_config(args.config, VACUUM_CONFIG)
    params = ModelParams(**cfg["params"])
    if not params.is_vacuum:
        print("vacuum-regression requires D1 = D2 = D3 = 0", file=sys.stderr)
        return EXIT_CONFIG
    t0 = time.perf_counter()
    sheet = run_evolution(cfg)
    em, eK = D.vacuum_errors(sheet, VACUUM_R_CUT * params.M)
    t_run = time.perf_counter() - t0
    t1 = time.perf_counter()
    conv = convergence_study(cfg)
    t_conv = time.perf_counter() - t1
    flat = [o for v in conv["orders"].values() for o in v]
    ok_orders = all(abs(o - ORDER_TARGET) <= ORDER_TOL for o in flat)
    lines = [
        _line(em <= VACUUM_M_TOL, "max|m-M|/M on r>=0.05M", f"{em:.3e} (tol {VACUUM_M_TOL:g})"),
        _line(eK <= VACUUM_K_TOL, "max|K r^6/48M^2-1| on r>=0.05M", f"{eK:.3e} (tol {VACUUM_K_TOL:g})"),
        _line(ok_orders, "convergence order",
              " ".join(f"{k}=" + "/".join(f"{o:.2f}" for o in v) for k, v in conv["orders"].items())),
    ]
    for ln in lines:
        _say(args, ln)
    _say(args, f"runtime: regression {t_run:.1f} s, convergence {t_conv:.1f} s")
    if args.out:
        d = Path(args.out)
        d.mkdir(parents=True, exist_ok=True)
        A.write_report(A._clean({"mass_error": em, "kretschmann_error": eK,
                                 "runtime_s": t_run, "convergence": conv,
                                 "config": cfg}), d / "vacuum_regression.json")
    return EXIT_OK if (em <= VACUUM_M_TOL and eK <= VACUUM_K_TOL and ok_orders) else EXIT_FAIL


def cmd_evolve(args) -> int:
    cfg = load_config(args.config, BENCHMARK_CONFIG)
    out_dir = _out_dir(args, cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    sheet = run_evolution(cfg)
    _say(args, f"evolved {sheet.n_cells()} cells in {time.perf_counter() - t0:.1f} s; "
               f"{sheet.stop_reasons.count('reached_rmin')} columns reached r_min")
    (out_dir / "config.json").write_text(dump_config(cfg))
    save_sheet(sheet, out_dir / SHEET_FILE)
    if cfg["outputs"]["slices"]:
        n = write_slices(sheet, out_dir)
        _say(args, f"wrote {n} slice files")
    if cfg["outputs"]["curves"]:
        write_curves(sheet, out_dir)
    if cfg["outputs"]["rates"]:
        return _rates(args, cfg, sheet, out_dir)
    return EXIT_OK


def _obtain_sheet(args, cfg, out_dir: Path) -> Optional[GridSheet]:
    path = out_dir / SHEET_FILE
    if path.exists():
        return load_sheet(path)
    if cfg["analysis"]["evolve_inline"]:
        sheet = run_evolution(cfg)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_sheet(sheet, path)
        return sheet
    return None


def _stations(args, cfg) -> List[float]:
    if args.stations:
        try:
            return sorted(float(s) for s in args.stations.split(","))
        except ValueError as exc:
            raise ConfigError(f"--stations: {exc}") from exc
    return cfg["analysis"]["stations"]


def _rates(args, cfg, sheet: GridSheet, out_dir: Path) -> int:
    try:
        rep = A.rate_report(sheet, _stations(args, cfg), cfg["analysis"]["r_fit_max"])
    except A.InsufficientDataError as exc:
        print(f"missing data: {exc}", file=sys.stderr)
        return EXIT_MISSING
    for ln in rate_verdicts(rep, sheet.params):
        _say(args, ln)
    for n in rep.notices:
        _say(args, f"note: {n}")
    A.write_report(A.report_document(sheet, rep), out_dir / "rates.json")
    return EXIT_OK


def cmd_rates(args) -> int:
    cfg = load_config(args.config, BENCHMARK_CONFIG)
    out_dir = _out_dir(args, cfg)
    sheet = _obtain_sheet(args, cfg, out_dir)
    if sheet is None:
        print(f"missing data: no {SHEET_FILE} in {out_dir} and evolve_inline is off", file=sys.stderr)
        return EXIT_MISSING
    return _rates(args, cfg, sheet, out_dir)


def cmd_audit(args) -> int:
    cfg = load_config(args.config, BENCHMARK_CONFIG)
    out_dir = _out_dir(args, cfg)
    sheet = _obtain_sheet(args, cfg, out_dir)
    if sheet is None:
        print(f"missing data: no {SHEET_FILE} in {out_dir} and evolve_inline is off", file=sys.stderr)
        return EXIT_MISSING
    try:
        stations = _stations(args, cfg)
        audit = A.audit_estimates(sheet, v1=stations[0] * sheet.params.M)
    except A.InsufficientDataError as exc:
        print(f"missing data: {exc}", file=sys.stderr)
        return EXIT_MISSING
    for ln in audit_verdicts(sheet, audit):
        _say(args, ln)
    A.write_report(A.report_document(sheet, audit=audit), out_dir / "audit.json")
    return EXIT_OK


COMMANDS = {"vacuum-regression": cmd_vacuum_regression, "evolve": cmd_evolve,
            "rates": cmd_rates, "audit": cmd_audit}


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nullhorizon", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--stations", help="comma-separated v stations, e.g. 40,80,160,320")
        sp.add_argument("--quiet", action="store_true", help="suppress progress and verdict lines")
    return ap


def _apply_threads() -> None:
    n = os.environ.get("NULLHORIZON_THREADS")
    if n:
        try:
            import numba
            numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
        except (ImportError, ValueError):
            pass


def main(argv: Optional[List[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    _apply_threads()
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DomainError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EvolutionError as exc:
        print(f"evolution error: {exc}", file=sys.stderr)
        return EXIT_EVOLVE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
