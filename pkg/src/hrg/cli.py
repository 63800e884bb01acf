"""Command-line driver: ``hrg <experiment> --config cfg.json [--seed S] [--out DIR]``.

Every experiment writes plain CSV/JSON files plus ``manifest.json``.  Files
other than the manifest depend only on the validated config and the master
seed, so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import logging
import math
import os
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable

import numpy as np
from pydantic import ValidationError

from . import __version__
from .config import EXPERIMENTS, ExperimentConfig, format_validation_error, load_config
from .disorder import SeedSchedule, check_cauchy_domination, sample_potential
from .hamiltonian import ConditioningError, EigensolverError, HamiltonianSystem, diagonalize, green_column
from .hierarchy import DEFAULT_DENSE_CAP, Mode, ResourceError, laplacian_eigensystem, shell_of
from .observables import (
    averaged_ipr,
    block_process_sampler,
    counting_bounds_check,
    dos,
    ec_decay_fit,
    eigenvalue_batch,
    ensemble_records,
    ipr_event_probability,
    ipr_window,
    mean_ipr_in_window,
    poisson_tests,
)
from .renorm import (
    SingularPairError,
    draw_potential,
    estimate_decoupling,
    fm_inequality_check,
    fractional_moment_scan,
    green_recursion,
    phi_statistic,
)
from .rgflow import assumption_verdict, run_flow, write_flow_csv

log = logging.getLogger("hrg")

EXIT_OK, EXIT_CONFIG, EXIT_RESOURCE, EXIT_FAILURE = 0, 2, 3, 4


class RunContext:
    def __init__(self, out: Path, threads: int, dense_cap: int):
        self.out = out
        self.threads = threads
        self.dense_cap = dense_cap
        self.warnings: list[str] = []
        self.files: list[str] = []

    def warn(self, msg: str) -> None:
        log.warning(msg)
        self.warnings.append(msg)

    def write_text(self, name: str, text: str) -> None:
        path = self.out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        self.files.append(name)

    def write_json(self, name: str, data) -> None:
        self.write_text(name, dumps(data))

    def write_csv(self, name: str, rows: list[dict], fields: list[str] | None = None) -> None:
        fields = fields or (list(rows[0].keys()) if rows else [])
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k)) for k in fields})
        self.write_text(name, buf.getvalue())


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def dumps(data) -> str:
    return json.dumps(_clean(data), indent=2, sort_keys=True) + "\n"


def _ordered_map(ctx: RunContext, fn: Callable, items) -> list:
    """Map in parallel; results come back in input order."""
    with ThreadPoolExecutor(max_workers=ctx.threads) as ex:
        return list(ex.map(fn, items))


def _isolated(ctx: RunContext, fn: Callable, schedule: SeedSchedule, count: int) -> list:
    """Run fn(i) per realization; failures are logged with their seed and dropped."""
    def guarded(i):
        try:
            return fn(i)
        except (ConditioningError, SingularPairError, EigensolverError, FloatingPointError) as exc:
            return exc
    results = _ordered_map(ctx, guarded, range(count))
    kept = []
    for i, r in enumerate(results):
        if isinstance(r, Exception):
            ctx.warn(f"realization {i} (seed {schedule.derive(i)}) failed: {r}")
        else:
            kept.append(r)
    if len(kept) < count:
        ctx.warn(f"{count - len(kept)} of {count} realizations excluded")
    return kept


def _check_dense(cfg: ExperimentConfig, ctx: RunContext, size: int) -> None:
    if size > ctx.dense_cap:
        raise ResourceError(f"dense operator of size {size} exceeds cap {ctx.dense_cap}; "
                            f"use a truncated mode with a smaller m or raise --dense-cap")


# ---------------------------------------------------------------------------
# experiments


def exp_spectrum(cfg: ExperimentConfig, ctx: RunContext) -> dict:
    h = cfg.hopping_model()
    mode = cfg.operator_mode()
    block = 2 ** (mode.top(cfg.n) if not mode.tail_corrected else cfg.n)
    _check_dense(cfg, ctx, block)
    pairs = laplacian_eigensystem(h, mode)
    ctx.write_csv("laplacian_spectrum.csv", [{"level": r, "eigenvalue": v, "multiplicity": m}
                                             for r, (v, m) in enumerate(pairs)])
    model = cfg.density_model()
    schedule = SeedSchedule(cfg.master_seed, 0x5C)

    def one(i):
        s = schedule.derive(i)
        sys_ = HamiltonianSystem(h, mode, sample_potential(model, 2**cfg.n, s), cfg.energy, s)
        lam = np.sort(np.concatenate([diagonalize(b, ctx.dense_cap, warn_ties=False).eigenvalues
                                      for b in sys_.blocks()]))
        return i, lam

    rows = []
    for i, lam in _isolated(ctx, one, schedule, cfg.realizations):
        rows.extend({"realization": i, "index": k, "eigenvalue": v} for k, v in enumerate(lam))
    ctx.write_csv("eigenvalues.csv", rows, ["realization", "index", "eigenvalue"])
    lam_all = np.array([r["eigenvalue"] for r in rows])
    return {"laplacian_levels": len(pairs), "eigenvalue_min": float(lam_all.min()),
            "eigenvalue_max": float(lam_all.max()), "count": int(lam_all.size)}


def exp_rgflow(cfg: ExperimentConfig, ctx: RunContext) -> dict:
    model = cfg.density_model()
    h = cfg.hopping_model(max(cfg.n, cfg.r_max))
    c = h.c
    energies = cfg.energies or [cfg.energy]
    dom = check_cauchy_domination(model)
    if not dom.ok:
        ctx.warn(f"density fails the Cauchy domination check (C_hat={dom.c_hat:.4g})")

    def one(args):
        idx, E = args
        return run_flow(model, h, E, cfg.r_max, method=cfg.method, samples=cfg.samples,
                        seed=SeedSchedule(cfg.master_seed, 0xF1).derive(idx), bins=cfg.bins)

    states = _ordered_map(ctx, one, list(enumerate(energies)))
    summary = []
    for idx, (E, st) in enumerate(zip(energies, states)):
        name = "flow.csv" if len(energies) == 1 else f"flow_E{idx:03d}.csv"
        path = ctx.out / name
        write_flow_csv(st, path)
        ctx.files.append(name)
        v = assumption_verdict(st, c)
        summary.append({"energy": E, "rate_hat": v.rate_hat, "delta_hat": v.delta_hat, "holds": v.holds,
                        "stderr": v.stderr, "final_supnorm": st.supnorm_series[-1]})
    ctx.write_csv("verdicts.csv", summary)
    worst = max(summary, key=lambda r: r["rate_hat"])
    result = {"c": c, "method": cfg.method, "r_max": cfg.r_max, "rate_hat": worst["rate_hat"],
              "delta_hat": worst["delta_hat"], "holds": all(r["holds"] for r in summary),
              "worst_energy": worst["energy"], "cauchy_domination": {"c_hat": dom.c_hat, "ok": dom.ok}}
    ctx.write_json("fit.json", result)
    return result


def exp_greens(cfg: ExperimentConfig, ctx: RunContext) -> dict:
    h = cfg.hopping_model()
    mode = cfg.operator_mode()
    _check_dense(cfg, ctx, 2**cfg.n)
    model = cfg.density_model()
    schedule = SeedSchedule(cfg.master_seed, 0x6E)
    ks = cfg.k_list or list(range(2**cfg.n))
    dist = shell_of(cfg.n)

    def one(i):
        v, seed, redraws = draw_potential(model, cfg.n, schedule, i, cfg.energy)
        sys_ = HamiltonianSystem(h, mode, v, cfg.energy, seed)
        dense = green_column(sys_, 0, 0.0, ctx.dense_cap)
        rows = []
        for k in ks:
            rec = green_recursion(sys_, k, dense_cap=ctx.dense_cap)
            err = abs(rec - dense[k]) / abs(dense[k]) if dense[k] != 0 else abs(rec)
            rows.append({"realization": i, "k": k, "distance": int(dist[k]), "recursion": rec,
                         "dense": dense[k], "rel_error": err})
        phi = None
        if mode.tail_corrected or mode.truncate == cfg.n:
            phi = {"realization": i, "phi_fast": phi_statistic(sys_), "phi_direct": phi_statistic(sys_, method="direct")}
        return rows, phi

    results = _isolated(ctx, one, schedule, cfg.realizations)
    rows = [r for res in results for r in res[0]]
    phis = [res[1] for res in results if res[1] is not None]
    ctx.write_csv("green.csv", rows, ["realization", "k", "distance", "recursion", "dense", "rel_error"])
    if phis:
        ctx.write_csv("phi.csv", phis, ["realization", "phi_fast", "phi_direct"])
    worst = max(r["rel_error"] for r in rows)
    out = {"max_rel_error": worst, "realizations": len(results), "entries": len(rows)}
    ctx.write_json("summary.json", out)
    return out


def exp_fracmom(cfg: ExperimentConfig, ctx: RunContext) -> dict:
    _check_dense(cfg, ctx, 2**cfg.n)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        tab = fractional_moment_scan(cfg.density_model(), cfg.hopping_model(), cfg.energy, cfg.s, cfg.n,
                                     cfg.k_list, cfg.realizations, cfg.master_seed, cfg.operator_mode(),
                                     ctx.dense_cap, ctx.threads)
    for w in caught:
        ctx.warn(str(w.message))
    ctx.write_csv("fracmom.csv", tab.rows, ["distance", "s", "mean", "stderr", "count"])
    out = {"s": cfg.s, "slope": tab.slope, "slope_stderr": tab.slope_stderr, "one_plus_mu": tab.one_plus_mu,
           "mu_hat": tab.mu_hat}
    ctx.write_json("fit.json", out)
    return out


def _interval(cfg: ExperimentConfig) -> tuple[float, float]:
    if cfg.interval is not None:
        return tuple(cfg.interval)
    return (cfg.energy - 0.5, cfg.energy + 0.5)


def exp_ec(cfg: ExperimentConfig, ctx: RunContext) -> dict:
    _check_dense(cfg, ctx, 2**cfg.n)
    interval = _interval(cfg)
    recs = ensemble_records(cfg.density_model(), cfg.hopping_model(), interval, cfg.realizations,
                            cfg.master_seed, cfg.operator_mode(), 0.0, 0xEC + cfg.n, ctx.dense_cap, ctx.threads)
    rows = np.array([r.correlator_row(0) for r in recs])
    fit = ec_decay_fit(rows, cfg.n)
    length = interval[1] - interval[0]
    mu_used = fit.mu_hat / 2 if fit.mu_hat > 0 else 0.0
    c_hat = fit.weighted_constant(mu_used, length)
    for d in fit.empty_shells:
        ctx.warn(f"shell {d} has zero mean correlator")
    ctx.write_csv("shells.csv", fit.rows, ["distance", "mean", "stderr", "count"])
    out = {"mu_hat": fit.mu_hat, "stderr": fit.stderr, "ci_low": fit.ci[0], "ci_high": fit.ci[1],
           "mu_for_constant": mu_used, "C_hat": c_hat, "interval": list(interval), "n": cfg.n}
    ctx.write_json("fit.json", out)
    return out


def exp_ipr(cfg: ExperimentConfig, ctx: RunContext) -> dict:
    model = cfg.density_model()
    ns = cfg.n_values or [cfg.n]
    rows = []
    for n in ns:
        _check_dense(cfg, ctx, 2**n)
        h = cfg.hopping_model(n)
        window = ipr_window(cfg.energy, n, cfg.W)
        recs = ensemble_records(model, h, window, cfg.realizations, cfg.master_seed, cfg.operator_mode(), 0.0,
                                0x1B + n, ctx.dense_cap, ctx.threads)
        mean, se, count = mean_ipr_in_window(recs, cfg.q)
        row = {"n": n, "mean_ipr": mean, "stderr": se, "states": count}
        if count:
            avg = averaged_ipr(recs)
            ev = ipr_event_probability(recs, cfg.eps_ipr, avg.c_hat, cfg.W)
            row.update({"averaged_ipr": avg.value, "averaged_ipr_stderr": avg.stderr, "nu_hat": avg.nu_hat,
                        "C_hat": avg.c_hat, "lower_bound": avg.lower_bound, "bound_holds": avg.bound_holds,
                        "event_probability": ev.estimate, "event_ci_low": ev.ci[0], "event_ci_high": ev.ci[1],
                        "event_bound": ev.bound})
        else:
            ctx.warn(f"n={n}: no eigenvalues in the window over the ensemble")
        rows.append(row)
    ctx.write_csv("ipr.csv", rows, ["n", "mean_ipr", "stderr", "states", "averaged_ipr", "averaged_ipr_stderr",
                                    "nu_hat", "C_hat", "lower_bound", "bound_holds", "event_probability",
                                    "event_ci_low", "event_ci_high", "event_bound"])
    decays = ipr_decay_flags(rows)
    out = {"n_values": ns, "monotone_decrease": decays, "q": cfg.q, "W": cfg.W,
           "bounds_hold": all(r.get("bound_holds", True) for r in rows)}
    ctx.write_json("summary.json", out)
    return out


def ipr_decay_flags(rows: list[dict]) -> bool:
    """True when every consecutive mean drops by more than 2 combined stderr."""
    drops = []
    for a, b in zip(rows[:-1], rows[1:]):
        comb = math.hypot(a["stderr"], b["stderr"])
        drops.append(a["mean_ipr"] - b["mean_ipr"] > 2 * comb)
    return bool(drops) and all(drops)


def exp_levelstats(cfg: ExperimentConfig, ctx: RunContext) -> dict:
    m = cfg.n if cfg.m is None else cfg.m
    _check_dense(cfg, ctx, 2**m)
    samples = list(block_process_sampler(cfg.density_model(), cfg.hopping_model(), m, cfg.n, cfg.energy,
                                         tuple(cfg.window), cfg.realizations, cfg.master_seed, ctx.dense_cap,
                                         ctx.threads))
    rep = poisson_tests(samples, sub_window=cfg.sub_window, min_points=int(cfg.threshold("min_points", 1000)))
    ctx.write_csv("gap_histogram.csv", rep.gap_histogram, ["lo", "hi", "count"])
    ctx.write_csv("two_point.csv", rep.two_point_curve, ["size", "p_ge2", "ratio", "windows"])
    ks_max = cfg.threshold("gap_ks_max", 0.05)
    vm_lo, vm_hi = cfg.threshold("var_mean_lo", 0.85), cfg.threshold("var_mean_hi", 1.15)
    out = {k: v for k, v in rep.to_dict().items() if k not in ("gap_histogram", "two_point_curve")}
    out.update({"gap_ks_pass": rep.gap_ks <= ks_max, "var_mean_pass": vm_lo <= rep.var_mean_ratio <= vm_hi,
                "m": m, "n": cfg.n})
    ctx.write_json("report.json", out)
    return out


def exp_counting(cfg: ExperimentConfig, ctx: RunContext) -> dict:
    _check_dense(cfg, ctx, 2**cfg.n)
    model = cfg.density_model()
    lam = eigenvalue_batch(model, cfg.hopping_model(), cfg.operator_mode(), cfg.realizations, cfg.master_seed,
                           dense_cap=ctx.dense_cap)
    sizes = cfg.sizes or list(2.0**-cfg.n * np.logspace(math.log10(0.03), math.log10(0.3), 6))
    rep = counting_bounds_check(lam, cfg.energy, sizes, model.sup_norm())
    ctx.write_csv("counting.csv", rep.rows(), ["size", "p_ge1", "p_ge2"])
    out = {"exponent1": rep.exponent1, "exponent2": rep.exponent2, "ratio_max": rep.ratio_max,
           "trials": rep.trials, "wegner_ok": rep.wegner_ok}
    ctx.write_json("report.json", out)
    return out


def exp_decoupling(cfg: ExperimentConfig, ctx: RunContext) -> dict:
    z = complex(*cfg.z)
    est = estimate_decoupling(cfg.s, z, threads=ctx.threads)
    if est.skipped:
        ctx.warn(f"{est.skipped} gamma points skipped after quadrature failure")
    ctx.write_csv("gamma.csv", [{"re": g.real, "im": g.imag, "ratio": r} for g, r in zip(est.gamma_grid, est.ratios)],
                  ["re", "im", "ratio"])
    out = {"s": cfg.s, "z": [z.real, z.imag], "D_hat": est.D_hat, "argmax": [est.argmax.real, est.argmax.imag],
           "skipped": est.skipped}
    if cfg.realizations >= 2 and cfg.n >= 2:
        rep = fm_inequality_check(z, cfg.s, cfg.n, cfg.k, cfg.realizations, cfg.master_seed,
                                  cfg.hopping_model(), est, ctx.threads)
        out["fm_check"] = dict(rep.__dict__)
    ctx.write_json("report.json", out)
    return out


EXPERIMENT_FUNCS: dict[str, Callable[[ExperimentConfig, RunContext], dict]] = {
    "spectrum": exp_spectrum,
    "rgflow": exp_rgflow,
    "greens": exp_greens,
    "fracmom": exp_fracmom,
    "ec": exp_ec,
    "ipr": exp_ipr,
    "levelstats": exp_levelstats,
    "counting": exp_counting,
    "decoupling": exp_decoupling,
}


def _sweep_point(cfg: ExperimentConfig, value: float) -> ExperimentConfig:
    sw = cfg.sweep
    upd: dict = {"experiment": sw.experiment, "sweep": None}
    if sw.parameter == "energy":
        upd["energy"] = value
        upd["energies"] = None
    elif sw.parameter == "n":
        upd["n"] = int(value)
    elif sw.parameter == "s":
        upd["s"] = value
    elif sw.parameter in ("c", "eps"):
        hop = cfg.hopping.model_dump()
        hop[sw.parameter] = value
        upd["hopping"] = hop
    elif sw.parameter == "sigma":
        dens = cfg.density.model_dump()
        dens["sigma"] = value
        upd["density"] = dens
    return cfg.with_updates(**upd)


def exp_sweep(cfg: ExperimentConfig, ctx: RunContext) -> dict:
    sw = cfg.sweep
    summary = []
    for idx, value in enumerate(sw.values):
        sub = f"point_{idx:03d}"
        point_dir = ctx.out / sub
        point_dir.mkdir(parents=True, exist_ok=True)
        row = {"index": idx, sw.parameter: value}
        try:
            point_cfg = _sweep_point(cfg, value)
            sub_ctx = RunContext(point_dir, ctx.threads, ctx.dense_cap)
            result = EXPERIMENT_FUNCS[sw.experiment](point_cfg, sub_ctx)
            sub_ctx.write_json("config.json", point_cfg.model_dump(mode="json"))
            row.update({k: v for k, v in result.items() if isinstance(v, (int, float, bool, np.floating, np.integer))})
            row["status"] = "ok"
            ctx.warnings.extend(f"{sub}: {w}" for w in sub_ctx.warnings)
            ctx.files.extend(f"{sub}/{f}" for f in sub_ctx.files)
        except (ValidationError, ResourceError, ArithmeticError, RuntimeError, ValueError) as exc:
            ctx.warn(f"{sub} ({sw.parameter}={value}) failed: {exc}")
            row["status"] = "failed"
        summary.append(row)
    fields = []
    for r in summary:
        fields.extend(k for k in r if k not in fields)
    ctx.write_csv("summary.csv", summary, fields)
    return {"points": len(summary), "failed": sum(r["status"] != "ok" for r in summary)}


EXPERIMENT_FUNCS["sweep"] = exp_sweep


# ---------------------------------------------------------------------------
# entry point


def resolve_threads(flag: int | None) -> int:
    if flag:
        return max(1, flag)
    env = os.environ.get("HRG_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring non-integer HRG_THREADS=%r", env)
    return os.cpu_count() or 1


def run(cfg: ExperimentConfig, out: Path, threads: int = 1, dense_cap: int = DEFAULT_DENSE_CAP) -> dict:
    """Execute one experiment and write its files plus the manifest; returns the manifest."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(out, threads, dense_cap)
    started = _dt.datetime.now(_dt.timezone.utc)
    t0 = time.perf_counter()
    ctx.write_json("config.json", cfg.model_dump(mode="json"))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = EXPERIMENT_FUNCS[cfg.experiment](cfg, ctx)
    for w in caught:
        if issubclass(w.category, (RuntimeWarning, UserWarning)):
            ctx.warnings.append(str(w.message))
    ctx.write_json("result.json", {"experiment": cfg.experiment, "config_digest": cfg.digest(), "result": result})
    manifest = {
        "config_digest": cfg.digest(),
        "master_seed": cfg.master_seed,
        "version": __version__,
        "started_at": started.isoformat(),
        "duration_s": time.perf_counter() - t0,
        "warnings": ctx.warnings,
        "experiment": cfg.experiment,
        "seed_schedule": "seed(stream, i) = splitmix64(splitmix64(splitmix64(master) ^ stream) ^ i)",
        "threads": threads,
        "dense_cap": dense_cap,
        "files": sorted(set(ctx.files)),
    }
    (out / "manifest.json").write_text(dumps(manifest))
    return manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hrg", description="Hierarchical Anderson model experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*EXPERIMENTS, "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override master_seed (unsigned 64-bit)")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: HRG_THREADS or all cores)")
        p.add_argument("--dense-cap", type=int, default=DEFAULT_DENSE_CAP, help="largest dense matrix dimension")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        data = json.loads(args.config.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read config {args.config}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not isinstance(data, dict):
        print("invalid config: top level must be a JSON object", file=sys.stderr)
        return EXIT_CONFIG
    data.setdefault("experiment", args.command)
    if data["experiment"] != args.command:
        print(f"config experiment '{data['experiment']}' does not match subcommand '{args.command}'", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        data["master_seed"] = args.seed
    try:
        cfg = load_config(data)
    except ValidationError as exc:
        print(format_validation_error(exc), file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or Path(cfg.output or f"hrg_{cfg.experiment}_{cfg.digest()[:12]}")
    try:
        manifest = run(cfg, out, resolve_threads(args.threads), args.dense_cap)
    except ResourceError as exc:
        print(f"resource limit: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"experiment failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    print(f"{cfg.experiment}: wrote {len(manifest['files'])} files to {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
