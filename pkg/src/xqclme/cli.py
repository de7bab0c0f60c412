"""Command-line interface.

Exit codes: 0 success, 1 nonconvergence or other numerical failure, 2 invalid
configuration.  Failures print one machine-readable line on stderr::

    error: code=2 kind=ConfigError message=...
"""
from __future__ import annotations

import argparse
import csv
import glob
import logging
import os
import sys
import warnings

import numpy as np

from . import __version__
from .bench import (get_example, reference_solution, run_benchmark, run_scheme, write_sweep,
                    binned_gamma_stats, read_summary)
from .config import RunConfig
from .errors import ConfigError, InvalidGeometryError, XqcError
from .locality import write_gamma_csv

log = logging.getLogger("xqclme")


def _header(cfg, command):
    return [f"xqclme {__version__}", f"command {command}", f"config_sha256 {cfg.digest()}"]


def _outdir(cfg):
    os.makedirs(cfg.output, exist_ok=True)
    with open(os.path.join(cfg.output, "config.ini"), "w") as fh:
        fh.write(cfg.to_ini())
    return cfg.output


def _spec(cfg, **kw):
    return get_example(cfg.example, u_d=cfg.u_d, **kw)


def _fmt(x):
    return repr(float(x))


def cmd_solve_full(cfg, args):
    spec = _spec(cfg)
    ref = reference_solution(spec)
    out = _outdir(cfg)
    hdr = _header(cfg, "solve-full")
    st = ref.state
    X = ref.model.coords0
    u = (st.positions - ref.model.positions0).reshape(-1, 2)
    with open(os.path.join(out, f"full_{cfg.example}.csv"), "w", newline="") as fh:
        for line in hdr:
            fh.write(f"# {line}\n")
        wr = csv.writer(fh)
        wr.writerow(["atom_id", "x0", "y0", "ux", "uy"])
        for i in range(X.shape[0]):
            wr.writerow([i, _fmt(X[i, 0]), _fmt(X[i, 1]), _fmt(u[i, 0]), _fmt(u[i, 1])])
    with open(os.path.join(out, f"full_{cfg.example}_meta.txt"), "w") as fh:
        for line in hdr:
            fh.write(f"# {line}\n")
        fh.write(f"example = {cfg.example}\n")
        fh.write(f"n_ato = {ref.model.n_ato}\n")
        fh.write(f"n_dof = {ref.model.n_dof}\n")
        fh.write(f"n_int = {ref.model.n_int}\n")
        fh.write(f"energy = {_fmt(st.energy)}\n")
        fh.write(f"residual_norm = {_fmt(st.residual_norm)}\n")
        fh.write(f"iterations = {st.iterations}\n")
    print(f"solve-full {cfg.example}: energy {st.energy:.10g}, residual {st.residual_norm:.3e}, "
          f"{st.iterations} Newton iterations")
    return 0


def _scheme_kwargs(cfg):
    lo = cfg.gamma_min
    return {"gamma0": cfg.gamma0, "gamma_if": cfg.gamma_if, "gamma_ff": cfg.gamma_ff,
            "max_iter_uniform": cfg.max_iter, "max_iter_nonuniform": cfg.max_iter,
            "reduced_rel_tol": cfg.reduced_rel_tol, "lme_tol": cfg.lme_tol,
            "bounds": None if lo != lo else (lo, cfg.gamma_max)}


def _write_cell(cfg, rec, hdr, prefix):
    out = cfg.output
    tag = f"{rec.example}_{rec.scheme}_{rec.h:g}"
    with open(os.path.join(out, f"{prefix}_{tag}.csv"), "w", newline="") as fh:
        for line in hdr:
            fh.write(f"# {line}\n")
        wr = csv.writer(fh)
        wr.writerow(["h", "n_dof", "eps_u"])
        wr.writerow([f"{rec.h:g}", rec.n_dof, _fmt(rec.eps_u)])
    with open(os.path.join(out, f"errfield_{tag}.csv"), "w", newline="") as fh:
        for line in hdr:
            fh.write(f"# {line}\n")
        wr = csv.writer(fh)
        wr.writerow(["atom_id", "eps_u_alpha"])
        for i, e in enumerate(rec.per_atom_errors):
            wr.writerow([i, _fmt(e)])
    if rec.gamma is not None:
        write_gamma_csv(os.path.join(out, f"gamma_{tag}.csv"), rec.repatoms, rec.gamma,
                        rec.psi_rep, hdr)
        if rec.psi_rep is not None:
            binned_gamma_stats(rec.gamma, rec.psi_rep, cfg.n_bins).write_csv(
                os.path.join(out, f"binned_{tag}.csv"), hdr)
    if rec.report is not None:
        rec.report.write_trace_csv(os.path.join(out, f"trace_{tag}.csv"), hdr)
    return tag


def cmd_solve_qc(cfg, args):
    spec = _spec(cfg)
    ref = reference_solution(spec)
    _outdir(cfg)
    rec = run_scheme(spec, ref, cfg.scheme, cfg.h, **_scheme_kwargs(cfg))
    _write_cell(cfg, rec, _header(cfg, "solve-qc"), "qc_summary")
    print("h,n_dof,eps_u")
    print(f"{rec.h:g},{rec.n_dof},{rec.eps_u!r}")
    return 0


def cmd_optimize_gamma(cfg, args):
    mode = args.mode or cfg.gamma_mode
    scheme = {"uniform": "lme-uniform-H", "nonuniform": "lme-nonuniform-H",
              "pattern": "lme-pattern-H", "baseline": "lme-baseline-H"}[mode]
    if not cfg.enrich:
        if mode != "nonuniform":
            raise ConfigError("enrich = false is only available for the nonuniform mode")
        scheme = "lme-nonuniform-noH"
    spec = _spec(cfg)
    if spec.name == "square-modified" and scheme != "lme-nonuniform-noH":
        raise ConfigError("the modified square example is defined without enrichment; "
                          "use --mode nonuniform --no-enrich")
    ref = reference_solution(spec)
    _outdir(cfg)
    rec = run_scheme(spec, ref, scheme, cfg.h, **_scheme_kwargs(cfg))
    _write_cell(cfg, rec, _header(cfg, "optimize-gamma"), "qc_summary")
    if mode == "uniform":
        print(f"gamma_star = {rec.gamma[0]:.6f}")
    else:
        g = rec.gamma
        print(f"gamma field: min {g.min():.4f} median {np.median(g):.4f} max {g.max():.4f}")
    if rec.report is not None:
        print(f"optimizer: {rec.report.message} ({len(rec.report.history) - 1} iterations, "
              f"{rec.report.n_evals} evaluations)")
    print(f"energy = {rec.energy!r}, eps_u = {rec.eps_u!r}")
    return 0


def cmd_bench(cfg, args):
    spacings = tuple(int(h) if float(h).is_integer() else h for h in cfg.spacing_list)
    spec = _spec(cfg, schemes=tuple(cfg.scheme_list), spacings=spacings)
    kw = _scheme_kwargs(cfg)
    records = run_benchmark(spec, workers=cfg.workers, **kw)
    out = _outdir(cfg)
    path = write_sweep(records, out, _header(cfg, "bench"), cfg.record_timing, cfg.n_bins)
    for r in records:
        if r.report is not None:
            r.report.write_trace_csv(
                os.path.join(out, f"trace_{r.example}_{r.scheme}_{r.h:g}.csv"),
                _header(cfg, "bench"))
    failed = [r for r in records if r.status != "ok"]
    for r in failed:
        print(f"failed: {r.example} {r.scheme} h={r.h:g}: {r.error}", file=sys.stderr)
    print(f"wrote {path} ({len(records)} cells, {len(failed)} failed)")
    return 1 if failed else 0


def _pivot(rows, value):
    schemes = sorted({(r["example"], r["scheme"]) for r in rows})
    hs = sorted({float(r["h"]) for r in rows}, reverse=True)
    table = [["example", "scheme"] + [f"{h:g}" for h in hs]]
    for ex, sc in schemes:
        line = [ex, sc]
        for h in hs:
            vals = [r[value] for r in rows
                    if r["example"] == ex and r["scheme"] == sc and float(r["h"]) == h]
            line.append(vals[0] if vals and vals[0] != "" else "--")
        table.append(line)
    return table


def cmd_report(cfg, args):
    paths = []
    for p in args.inputs or [cfg.output]:
        paths += sorted(glob.glob(os.path.join(p, "sweep_summary.csv"))) if os.path.isdir(p) else [p]
    missing = [p for p in paths if not os.path.isfile(p)]
    if missing:
        raise ConfigError(f"sweep summary not found: {missing[0]}")
    if not paths:
        raise ConfigError("no sweep_summary.csv found in the given inputs")
    rows = []
    for p in paths:
        rows += read_summary(p)
    gammas = []
    for p in paths:
        d = os.path.dirname(p)
        for g in sorted(glob.glob(os.path.join(d, "gamma_*_lme-uniform-H_*.csv"))):
            with open(g) as fh:
                body = [line for line in fh if not line.startswith("#")]
            vals = list(csv.DictReader(body))
            if vals:
                ex, _, h = os.path.basename(g)[len("gamma_"):-len(".csv")].split("_")
                gammas.append({"example": ex, "scheme": "lme-uniform-H", "h": h,
                               "gamma": vals[0]["gamma"]})
    os.makedirs(cfg.output, exist_ok=True)
    outputs = {"table_dofs.csv": _pivot(rows, "n_dof"), "table_eps_u.csv": _pivot(rows, "eps_u")}
    if gammas:
        outputs["table_uniform_gamma.csv"] = _pivot(gammas, "gamma")
    for name, table in outputs.items():
        with open(os.path.join(cfg.output, name), "w", newline="") as fh:
            for line in _header(cfg, "report"):
                fh.write(f"# {line}\n")
            csv.writer(fh).writerows(table)
        print(f"== {name}")
        for line in table:
            print("  ".join(str(c) for c in line))
    return 0


COMMANDS = {
    "solve-full": cmd_solve_full,
    "solve-qc": cmd_solve_qc,
    "optimize-gamma": cmd_optimize_gamma,
    "bench": cmd_bench,
    "report": cmd_report,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--example", help="circle | square | square-modified | fiber")
    common.add_argument("--scheme", help="interpolation scheme for solve-qc")
    common.add_argument("--h", type=float, help="repatom spacing in mm (must divide 256)")
    common.add_argument("--output", "-o", help="output directory")
    common.add_argument("--gamma0", type=float)
    common.add_argument("--gamma-min", type=float, dest="gamma_min")
    common.add_argument("--gamma-max", type=float, dest="gamma_max")
    common.add_argument("--gamma-if", type=float, dest="gamma_if")
    common.add_argument("--gamma-ff", type=float, dest="gamma_ff")
    common.add_argument("--max-iter", type=int, dest="max_iter")
    common.add_argument("--no-enrich", action="store_false", dest="enrich", default=None)
    common.add_argument("--u-d", type=float, dest="u_d", help="prescribed displacement in mm")
    common.add_argument("--reduced-rel-tol", type=float, dest="reduced_rel_tol")
    common.add_argument("--lme-tol", type=float, dest="lme_tol")
    common.add_argument("--schemes", help="comma-separated schemes for bench")
    common.add_argument("--spacings", help="comma-separated repatom spacings for bench")
    common.add_argument("--n-bins", type=int, dest="n_bins")
    common.add_argument("--workers", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--record-timing", action="store_true", dest="record_timing",
                        default=None, help="fill the wall_s column (makes outputs run-dependent)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="xqclme", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"xqclme {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "optimize-gamma":
            sp.add_argument("--mode", choices=["baseline", "uniform", "nonuniform", "pattern"])
        if name == "report":
            sp.add_argument("inputs", nargs="*", help="sweep directories or sweep_summary.csv files")
    return p


_OVERRIDES = ("example", "scheme", "h", "output", "gamma0", "gamma_min", "gamma_max", "gamma_if",
              "gamma_ff", "max_iter", "enrich", "u_d", "reduced_rel_tol", "lme_tol", "schemes",
              "spacings", "n_bins", "workers", "seed", "record_timing")


def load_config(args):
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    cfg = cfg.with_overrides(**{k: getattr(args, k, None) for k in _OVERRIDES})
    if getattr(args, "mode", None):
        cfg = cfg.with_overrides(gamma_mode=args.mode)
    return cfg.validate()


def _fail(code, exc):
    msg = " ".join(str(exc).split())
    print(f"error: code={code} kind={type(exc).__name__} message={msg}", file=sys.stderr)
    return code


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.verbose == 0:
        warnings.simplefilter("ignore", RuntimeWarning)
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, InvalidGeometryError) as exc:
        return _fail(2, exc)
    except XqcError as exc:
        return _fail(1, exc)


if __name__ == "__main__":
    sys.exit(main())
