"""Benchmark problems, scheme sweeps and binned locality statistics."""
from __future__ import annotations

import csv
import logging
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import XqcError
from .geometry import Circle, Segment, Square, check_inside_domain
from .lattice import MaterialRule, benchmark_bcs, build_lattice, solve_full
from .lme import RepatomGrid
from .locality import (LocalityObjective, optimize_nonuniform, optimize_uniform, pattern_gamma,
                       write_gamma_csv)
from .qc import QcProblem, default_reduced_tol, reconstruct_and_measure

log = logging.getLogger(__name__)

SCHEMES = ("lme-baseline-H", "lme-uniform-H", "lme-nonuniform-H", "lme-nonuniform-noH",
           "lme-pattern-H", "linear-H")
BASELINE_GAMMA = 1.8
DOMAIN_HALF_EXTENT = 128.0
LATTICE_SPACING = 1.0
DEFAULT_U_D = 0.01 * 2 * DOMAIN_HALF_EXTENT


@dataclass(frozen=True)
class BenchmarkSpec:
    name: str
    geometry: object
    stiffness_contrast: float
    enrichment_radius: float
    gamma_bounds: tuple[float, float]
    spacings: tuple[int, ...] = (32, 16, 8, 4)
    schemes: tuple[str, ...] = ("linear-H", "lme-baseline-H", "lme-pattern-H")
    uniform_bounds: tuple[float, float] = (0.8, 4.0)
    noh_bounds: tuple[float, float] | None = None
    enrichment_kind: str | None = None
    half_extent: float = DOMAIN_HALF_EXTENT
    lattice_spacing: float = LATTICE_SPACING
    u_d: float = DEFAULT_U_D

    def __post_init__(self):
        if not self.stiffness_contrast > 0:
            raise ValueError("stiffness contrast must be positive")
        edge = 2 * self.half_extent
        for h in self.spacings:
            ratio = edge / h
            if h <= 0 or abs(ratio - round(ratio)) > 1e-9:
                raise ValueError(f"repatom spacing {h} must divide the domain edge {edge:g}")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ValueError(f"unknown scheme {s!r}")
        check_inside_domain(self.geometry, self.half_extent)

    def bounds_for(self, scheme):
        if scheme == "lme-uniform-H":
            return self.uniform_bounds
        if scheme == "lme-nonuniform-noH" and self.noh_bounds is not None:
            return self.noh_bounds
        return self.gamma_bounds


def _fiber_geometry(center=(-17.0, 0.0), length=80.0):
    c = np.asarray(center)
    t = np.array([1.0, 1.0]) / np.sqrt(2.0)
    a = c - 0.5 * length * t
    b = c + 0.5 * length * t
    return Segment((float(a[0]), float(a[1])), (float(b[0]), float(b[1])))


EXAMPLES = {
    "circle": BenchmarkSpec("circle", Circle((-17.0, 0.0), 40.0), 10.0, 2.5, (0.8, 4.0),
                            noh_bounds=(0.3, 4.0)),
    "square": BenchmarkSpec("square", Square((0.0, 0.0), 30.0), 10.0, 2.5, (0.3, 4.0)),
    "square-modified": BenchmarkSpec("square-modified", Square((0.0, 0.0), 64.0), 10.0, 2.5,
                                     (1.0, 4.0), spacings=(8,), schemes=("lme-nonuniform-noH",),
                                     noh_bounds=(1.0, 4.0)),
    "fiber": BenchmarkSpec("fiber", _fiber_geometry(), 100.0, 0.7, (0.8, 4.0)),
}


def get_example(name, **overrides):
    try:
        spec = EXAMPLES[name]
    except KeyError:
        raise ValueError(f"unknown example {name!r}; choose from {sorted(EXAMPLES)}") from None
    return replace(spec, **overrides) if overrides else spec


# ---------------------------------------------------------------------------
# Reference solution and problem construction.

@dataclass(eq=False)
class Reference:
    model: object
    bcs: object
    state: object


_REFERENCE_CACHE: dict = {}


def _reference_key(spec):
    return (repr(spec.geometry), spec.stiffness_contrast, spec.half_extent, spec.lattice_spacing,
            spec.u_d)


def build_model(spec):
    rule = MaterialRule(geometry=spec.geometry, contrast=spec.stiffness_contrast)
    return build_lattice(spec.half_extent, spec.lattice_spacing, rule)


def reference_solution(spec, cache=True):
    """Full-lattice equilibrium for an example, computed once per process."""
    key = _reference_key(spec)
    if cache and key in _REFERENCE_CACHE:
        return _REFERENCE_CACHE[key]
    model = build_model(spec)
    bcs = benchmark_bcs(model, spec.u_d)
    state = solve_full(model, bcs)
    ref = Reference(model, bcs, state)
    if cache:
        _REFERENCE_CACHE[key] = ref
    return ref


def make_problem(spec, ref, scheme, h, reduced_rel_tol=1e-10, lme_tol=1e-10):
    grid = RepatomGrid.regular(ref.model, h)
    enrich = scheme.endswith("-H")
    return QcProblem(ref.model, ref.bcs, grid, geometry=spec.geometry,
                     enrichment_radius=spec.enrichment_radius, enrich=enrich,
                     enrichment_kind=spec.enrichment_kind,
                     scheme="linear" if scheme == "linear-H" else "lme", lme_tol=lme_tol,
                     tol=default_reduced_tol(ref.model, h, reduced_rel_tol))


# ---------------------------------------------------------------------------
# Sweeps.

@dataclass(eq=False)
class SweepRecord:
    example: str
    scheme: str
    h: float
    n_dof: int = 0
    n_rep: int = 0
    n_enriched: int = 0
    eps_u: float = float("nan")
    energy: float = float("nan")
    wall_s: float = float("nan")
    gamma: np.ndarray | None = None
    psi_rep: np.ndarray | None = None
    per_atom_errors: np.ndarray | None = None
    repatoms: object = field(default=None, repr=False)
    report: object = field(default=None, repr=False)
    status: str = "ok"
    error: str = ""


def run_scheme(spec, ref, scheme, h, *, bounds=None, gamma0=BASELINE_GAMMA, gamma_if=0.8,
               gamma_ff=2.0, max_iter_uniform=50, max_iter_nonuniform=200, reduced_rel_tol=1e-10,
               lme_tol=1e-10):
    """Solve one (scheme, h) cell and compare it with the reference."""
    t0 = time.perf_counter()
    problem = make_problem(spec, ref, scheme, h, reduced_rel_tol, lme_tol)
    rec = SweepRecord(spec.name, scheme, float(h), repatoms=problem.repatoms,
                      psi_rep=problem.psi_rep)
    bounds = spec.bounds_for(scheme) if bounds is None else tuple(bounds)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if scheme == "linear-H":
            phi = problem.interpolation()
            state = problem.solve(phi)
            gamma = None
        else:
            obj = LocalityObjective(problem)
            if scheme == "lme-baseline-H":
                gamma = np.full(problem.n_rep, gamma0)
            elif scheme == "lme-pattern-H":
                gamma = pattern_gamma(problem.psi_rep, h, gamma_if, gamma_ff,
                                      n_rep=problem.n_rep).gamma
            elif scheme == "lme-uniform-H":
                g, rec.report = optimize_uniform(problem, gamma0, bounds,
                                                 max_iter=max_iter_uniform, objective=obj)
                gamma = np.full(problem.n_rep, g)
            else:
                fld, rec.report = optimize_nonuniform(problem, gamma0, bounds,
                                                      max_iter=max_iter_nonuniform, objective=obj)
                gamma = fld.gamma
            ev = obj.evaluate(gamma)
            phi, state = ev.phi, ev.state
    err = reconstruct_and_measure(state, ref.state, ref.model.positions0, h)
    rec.n_dof = phi.n_dof
    rec.n_rep = phi.n_rep
    rec.n_enriched = phi.n_enriched
    rec.eps_u = err.eps_u
    rec.energy = state.energy
    rec.per_atom_errors = err.eps_u_alpha
    rec.gamma = gamma
    rec.wall_s = time.perf_counter() - t0
    return rec


def run_benchmark(spec, workers=1, cache=True, **kw):
    """Run every (scheme, h) cell of a spec; failures are recorded per cell."""
    ref = reference_solution(spec, cache)
    cells = [(s, h) for s in spec.schemes for h in spec.spacings]

    def one(cell):
        scheme, h = cell
        try:
            return run_scheme(spec, ref, scheme, h, **kw)
        except (XqcError, ValueError, np.linalg.LinAlgError) as exc:
            log.error("%s %s h=%s failed: %s", spec.name, scheme, h, exc)
            return SweepRecord(spec.name, scheme, float(h), status="failed",
                               error=f"{type(exc).__name__}: {exc}")

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, cells))
    return [one(c) for c in cells]


# ---------------------------------------------------------------------------
# Binned statistics.

@dataclass
class BinnedGammaStats:
    edges: np.ndarray
    bin_index: np.ndarray
    count: np.ndarray
    q1: np.ndarray
    median: np.ndarray
    q3: np.ndarray

    @property
    def centers(self):
        return 0.5 * (self.edges[self.bin_index] + self.edges[self.bin_index + 1])

    def bin_of(self, value):
        """Row of the nonempty bin containing ``value``, or the nearest nonempty bin."""
        k = int(np.clip(np.searchsorted(self.edges, value, side="right") - 1, 0,
                        self.edges.size - 2))
        rows = np.flatnonzero(self.bin_index == k)
        if rows.size:
            return int(rows[0])
        return int(np.argmin(np.abs(self.centers - value)))

    def write_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            wr = csv.writer(fh)
            wr.writerow(["bin", "psi_lo", "psi_hi", "count", "q1", "median", "q3"])
            for i, k in enumerate(self.bin_index):
                wr.writerow([int(k), repr(float(self.edges[k])), repr(float(self.edges[k + 1])),
                             int(self.count[i]), repr(float(self.q1[i])),
                             repr(float(self.median[i])), repr(float(self.q3[i]))])


def binned_gamma_stats(gamma, psi, n_bins=54):
    """Equal-width bins over the observed signed-distance range with quartiles of gamma."""
    if n_bins < 1:
        raise ValueError("n_bins must be at least 1")
    gamma = np.asarray(gamma, dtype=float)
    psi = np.asarray(psi, dtype=float)
    lo, hi = float(psi.min()), float(psi.max())
    if hi == lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, n_bins + 1)
    idx = np.clip(np.searchsorted(edges, psi, side="right") - 1, 0, n_bins - 1)
    rows = []
    for k in range(n_bins):
        g = gamma[idx == k]
        if g.size:
            q1, med, q3 = np.quantile(g, [0.25, 0.5, 0.75], method="linear")
            rows.append((k, g.size, q1, med, q3))
    arr = np.array(rows, dtype=float).reshape(-1, 5)
    return BinnedGammaStats(edges, arr[:, 0].astype(int), arr[:, 1].astype(int), arr[:, 2],
                            arr[:, 3], arr[:, 4])


def interface_profile(stats, h):
    """Medians at the interface bin, the bins one spacing to either side, and their rows."""
    i0 = stats.bin_of(0.0)
    im = stats.bin_of(-h)
    ip = stats.bin_of(h)
    return {"interface": float(stats.median[i0]), "inside": float(stats.median[im]),
            "outside": float(stats.median[ip])}


# ---------------------------------------------------------------------------
# Output.

SUMMARY_COLUMNS = ["example", "scheme", "h", "n_dof", "eps_u", "wall_s"]


def _fmt(x):
    return "" if x is None or (isinstance(x, float) and np.isnan(x)) else repr(float(x))


def write_sweep(records, outdir, header_lines=(), record_timing=False, n_bins=54):
    """Write ``sweep_summary.csv`` and the per-cell gamma, error and binned files."""
    os.makedirs(outdir, exist_ok=True)
    path = os.path.join(outdir, "sweep_summary.csv")
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        wr = csv.writer(fh)
        wr.writerow(SUMMARY_COLUMNS)
        for r in records:
            wr.writerow([r.example, r.scheme, f"{r.h:g}", r.n_dof if r.status == "ok" else "",
                         _fmt(r.eps_u), _fmt(r.wall_s) if record_timing else ""])
    for r in records:
        if r.status != "ok":
            continue
        tag = f"{r.example}_{r.scheme}_{r.h:g}"
        with open(os.path.join(outdir, f"errfield_{tag}.csv"), "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            wr = csv.writer(fh)
            wr.writerow(["atom_id", "eps_u_alpha"])
            for i, e in enumerate(r.per_atom_errors):
                wr.writerow([i, repr(float(e))])
        if r.gamma is not None:
            write_gamma_csv(os.path.join(outdir, f"gamma_{tag}.csv"), r.repatoms, r.gamma,
                            r.psi_rep, header_lines)
            if r.psi_rep is not None:
                binned_gamma_stats(r.gamma, r.psi_rep, n_bins).write_csv(
                    os.path.join(outdir, f"binned_{tag}.csv"), header_lines)
    return path


def read_summary(path):
    with open(path, newline="") as fh:
        rows = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(rows))


def dof_table(h_values=(32, 16, 8, 4, 2), example="circle"):
    """Standard and enriched DOF counts per spacing without solving anything."""
    spec = get_example(example)
    model = build_model(spec)
    from .enrichment import heaviside_values, select_enriched_repatoms
    from .linear import cut_element_nodes
    fld = heaviside_values(spec.geometry, model.coords0, spec.enrichment_kind)
    out = []
    for h in h_values:
        grid = RepatomGrid.regular(model, h)
        psi = spec.geometry.signed_distance(grid.positions)
        n_lme = select_enriched_repatoms(psi, spec.enrichment_radius, h).size
        n_lin = cut_element_nodes(model.coords0, grid, fld.chi).size
        out.append({"h": h, "standard": 2 * grid.n_rep, "lme_enriched": 2 * n_lme,
                    "linear_enriched": 2 * n_lin})
    return out


__all__ = ["BenchmarkSpec", "EXAMPLES", "SweepRecord", "BinnedGammaStats", "binned_gamma_stats",
           "get_example", "reference_solution", "run_benchmark", "run_scheme", "write_sweep",
           "interface_profile", "dof_table"]
