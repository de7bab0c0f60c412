"""Optimization of the LME locality field by minimising the reduced equilibrium energy.

The objective is the converged reduced energy ``Pi(gamma)``.  Because the
reduced residual vanishes at equilibrium, its total derivative only involves
the explicit dependence of the interpolation matrix on ``gamma``:

    dPi/dgamma_b = f_int . (dPhi/dgamma_b) q

with atom-level internal forces ``f_int`` and the full reduced vector ``q``
(standard and enriched DOFs).  The enriched part is differentiated through the
Gram-Schmidt step with the exact QR adjoint.  Everything is evaluated in
reverse mode, so one gradient costs about as much as one shape-function pass.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import (AssemblyError, ConditioningError, DegenerateConfigurationError,
                     NonConvergenceError, StaleStateError)

log = logging.getLogger(__name__)

PROVENANCES = ("baseline", "optimized-uniform", "optimized-nonuniform", "pattern")


@dataclass
class GammaField:
    gamma: np.ndarray
    provenance: str = "baseline"
    bounds: tuple[float, float] = (0.3, 4.0)

    def __post_init__(self):
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))
        lo, hi = self.bounds
        if not lo < hi:
            raise ValueError(f"invalid gamma bounds {self.bounds}")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if np.any(self.gamma < lo - 1e-12) or np.any(self.gamma > hi + 1e-12):
            raise ValueError("gamma field leaves its bounds")
        if self.provenance == "pattern" and np.unique(self.gamma).size > 2:
            raise ValueError("a pattern field has at most two distinct values")


def pattern_gamma(psi_rep, h, gamma_if=0.8, gamma_ff=2.0, n_rep=None, bounds=(0.3, 4.0)):
    """Two-level rule: ``gamma_if`` within one repatom spacing of the interface, else ``gamma_ff``."""
    if psi_rep is None:
        return GammaField(np.full(n_rep, gamma_ff), "pattern", bounds)
    psi_rep = np.asarray(psi_rep, dtype=float)
    g = np.where(np.abs(psi_rep) <= h * (1 + 1e-12), gamma_if, gamma_ff)
    return GammaField(g, "pattern", bounds)


@dataclass(eq=False)
class Evaluation:
    gamma: np.ndarray
    energy: float
    state: object
    table: object
    phi: object
    _grad: np.ndarray | None = field(default=None, repr=False)


def energy_of_gamma(problem, gamma, **kw):
    """Converged reduced energy and state for a locality field (per repatom or scalar)."""
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (problem.n_rep,))
    table = problem.lme_table(gamma, kw.pop("mu0", None))
    phi = problem.interpolation(table)
    state = problem.solve(phi, **kw)
    return state.energy, state, table, phi


def _pair_weights(problem, table, phi, state):
    """Per-pair weights ``w`` with ``dPi/dgamma = sum_k w_k dphi_k/dgamma``."""
    f = state.internal_force.reshape(-1, 2)
    U, G = phi.split(state.q)
    p = table.point
    r = table.rep
    w = f[p, 0] * U[r, 0] + f[p, 1] * U[r, 1]
    b = phi.basis
    if b is not None:
        W = f[b.rows] @ G.T
        Abar = b.adjoint(W)
        colmap = np.full(problem.n_rep, -1)
        colmap[problem.enriched[b.order[b.kept]]] = np.arange(b.n_columns)
        rowpos = np.full(phi.n_ato, -1)
        rowpos[b.rows] = np.arange(b.rows.size)
        j = colmap[r]
        a = rowpos[p]
        sel = np.flatnonzero((j >= 0) & (a >= 0))
        chi = problem.chi_atoms
        chi_rep = problem.chi_repatoms()
        shift = chi[p[sel]] - chi_rep[r[sel]]
        w[sel] += Abar[a[sel], j[sel]] * shift
    return w


def energy_gradient_wrt_gamma(problem, table, phi, state):
    """``dPi/dgamma`` per repatom at a converged reduced state."""
    if state.phi is not phi:
        raise StaleStateError("state was not computed with this interpolation matrix")
    if not state.converged:
        raise StaleStateError(f"reduced state is not converged (residual {state.residual_norm:.3e})")
    return table.vjp_gamma(_pair_weights(problem, table, phi, state))


def energy_gradient_wrt_beta(problem, table, phi, state):
    """``dPi/dbeta`` per repatom (``beta = gamma / h^2``)."""
    return energy_gradient_wrt_gamma(problem, table, phi, state) * problem.h**2


class LocalityObjective:
    """Energy and gradient as functions of the locality field, with warm starts.

    The previous evaluation seeds the LME multipliers, the reduced DOFs and
    the reduced Hessian factorization of the next one.
    """

    def __init__(self, problem, warm_start=True):
        self.problem = problem
        self.warm_start = warm_start
        self.last = None
        self.n_evals = 0

    def evaluate(self, gamma):
        gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (self.problem.n_rep,)).copy()
        if self.last is not None and np.array_equal(gamma, self.last.gamma):
            return self.last
        kw = {}
        if self.warm_start and self.last is not None:
            kw["mu0"] = self.last.table.mu
            if self.last.state.q.size:
                kw["q0"] = self.last.state.q
                kw["factor"] = self.last.state.factor
        mu0 = kw.pop("mu0", None)
        table = self.problem.lme_table(gamma, mu0)
        phi = self.problem.interpolation(table)
        if "q0" in kw and kw["q0"].size != phi.n_dof:
            kw.clear()
        try:
            state = self.problem.solve(phi, **kw)
        except (NonConvergenceError, ConditioningError):
            if not kw:
                raise
            # A warm start from a distant trial point can send Newton astray; start afresh.
            log.debug("warm-started solve failed at evaluation %d; retrying cold", self.n_evals + 1)
            state = self.problem.solve(phi)
        self.n_evals += 1
        log.debug("evaluation %d: energy %.12e, %d reduced Newton steps, %d factorizations",
                  self.n_evals, state.energy, state.iterations, state.n_factorizations)
        self.last = Evaluation(gamma, state.energy, state, table, phi)
        return self.last

    def gradient(self, ev):
        if ev._grad is None:
            ev._grad = energy_gradient_wrt_gamma(self.problem, ev.table, ev.phi, ev.state)
        return ev._grad


@dataclass
class OptimizationReport:
    mode: str
    history: list = field(default_factory=list)  # (iter, energy, proj_grad_norm)
    gamma_history: list = field(default_factory=list)
    n_evals: int = 0
    n_failed: int = 0
    converged: bool = False
    hit_max_iter: bool = False
    message: str = ""
    energy: float = float("nan")

    def write_trace_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            wr = csv.writer(fh)
            wr.writerow(["iter", "energy", "proj_grad_norm"])
            for it, e, pg in self.history:
                wr.writerow([it, repr(float(e)), repr(float(pg))])


def projected_gradient(x, g, lo, hi):
    return np.clip(x - g, lo, hi) - x


_SOLVE_ERRORS = (NonConvergenceError, ConditioningError, AssemblyError, DegenerateConfigurationError)


def _run_lbfgsb(obj, x0, bounds, expand, contract, mode, max_iter, pgtol, ftol, maxcor=10):
    lo, hi = bounds
    x0 = np.clip(np.asarray(x0, dtype=float), lo, hi)
    ev0 = obj.evaluate(expand(x0))
    scale = abs(ev0.energy) if ev0.energy != 0 else 1.0
    report = OptimizationReport(mode)
    seen = {}
    best = {"energy": np.inf, "x": x0.copy()}

    def record(x, energy, g):
        pg = float(np.max(np.abs(projected_gradient(x, g, lo, hi)))) if x.size else 0.0
        seen[x.tobytes()] = (energy, pg)
        if energy < best["energy"]:
            best["energy"] = energy
            best["x"] = x.copy()

    def fun(x):
        x = np.clip(x, lo, hi)
        try:
            ev = obj.evaluate(expand(x))
        except _SOLVE_ERRORS as exc:
            # Treated as an infeasible trial point: a large value makes the line search backtrack.
            report.n_failed += 1
            log.warning("objective evaluation failed (%s); backtracking", exc)
            return 10.0 * (1.0 + abs(ev0.energy) / scale), np.zeros_like(x)
        g = contract(obj.gradient(ev))
        record(x, ev.energy, g)
        return ev.energy / scale, g / scale

    f0, g0 = fun(x0)
    e0, pg0 = seen[x0.tobytes()]
    report.history.append((0, e0, pg0))
    report.gamma_history.append(x0.copy())

    def callback(xk):
        e, pg = seen.get(np.clip(xk, lo, hi).tobytes(), (np.nan, np.nan))
        report.history.append((len(report.history), e, pg))
        report.gamma_history.append(np.array(xk, copy=True))

    # Projected gradient tolerance relative to |Pi| (the objective is normalised by it).
    res = minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=[(lo, hi)] * x0.size,
                   callback=callback,
                   options={"maxcor": maxcor, "maxiter": max_iter, "gtol": pgtol,
                            "ftol": ftol, "maxls": 20})
    report.n_evals = obj.n_evals
    report.message = str(res.message)
    report.hit_max_iter = res.nit >= max_iter and not res.success
    report.converged = bool(res.success)
    x = np.clip(res.x, lo, hi)
    if res.fun * scale > best["energy"]:
        x = best["x"]
    report.energy = float(best["energy"])
    # Leave the objective positioned at the returned point for callers reusing the state.
    obj.evaluate(expand(x))
    return x, report


def optimize_uniform(problem, gamma0=1.8, bounds=(0.8, 4.0), max_iter=50, pgtol=1e-6, ftol=1e-12,
                     objective=None):
    """Best single locality value for all repatoms."""
    obj = objective or LocalityObjective(problem)
    n = problem.n_rep
    x, report = _run_lbfgsb(obj, [gamma0], bounds, lambda x: np.full(n, x[0]),
                            lambda g: np.array([g.sum()]), "uniform", max_iter, pgtol, ftol)
    return float(x[0]), report


def optimize_nonuniform(problem, gamma0=1.8, bounds=(0.3, 4.0), max_iter=200, pgtol=1e-6,
                        ftol=1e-12, objective=None):
    """Independent locality value per repatom."""
    obj = objective or LocalityObjective(problem)
    x0 = np.broadcast_to(np.asarray(gamma0, dtype=float), (problem.n_rep,)).copy()
    x, report = _run_lbfgsb(obj, x0, bounds, lambda x: x, lambda g: g, "nonuniform", max_iter,
                            pgtol, ftol)
    return GammaField(x, "optimized-nonuniform", bounds), report


def write_gamma_csv(path, repatoms, gamma, psi_rep=None, header_lines=()):
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (repatoms.n_rep,))
    psi = np.full(repatoms.n_rep, np.nan) if psi_rep is None else np.asarray(psi_rep)
    flag = np.zeros(repatoms.n_rep, dtype=int)
    flag[repatoms.enriched] = 1
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        wr = csv.writer(fh)
        wr.writerow(["repatom_id", "x", "y", "psi", "gamma", "enriched_flag"])
        for i in range(repatoms.n_rep):
            x, y = repatoms.positions[i]
            wr.writerow([i, repr(float(x)), repr(float(y)), repr(float(psi[i])),
                         repr(float(gamma[i])), int(flag[i])])
