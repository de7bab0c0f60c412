"""Quasicontinuum reduction: interpolation matrix, reduced equilibrium and error metrics.

Atom displacements are interpolated as ``u = Phi_s U + Psi G`` where ``Phi_s``
holds scalar standard shape functions (atoms x repatoms), ``Psi`` the
orthonormal enriched columns, ``U`` the repatom displacements and ``G`` the
enriched DOFs.  Both components share the scalar functions, which is the
checkerboard structure ``Phi = [kron(Phi_s, I2), kron(Psi, I2)]`` of the
interleaved layout (x/y alternating, repatoms first, enriched DOFs last).
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .enrichment import (EnrichedBasis, build_enriched_columns, gram_schmidt_orthonormalize,
                         heaviside_values, select_enriched_repatoms)
from .errors import (AssemblyError, ConditioningError, NonConvergenceError, UndefinedMetricError)
from .lattice import assemble, default_force_tol
from .linear import cut_element_nodes, hat_matrix
from .lme import RepatomGrid, evaluate

log = logging.getLogger(__name__)

CONDITION_LIMIT = 1e14


@dataclass(eq=False)
class InterpolationMatrix:
    """Standard scalar shape matrix plus an optional enriched basis."""

    standard: sp.csr_matrix
    basis: EnrichedBasis | None = None

    def __post_init__(self):
        self.standard = sp.csr_matrix(self.standard)
        if self.basis is not None and self.basis.n_columns == 0:
            self.basis = None

    @property
    def n_ato(self):
        return self.standard.shape[0]

    @property
    def n_rep(self):
        return self.standard.shape[1]

    @property
    def n_enriched(self):
        return 0 if self.basis is None else self.basis.n_columns

    @property
    def n_dof(self):
        return 2 * (self.n_rep + self.n_enriched)

    @property
    def matrix(self):
        """Full interleaved interpolation matrix (2 n_ato x n_dof)."""
        I2 = sp.identity(2, format="csr")
        blocks = [sp.kron(self.standard, I2)]
        if self.basis is not None:
            blocks.append(sp.kron(self.basis.to_sparse(), I2))
        return sp.hstack(blocks).tocsr()

    def split(self, q):
        q = np.asarray(q, dtype=float)
        nr = 2 * self.n_rep
        return q[:nr].reshape(-1, 2), q[nr:].reshape(-1, 2)

    def apply(self, q):
        """Atom displacements (flat, interleaved) for reduced DOFs ``q``."""
        U, G = self.split(q)
        u = self.standard @ U
        if self.basis is not None:
            u[self.basis.rows] += self.basis.Q @ G
        return u.ravel()

    def rmatvec(self, f):
        """``Phi^T f`` for an interleaved atom vector ``f``."""
        F = np.asarray(f, dtype=float).reshape(-1, 2)
        out = [(self.standard.T @ F).ravel()]
        if self.basis is not None:
            out.append((self.basis.Q.T @ F[self.basis.rows]).ravel())
        return np.concatenate(out)

    def reduce_hessian(self, K):
        """Reduced Hessian ``Phi^T K Phi`` (interleaved layout) as CSR."""
        n = self.n_ato
        comp = np.r_[np.arange(0, 2 * n, 2), np.arange(1, 2 * n, 2)]
        Kc = sp.csr_matrix(K)[comp][:, comp]
        Pc = sp.block_diag([self.standard, self.standard], format="csr")
        nr = self.n_rep
        S = (Pc.T @ (Kc @ Pc)).tocsr()
        perm_s = np.r_[np.arange(0, 2 * nr, 2), np.arange(1, 2 * nr, 2)]  # comp index -> interleaved
        if self.basis is None:
            return _permute(S, perm_s)
        b = self.basis
        k = b.n_columns
        bandc = np.r_[b.rows, b.rows + n]
        Psic = np.zeros((2 * b.rows.size, 2 * k))
        Psic[:b.rows.size, :k] = b.Q
        Psic[b.rows.size:, k:] = b.Q
        Kb = Kc[:, bandc].tocsr()
        touched = np.flatnonzero(np.diff(Kb.indptr))  # rows coupled to the band
        E = Kb[touched] @ Psic  # dense, (touched x 2k)
        C = np.asarray(Pc[touched].T @ E)
        pos = np.full(2 * n, -1)
        pos[touched] = np.arange(touched.size)
        EE = Psic.T @ E[pos[bandc]]
        EE = 0.5 * (EE + EE.T)
        H = sp.bmat([[S, sp.csr_matrix(C)], [sp.csr_matrix(C.T), sp.csr_matrix(EE)]], format="csr")
        perm_e = 2 * nr + np.r_[np.arange(0, 2 * k, 2), np.arange(1, 2 * k, 2)]
        return _permute(H, np.r_[perm_s, perm_e])


def _permute(M, perm):
    """Return ``P M P^T`` where row/col ``i`` of ``M`` moves to ``perm[i]``."""
    inv = np.empty_like(perm)
    inv[perm] = np.arange(perm.size)
    return M[inv][:, inv].tocsr()


def assemble_phi(standard, basis=None):
    """Combine a standard scalar shape matrix and an enriched basis."""
    standard = sp.csr_matrix(standard)
    empty = np.flatnonzero(np.diff(standard.indptr) == 0)
    if empty.size:
        raise AssemblyError(f"atom {empty[0]} has no interpolation support", atom=int(empty[0]))
    return InterpolationMatrix(standard, basis)


@dataclass
class ReducedState:
    q: np.ndarray
    n_rep: int
    positions: np.ndarray
    energy: float
    internal_force: np.ndarray
    residual_norm: float
    iterations: int
    tol: float
    condition: float = float("nan")
    phi: InterpolationMatrix | None = field(default=None, repr=False)
    factor: object = field(default=None, repr=False)
    n_factorizations: int = 0

    @property
    def repatom_dofs(self):
        return self.q[:2 * self.n_rep]

    @property
    def enriched_dofs(self):
        return self.q[2 * self.n_rep:]

    @property
    def converged(self):
        return self.residual_norm <= self.tol


def reduced_bcs(repatoms, bcs):
    """Map atom-level prescribed DOFs onto co-located repatom DOFs.

    Returns ``(dofs, values)`` in the interleaved reduced layout.
    """
    if repatoms.atom_index is None:
        raise AssemblyError("repatoms are not tied to lattice atoms")
    lookup = {int(d): float(v) for d, v in zip(bcs.dofs, bcs.values)}
    dofs, vals = [], []
    for c, a in enumerate(repatoms.atom_index):
        for i in (0, 1):
            key = 2 * int(a) + i
            if key in lookup:
                dofs.append(2 * c + i)
                vals.append(lookup[key])
    return np.asarray(dofs, dtype=np.int64), np.asarray(vals)


def default_reduced_tol(model, h, rel=1e-10):
    """Residual tolerance on the reduced gradient, scaled by the repatom cell area."""
    return default_force_tol(model, rel) * (h / model.spacing) ** 2


def condition_estimate(lu, A):
    """1-norm condition estimate from an existing LU factorization."""
    n = A.shape[0]
    if n == 0:
        return 1.0
    inv = spla.LinearOperator((n, n), matvec=lu.solve, rmatvec=lambda v: lu.solve(v, trans="T"),
                              dtype=float)
    return float(spla.onenormest(A) * spla.onenormest(inv))


@dataclass(eq=False)
class Factorization:
    """Sparse LU of the reduced Hessian restricted to the free DOFs."""

    lu: object
    free: np.ndarray
    n_dof: int

    def compatible(self, free, n_dof):
        return self.n_dof == n_dof and np.array_equal(self.free, free)


def factorize(H):
    try:
        return spla.splu(H.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                         options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise ConditioningError(f"reduced Hessian is singular: {exc}", np.inf) from exc


def solve_reduced(model, phi, bc_dofs, bc_values, *, q0=None, tol=None, h=None, max_iter=50,
                  check_condition=True, length_floor=1e-12, factor=None, contraction=0.5):
    """Minimise ``Pi(X0 + Phi q)`` over the free reduced DOFs by Newton-Raphson.

    A factorization of the reduced Hessian is reused for further steps as
    long as each step shrinks the residual by at least ``contraction``;
    otherwise the Hessian is rebuilt at the current iterate.  ``factor`` may
    carry a factorization from a nearby problem (same DOF layout) to start
    with.  Set ``contraction=0`` for a fresh Hessian at every step.
    """
    n = phi.n_dof
    if tol is None:
        tol = default_reduced_tol(model, h if h is not None else model.spacing)
    q = np.zeros(n) if q0 is None else np.array(q0, dtype=float)
    q[bc_dofs] = bc_values
    mask = np.ones(n, dtype=bool)
    mask[bc_dofs] = False
    free = np.flatnonzero(mask)
    X0 = model.positions0
    cond = float("nan")
    res = np.inf
    prev = None
    fact = factor if factor is not None and factor.compatible(free, n) else None
    n_fact = 0
    for it in range(max_iter + 1):
        x = X0 + phi.apply(q)
        energy, f, _ = assemble(model, x, False, length_floor)
        g = phi.rmatvec(f)
        res = float(np.max(np.abs(g[free]))) if free.size else 0.0
        log.debug("reduced Newton it=%d energy=%.12e residual=%.3e", it, energy, res)
        if res <= tol:
            state = ReducedState(q, phi.n_rep, x, energy, f, res, it, tol, cond, phi)
            state.factor = fact
            state.n_factorizations = n_fact
            return state
        if it == max_iter:
            break
        if fact is None or (prev is not None and res > contraction * prev):
            _, _, K = assemble(model, x, True, length_floor)
            H = phi.reduce_hessian(K)[free][:, free].tocsc()
            fact = Factorization(factorize(H), free, n)
            n_fact += 1
            if check_condition and n_fact == 1:
                cond = condition_estimate(fact.lu, H)
                if not np.isfinite(cond) or cond > CONDITION_LIMIT:
                    raise ConditioningError(f"reduced Hessian condition estimate {cond:.3e} "
                                            f"exceeds {CONDITION_LIMIT:.0e}", cond)
        q = q.copy()
        q[free] -= fact.lu.solve(g[free])
        prev = res
    raise NonConvergenceError(f"reduced Newton did not converge in {max_iter} iterations "
                              f"(residual {res:.3e})", residual=res, iterations=max_iter)


@dataclass
class ErrorReport:
    eps_u: float
    eps_u_alpha: np.ndarray
    n_dof: int = 0
    h: float = float("nan")

    def write_csv(self, path, header_lines=()):
        with open(path, "w", newline="") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            wr = csv.writer(fh)
            wr.writerow(["atom_id", "eps_u_alpha"])
            for i, e in enumerate(self.eps_u_alpha):
                wr.writerow([i, repr(float(e))])

    def summary_row(self):
        return {"h": self.h, "n_dof": self.n_dof, "eps_u": self.eps_u}


def displacement_errors(u_qc, u_fs):
    """Global relative error and per-atom norm-difference error of two displacement fields."""
    u_qc = np.asarray(u_qc, dtype=float).reshape(-1, 2)
    u_fs = np.asarray(u_fs, dtype=float).reshape(-1, 2)
    ref = np.linalg.norm(u_fs)
    if ref == 0.0:
        raise UndefinedMetricError("reference displacement is identically zero")
    eps = float(np.linalg.norm(u_qc - u_fs) / ref)
    per_atom = np.abs(np.linalg.norm(u_qc, axis=1) - np.linalg.norm(u_fs, axis=1))
    return eps, per_atom


def reconstruct_and_measure(reduced_state, full_state, positions0, h=float("nan")):
    """Compare the reconstructed reduced field against the full-lattice solution."""
    if reduced_state.positions.shape != full_state.positions.shape:
        raise ValueError("reduced and full states belong to different lattices")
    eps, per_atom = displacement_errors(reduced_state.positions - positions0,
                                        full_state.positions - positions0)
    n_dof = reduced_state.phi.n_dof if reduced_state.phi is not None else reduced_state.q.size
    return ErrorReport(eps, per_atom, int(n_dof), h)


# ---------------------------------------------------------------------------
# A complete reduced problem: lattice, loading, repatoms and enrichment.

@dataclass(eq=False)
class QcProblem:
    """Everything needed to build ``Phi`` for a locality field and solve for equilibrium.

    ``geometry`` is ``None`` for unenriched problems.
    """

    model: object
    bcs: object
    repatoms: RepatomGrid
    geometry: object = None
    enrichment_radius: float = 2.5
    enrich: bool = True
    enrichment_kind: str | None = None
    lme_tol: float = 1e-10
    cutoff: float = 1e-12
    tol: float | None = None
    scheme: str = "lme"

    def __post_init__(self):
        h = self.repatoms.spacing
        if self.geometry is not None:
            fld = heaviside_values(self.geometry, self.model.coords0, self.enrichment_kind)
            self.psi_atoms = fld.psi
            self.chi_atoms = fld.chi
            self.psi_rep = np.asarray(self.geometry.signed_distance(self.repatoms.positions))
        else:
            self.psi_atoms = self.chi_atoms = self.psi_rep = None
        if self.scheme not in ("lme", "linear"):
            raise ValueError(f"unknown interpolation scheme {self.scheme!r}")
        if self.enrich and self.geometry is not None and self.scheme == "linear":
            self.repatoms.enriched = cut_element_nodes(self.model.coords0, self.repatoms,
                                                       self.chi_atoms)
        elif self.enrich and self.geometry is not None:
            self.repatoms.enriched = select_enriched_repatoms(self.psi_rep, self.enrichment_radius, h)
        else:
            self.repatoms.enriched = np.zeros(0, dtype=np.int64)
        self.bc_dofs, self.bc_values = reduced_bcs(self.repatoms, self.bcs)
        if self.tol is None:
            self.tol = default_reduced_tol(self.model, h)

    @property
    def h(self):
        return self.repatoms.spacing

    @property
    def n_rep(self):
        return self.repatoms.n_rep

    @property
    def enriched(self):
        return self.repatoms.enriched

    def chi_repatoms(self):
        return self.chi_atoms[self.repatoms.atom_index]

    def enriched_basis(self, standard):
        if self.enriched.size == 0:
            return None, None
        raw = build_enriched_columns(standard, self.chi_atoms, self.chi_repatoms(), self.enriched)
        return gram_schmidt_orthonormalize(raw), raw

    def lme_table(self, gamma, mu0=None):
        return evaluate(self.model.coords0, self.repatoms, gamma, cutoff=self.cutoff,
                        tol=self.lme_tol, mu0=mu0)

    def interpolation(self, table=None):
        """Interpolation matrix; ``table`` (LME values) is ignored by the linear scheme."""
        standard = hat_matrix(self.model.coords0, self.repatoms) if self.scheme == "linear" \
            else table.matrix()
        basis, _ = self.enriched_basis(standard)
        return assemble_phi(standard, basis)

    def solve(self, phi, q0=None, **kw):
        return solve_reduced(self.model, phi, self.bc_dofs, self.bc_values, q0=q0, tol=self.tol,
                             h=self.h, **kw)
