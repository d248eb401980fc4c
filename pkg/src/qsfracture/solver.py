"""P1 finite-element solves on cracked meshes and the associated energies.

Two elliptic problems are solved, both with ``u = g`` on the Dirichlet DOFs
and natural (traction-free) conditions on the Neumann boundary and on both
crack faces:

* the harmonic problem ``(grad u | grad v) = 0``;
* the penalized problem ``(grad u | grad v) + lam (u - w | v) = 0``, with the
  L2 product computed with a lumped mass matrix so that the discrete maximum
  principle holds on nonobtuse meshes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import CrackSet, DofMap, Mesh, build_dofmap

DENSE_SOLVE_LIMIT = 1_000
DIRECT_SOLVE_LIMIT = 20_000
CG_RTOL = 1e-10
RESIDUAL_LIMIT = 1e-8


class SolverError(RuntimeError):
    """Raised when a linear solve fails or leaves a large residual."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class Field:
    """Nodal values on the DOF space of a ``(mesh, crack)`` pair."""

    values: np.ndarray
    dofmap: DofMap
    residual: float = 0.0

    def __post_init__(self):
        if len(self.values) != self.dofmap.n_dofs:
            raise ValueError("field length does not match the DOF count")

    @property
    def dofmap_hash(self) -> str:
        return self.dofmap.hash

    def gradients(self) -> np.ndarray:
        """Constant gradient per triangle, shape (nt, 2)."""
        local = self.values[self.dofmap.corner_dofs]
        return np.einsum("tk,tkc->tc", local, self.dofmap.mesh.basis_gradients)

    def vertex_values(self) -> np.ndarray:
        """Average of the DOF values sharing each vertex (for plotting)."""
        mesh = self.dofmap.mesh
        s = np.bincount(self.dofmap.dof_vertex, weights=self.values, minlength=mesh.n_vertices)
        c = np.bincount(self.dofmap.dof_vertex, minlength=mesh.n_vertices)
        return s / np.maximum(c, 1)

    def to_dict(self) -> dict:
        return {"values": self.values.tolist(), "dofmap": self.dofmap.hash}


@dataclass(frozen=True)
class EnergyBreakdown:
    bulk: float
    surface: float
    penalty: float = 0.0

    @property
    def total(self) -> float:
        return self.bulk + self.surface + self.penalty

    def as_row(self) -> dict:
        return {"bulk": self.bulk, "surface": self.surface,
                "penalty": self.penalty, "total": self.total}


# ----------------------------------------------------------------- norms
def lift(dofmap: DofMap, g) -> np.ndarray:
    """Copy a vertex field onto every DOF of its vertex."""
    g = np.asarray(g, dtype=float)
    if g.shape != (dofmap.mesh.n_vertices,):
        raise ValueError("boundary field must have one value per mesh vertex")
    return g[dofmap.dof_vertex]


def dirichlet_norm_sq(dofmap: DofMap, values) -> float:
    """``||grad v||^2`` over the cracked domain."""
    local = np.asarray(values)[dofmap.corner_dofs]
    grads = np.einsum("tk,tkc->tc", local, dofmap.mesh.basis_gradients)
    return float(((grads**2).sum(1) * dofmap.mesh.areas).sum())


def l2_norm_sq(dofmap: DofMap, values) -> float:
    """Lumped-mass ``||v||^2``."""
    v = np.asarray(values)
    return float((dofmap.lumped_mass * v * v).sum())


def vertex_dirichlet_norm_sq(mesh: Mesh, g) -> float:
    grads = np.einsum("tk,tkc->tc", np.asarray(g)[mesh.triangles], mesh.basis_gradients)
    return float(((grads**2).sum(1) * mesh.areas).sum())


def vertex_l2_norm_sq(mesh: Mesh, g) -> float:
    mass = np.bincount(mesh.triangles.ravel(), weights=np.repeat(mesh.areas / 3.0, 3),
                       minlength=mesh.n_vertices)
    g = np.asarray(g)
    return float((mass * g * g).sum())


# -------------------------------------------------------------- assembly
def stiffness_matrix(dofmap: DofMap) -> sp.csr_matrix:
    cd = dofmap.corner_dofs
    rows = np.repeat(cd, 3, axis=1).ravel()
    cols = np.tile(cd, (1, 3)).ravel()
    vals = dofmap.mesh.local_stiffness.ravel()
    n = dofmap.n_dofs
    return sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def dense_stiffness_matrix(dofmap: DofMap) -> np.ndarray:
    cd = dofmap.corner_dofs
    n = dofmap.n_dofs
    flat = (cd[:, :, None] * n + cd[:, None, :]).ravel()
    return np.bincount(flat, weights=dofmap.mesh.local_stiffness.ravel(),
                       minlength=n * n).reshape(n, n)


def transfer_field(u: Field, target: DofMap) -> Field:
    """Move ``u`` onto a DOF space whose crack contains the field's crack.

    Each new DOF takes the value of the old DOF owning any of its corners.
    """
    src = u.dofmap
    if src.mesh is not target.mesh and src.mesh.fingerprint != target.mesh.fingerprint:
        raise ValueError("fields live on different meshes")
    if src is target:
        return u
    if not src.crack.issubset(target.crack):
        raise ValueError("target crack does not contain the source crack")
    first = np.full(target.n_dofs, -1, dtype=np.int64)
    flat = target.corner_dofs.ravel()
    first[flat[::-1]] = np.arange(len(flat))[::-1]
    values = u.values[src.corner_dofs.ravel()[first]]
    return Field(values, target)


def _solve_spd(A: sp.csr_matrix, b: np.ndarray) -> tuple[np.ndarray, float]:
    n = A.shape[0]
    if n == 0:
        return np.zeros(0), 0.0
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0.0
    if n < DIRECT_SOLVE_LIMIT:
        x = spla.spsolve(A.tocsc(), b)
    else:
        diag = A.diagonal()
        M = sp.diags(1.0 / diag)
        x, info = spla.cg(A, b, rtol=CG_RTOL, maxiter=20 * n, M=M)
        if info != 0:
            res = np.linalg.norm(A @ x - b) / bnorm
            raise SolverError(f"conjugate gradient did not converge (info={info})", res)
    res = float(np.linalg.norm(A @ x - b) / bnorm)
    if not np.all(np.isfinite(x)) or res > RESIDUAL_LIMIT:
        raise SolverError(f"linear solve residual {res:.3e} too large", res)
    return x, res


def _solve_dense(A: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, float]:
    n = len(b)
    bnorm = np.linalg.norm(b)
    if n == 0 or bnorm == 0.0:
        return np.zeros(n), 0.0
    try:
        x = sla.cho_solve(sla.cho_factor(A, check_finite=False), b, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"Cholesky factorization failed: {exc}") from exc
    res = float(np.linalg.norm(A @ x - b) / bnorm)
    if not np.all(np.isfinite(x)) or res > RESIDUAL_LIMIT:
        raise SolverError(f"linear solve residual {res:.3e} too large", res)
    return x, res


def _solve(dofmap: DofMap, g, w: np.ndarray | None, lam: float) -> Field:
    lam = float(lam)
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    g_d = lift(dofmap, g)
    if len(dofmap.dirichlet) == 0 and np.any(g_d != 0):
        raise SolverError("no Dirichlet DOFs to carry a nonzero boundary field")
    u = np.zeros(dofmap.n_dofs)
    u[dofmap.dirichlet] = g_d[dofmap.dirichlet]
    fixed = dofmap.is_dirichlet.copy()
    if lam == 0.0:
        # pieces with no Dirichlet DOF carry an arbitrary constant; use 0
        fixed |= dofmap.floating
    free = np.flatnonzero(~fixed)

    dense = dofmap.n_dofs <= DENSE_SOLVE_LIMIT
    A = dense_stiffness_matrix(dofmap) if dense else stiffness_matrix(dofmap)
    rhs = -(A @ u)
    if lam > 0.0:
        mass = dofmap.lumped_mass
        if dense:
            A[np.diag_indices_from(A)] += lam * mass
        else:
            A = A + sp.diags(lam * mass)
        rhs += lam * mass * w
    if dense:
        x, res = _solve_dense(A[np.ix_(free, free)], rhs[free])
    else:
        x, res = _solve_spd(A[free][:, free], rhs[free])
    u[free] = x
    return Field(u, dofmap, res)


def _as_dofmap(mesh: Mesh, crack) -> DofMap:
    if isinstance(crack, DofMap):
        return crack
    if crack is None:
        crack = CrackSet.empty()
    return build_dofmap(mesh, crack)


def solve_harmonic(mesh: Mesh, crack, g) -> Field:
    """Minimize ``||grad v||^2`` over fields equal to ``g`` on Dirichlet DOFs.

    ``crack`` may be a :class:`CrackSet` or a prebuilt :class:`DofMap`.
    Pieces of the domain cut off from the Dirichlet boundary get the value 0.
    """
    dm = _as_dofmap(mesh, crack)
    return _solve(dm, g, None, 0.0)


def solve_penalized(mesh: Mesh, crack, g, w: Field, lam: float) -> Field:
    """Minimize ``||grad v||^2 + lam ||v - w||^2`` with ``v = g`` on Dirichlet DOFs.

    ``w`` is transferred to the DOF space of ``crack`` first, so it may live on
    any crack contained in ``crack``.
    """
    dm = _as_dofmap(mesh, crack)
    wv = transfer_field(w, dm).values
    return _solve(dm, g, wv, lam)


def energy(mesh: Mesh, crack, u: Field) -> EnergyBreakdown:
    """Bulk (Dirichlet integral) and surface (crack length) energy of ``u``."""
    dm = u.dofmap
    if isinstance(crack, DofMap):
        crack = crack.crack
    if crack is not None and crack != dm.crack:
        raise ValueError("field does not live on the DOF space of this crack")
    return EnergyBreakdown(dirichlet_norm_sq(dm, u.values), dm.crack.total_length, 0.0)


def penalized_breakdown(u: Field, w: Field, lam: float) -> EnergyBreakdown:
    dm = u.dofmap
    wv = transfer_field(w, dm).values
    pen = float(lam) * l2_norm_sq(dm, u.values - wv)
    return EnergyBreakdown(dirichlet_norm_sq(dm, u.values), dm.crack.total_length, pen)


def harmonic_energy(mesh: Mesh, crack, g) -> EnergyBreakdown:
    """Reduced energy: minimal bulk energy for boundary data ``g`` plus crack length."""
    return energy(mesh, None, solve_harmonic(mesh, crack, g))


def penalized_energy(mesh: Mesh, crack, g, w: Field, lam: float) -> EnergyBreakdown:
    """Reduced penalized energy: minimum of bulk + surface + ``lam ||v - w||^2``."""
    return penalized_breakdown(solve_penalized(mesh, crack, g, w, lam), w, lam)


def solve_penalized_with_energy(dofmap: DofMap, g, w: Field, lam: float) -> tuple[Field, EnergyBreakdown]:
    wv = transfer_field(w, dofmap).values
    u = _solve(dofmap, g, wv, lam)
    pen = float(lam) * l2_norm_sq(dofmap, u.values - wv)
    return u, EnergyBreakdown(dirichlet_norm_sq(dofmap, u.values), dofmap.crack.total_length, pen)
