"""P1 surface finite element operators.

Scalar dofs are vertices; vector dofs are ordered vertex-major,
component-minor (dof ``3 * i + c``).  Every form is integrated exactly on the
flat facets.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import AssemblyError, ConfigurationError, GeometryError
from .geometry import GeometryData, check_faces, mass_matrix, stiffness_matrix
from .linalg import LowRankUpdated
from .mesh import TriMesh

I3 = sp.identity(3, format="csr")


@dataclass(eq=False)
class FeOperators:
    """Assembled forms.  ``N`` acts on ``(xi, q)``, i.e. has size V + 1."""

    M: sp.csr_matrix
    M_vec: sp.csr_matrix
    K: sp.csr_matrix
    K_vec: sp.csr_matrix
    B_form: sp.csr_matrix | None = None
    g_vec: np.ndarray | None = None
    M_X: sp.csr_matrix | None = None
    N: LowRankUpdated | None = None
    S: sp.csr_matrix | None = None
    length_scale: float = 1.0
    total_area: float = 0.0
    mean_curvature_mean: float = 0.0
    h: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def n_vertices(self) -> int:
        return self.M.shape[0]

    @property
    def mean_weights(self) -> np.ndarray:
        """``M @ 1``: xi-bar = mean_weights . xi / |Gamma|."""
        return np.asarray(self.M.sum(axis=1)).ravel()

    def C_full(self) -> sp.csr_matrix:
        """Rows of c(v, (xi, q)): B_form stacked over g^T."""
        return sp.vstack([self.B_form, sp.csr_matrix(self.g_vec.reshape(1, -1))]).tocsr()

    def multiplier_norm(self, xi, q=0.0) -> float:
        x = np.append(np.asarray(xi, dtype=float), q)
        return float(np.sqrt(max(self.N.quad(x), 0.0)))

    def velocity_norm(self, v) -> float:
        v = np.asarray(v, dtype=float).ravel()
        return float(np.sqrt(max(v @ (self.M_X @ v), 0.0)))

    def export_mtx(self, directory) -> list[Path]:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        mats = {
            "M": self.M, "M_vec": self.M_vec, "K": self.K, "K_vec": self.K_vec,
            "B_form": self.B_form, "M_X": self.M_X, "S": self.S,
        }
        for name, A in mats.items():
            if A is None:
                continue
            path = out / f"{name}.mtx"
            scipy.io.mmwrite(str(path), sp.coo_matrix(A), precision=17)
            written.append(path)
        if self.g_vec is not None:
            path = out / "g_vec.mtx"
            scipy.io.mmwrite(str(path), self.g_vec.reshape(-1, 1), precision=17)
            written.append(path)
        if self.N is not None:
            path = out / "N.mtx"
            scipy.io.mmwrite(str(path), self.N.toarray(), precision=17)
            written.append(path)
        return written


def _scatter_rows(mesh, values, ncols, col_index):
    """Assemble (V, ncols) matrix from per-face (F, 3, m) values at columns col_index (F, m)."""
    f = mesh.faces
    F, _, m = values.shape
    rows = np.repeat(f[:, :, None], m, axis=2).ravel()
    cols = np.repeat(col_index[:, None, :], 3, axis=1).ravel()
    return sp.csr_matrix((values.ravel(), (rows, cols)), shape=(mesh.n_vertices, ncols))


def assemble_basic(mesh: TriMesh, geometry: GeometryData) -> FeOperators:
    check_faces(mesh, geometry.face_areas)
    M = mass_matrix(mesh, geometry.face_areas)
    K = stiffness_matrix(mesh, geometry.face_areas, geometry.face_gradients)
    return FeOperators(
        M=M,
        M_vec=sp.kron(M, I3, format="csr"),
        K=K,
        K_vec=sp.kron(K, I3, format="csr"),
        length_scale=geometry.length_scale,
        total_area=geometry.total_area,
        mean_curvature_mean=geometry.mean_curvature_mean,
        h=mesh.h,
    )


def assemble_divergence(mesh: TriMesh, geometry: GeometryData):
    """B_form[j, 3i+c] = int psi_j d_c phi_i and g_vec[3i+c] = int phi_i n_c."""
    A = geometry.face_areas
    G = geometry.face_gradients
    F = mesh.n_faces
    # per face: columns 3*vertex + c for the 3 local vertices, 9 columns
    cols = (3 * mesh.faces[:, :, None] + np.arange(3)[None, None, :]).reshape(F, 9)
    vals = np.broadcast_to((A[:, None] / 3.0 * G.reshape(F, 9))[:, None, :], (F, 3, 9))
    B = _scatter_rows(mesh, np.ascontiguousarray(vals), 3 * mesh.n_vertices, cols)
    g = np.zeros((mesh.n_vertices, 3))
    for i in range(3):
        np.add.at(g, mesh.faces[:, i], A[:, None] / 3.0 * geometry.face_normals)
    return B, g.ravel()


def lemma_norm_matrix(M, total_area, mean_curvature_mean, ell) -> LowRankUpdated:
    """Quadratic form ||xi - xi_bar||^2 + l^4 (Hbar xi_bar + q)^2 + l^2 xi_bar^2 on (xi, q)."""
    n = M.shape[0]
    m = np.append(np.asarray(M.sum(axis=1)).ravel() / total_area, 0.0)
    w = mean_curvature_mean * m
    w[-1] = 1.0
    eq = np.zeros(n + 1)
    eq[-1] = 1.0
    base = sp.block_diag([M, sp.identity(1)], format="csr")
    U = np.column_stack([m, w, eq])
    D = np.diag([ell**2 - total_area, ell**4, -1.0])
    return LowRankUpdated(base, U, D)


def plain_norm_matrix(M, ell, with_q=True) -> LowRankUpdated:
    """``||xi||_0^2`` (+ ``l^4 q^2`` when a pressure dof is present)."""
    if not with_q:
        return LowRankUpdated(M)
    return LowRankUpdated(sp.block_diag([M, sp.identity(1) * ell**4], format="csr"))


def assemble_norms(mesh: TriMesh, geometry: GeometryData, ops: FeOperators, ell=None):
    ell = geometry.length_scale if ell is None else float(ell)
    M_X = (ops.M_vec + ell**2 * ops.K_vec).tocsr()
    N = lemma_norm_matrix(ops.M, geometry.total_area, geometry.mean_curvature_mean, ell)
    # PD by construction; probe the directions the low-rank part touches
    n = ops.n_vertices
    probes = [np.append(np.ones(n), 0.0), np.append(np.zeros(n), 1.0),
              np.append(np.ones(n), -geometry.mean_curvature_mean)]
    for x in probes:
        if not N.quad(x) > 0:
            raise AssemblyError("multiplier norm matrix is not positive definite")
    return M_X, N


def assemble_stabilization(mesh: TriMesh, geometry: GeometryData | None = None) -> sp.csr_matrix:
    """S = sum_K h_K^2 (element stiffness of K), h_K the longest edge."""
    if geometry is None:
        areas = mesh.face_areas()
        from .geometry import face_gradients

        grads = face_gradients(mesh, areas)
    else:
        areas, grads = geometry.face_areas, geometry.face_gradients
    return stiffness_matrix(mesh, areas, grads, weights=mesh.face_diameters() ** 2)


def assemble(mesh: TriMesh, geometry: GeometryData, ell=None) -> FeOperators:
    """All operators in one pass."""
    ops = assemble_basic(mesh, geometry)
    ops.B_form, ops.g_vec = assemble_divergence(mesh, geometry)
    ops.M_X, ops.N = assemble_norms(mesh, geometry, ops, ell)
    ops.length_scale = geometry.length_scale if ell is None else float(ell)
    ops.S = assemble_stabilization(mesh, geometry)
    return ops


# ---------------------------------------------------------------- constraints

@dataclass(frozen=True)
class FeSpace:
    kind: str  # "scalar" | "vector"
    n_vertices: int
    constraint: str = "none"  # "none" | "zero-mean" | "tangential"

    def __post_init__(self):
        if self.kind not in ("scalar", "vector"):
            raise ConfigurationError(f"unknown space kind {self.kind!r}")
        allowed = {"scalar": ("none", "zero-mean"), "vector": ("none", "tangential")}
        if self.constraint not in allowed[self.kind]:
            raise ConfigurationError(f"constraint {self.constraint!r} not valid for {self.kind} space")

    @property
    def dof_count(self) -> int:
        return self.n_vertices if self.kind == "scalar" else 3 * self.n_vertices

    @property
    def constrained_dof_count(self) -> int:
        if self.constraint == "tangential":
            return 2 * self.n_vertices
        if self.constraint == "zero-mean":
            return self.n_vertices - 1
        return self.dof_count


def constraint_normals(ops: FeOperators, geometry: GeometryData) -> np.ndarray:
    """Unit normals used for the tangential constraint.

    The direction of ``int grad phi_i`` (the discrete area gradient), so that
    ``b(v_tau, 1) = 0`` holds exactly for vertex-tangential fields.  Falls back
    to the geometric vertex normal where the area gradient vanishes.
    """
    a = np.asarray(ops.B_form.sum(axis=0)).ravel().reshape(-1, 3)
    vn = geometry.vertex_normals
    norm = np.linalg.norm(a, axis=1)
    star = np.asarray(ops.M.sum(axis=1)).ravel() * 3.0
    weak = norm <= 1e-10 * star / geometry.length_scale
    nu = np.where(weak[:, None], vn, a / np.where(norm > 0, norm, 1.0)[:, None])
    flip = np.einsum("ij,ij->i", nu, vn) < 0
    nu[flip] *= -1
    return nu


def tangent_basis(normals: np.ndarray) -> np.ndarray:
    """(V, 3, 2) orthonormal tangent frames."""
    norms = np.linalg.norm(normals, axis=1)
    if np.any(~np.isfinite(norms)) or np.any(norms < 0.5):
        bad = int(np.argmin(np.where(np.isfinite(norms), norms, -1.0)))
        raise GeometryError(f"vertex {bad} has undefined normal")
    n = normals / norms[:, None]
    axis = np.eye(3)[np.argmin(np.abs(n), axis=1)]
    t1 = np.cross(n, axis)
    t1 /= np.linalg.norm(t1, axis=1)[:, None]
    t2 = np.cross(n, t1)
    return np.stack([t1, t2], axis=2)


def tangential_map(normals: np.ndarray) -> sp.csr_matrix:
    """T (3V x 2V): full velocity = T @ tangential coordinates."""
    T = tangent_basis(normals)
    V = len(normals)
    rows = (3 * np.arange(V)[:, None, None] + np.arange(3)[None, :, None]).repeat(2, axis=2)
    cols = (2 * np.arange(V)[:, None, None] + np.arange(2)[None, None, :]).repeat(3, axis=1)
    return sp.csr_matrix((T.ravel(), (rows.ravel(), cols.ravel())), shape=(3 * V, 2 * V))


@dataclass(eq=False)
class ConstrainedOperators:
    """Operators restricted to a constrained velocity and/or multiplier space.

    ``T`` maps reduced velocity coordinates to full ones; ``mean_weights`` is
    set when the multiplier lives in L2_0 (deflation against M @ 1).
    """

    M_X: sp.csr_matrix
    B_form: sp.csr_matrix
    g_vec: np.ndarray
    T: sp.csr_matrix | None = None
    mean_weights: np.ndarray | None = None

    def project_multiplier(self, xi):
        """M-orthogonal projection onto zero-mean functions."""
        xi = np.asarray(xi, dtype=float)
        if self.mean_weights is None:
            return xi
        w = self.mean_weights
        return xi - (w @ xi) / w.sum()

    def project_velocity(self, v):
        """Vertex-wise tangential projection of a full (3V,) field."""
        v = np.asarray(v, dtype=float).ravel()
        if self.T is None:
            return v
        return self.T @ (self.T.T @ v)


def apply_constraint(ops: FeOperators, geometry: GeometryData, velocity: FeSpace | None = None,
                     multiplier: FeSpace | None = None) -> ConstrainedOperators:
    T = None
    M_X, B, g = ops.M_X, ops.B_form, ops.g_vec
    if velocity is not None and velocity.constraint == "tangential":
        T = tangential_map(constraint_normals(ops, geometry))
        M_X = (T.T @ M_X @ T).tocsr()
        B = (B @ T).tocsr()
        g = T.T @ g
    weights = None
    if multiplier is not None and multiplier.constraint == "zero-mean":
        weights = ops.mean_weights
    return ConstrainedOperators(M_X=M_X, B_form=B, g_vec=g, T=T, mean_weights=weights)
