"""Discrete differential geometry on P1 facets.

Vertex normals average the face normals with Max's weights (face area over
the product of the squared lengths of the two edges meeting at the vertex),
which reproduce the exact normal at every vertex of an inscribed sphere.  The
curvature tensor on a face is the in-plane gradient of the P1 interpolant of
those normals, and the vertex mean curvature is the lumped L2 projection of
its trace, so ``H = div_Gamma n`` with the outward normal (H = 2/R on a
sphere).
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np
import scipy.sparse as sp

from .errors import GeometryError
from .mesh import TriMesh

DEGENERATE_AREA_RATIO = 1e-14


def face_gradients(mesh: TriMesh, areas=None, normals=None) -> np.ndarray:
    """Surface gradients of the three P1 hat functions on each face, (F, 3, 3).

    ``G[k, i]`` is the gradient of the hat function of local vertex ``i``.
    """
    x = mesh.vertices[mesh.faces]
    if normals is None:
        normals = mesh.face_normals()
    if areas is None:
        areas = mesh.face_areas()
    opposite = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    return np.cross(normals[:, None, :], opposite) / (2.0 * areas[:, None, None])


def mass_matrix(mesh: TriMesh, areas=None) -> sp.csr_matrix:
    if areas is None:
        areas = mesh.face_areas()
    local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    f = mesh.faces
    rows = np.repeat(f, 3, axis=1).ravel()
    cols = np.tile(f, (1, 3)).ravel()
    vals = (areas[:, None, None] * local[None]).ravel()
    n = mesh.n_vertices
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def stiffness_matrix(mesh: TriMesh, areas, grads, weights=None) -> sp.csr_matrix:
    """Sum over faces of ``w_K * area_K * grad phi_i . grad phi_j``."""
    local = np.einsum("kia,kja->kij", grads, grads) * areas[:, None, None]
    if weights is not None:
        local = local * weights[:, None, None]
    f = mesh.faces
    rows = np.repeat(f, 3, axis=1).ravel()
    cols = np.tile(f, (1, 3)).ravel()
    n = mesh.n_vertices
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def p1_quartic_integral(mesh: TriMesh, areas, values) -> float:
    """Exact integral of the fourth power of a P1 field.

    On a triangle, int (sum d_i lambda_i)^4 = area/15 * h4(d) where h4 is the
    complete homogeneous symmetric polynomial of degree 4.
    """
    d = values[mesh.faces]
    h4 = np.zeros(len(d))
    for idx in combinations_with_replacement(range(3), 4):
        h4 += np.prod(d[:, idx], axis=1)
    return float(np.sum(areas * h4) / 15.0)


@dataclass(frozen=True, eq=False)
class GeometryData:
    vertex_normals: np.ndarray
    mean_curvature: np.ndarray
    curvature_tensor: np.ndarray
    face_normals: np.ndarray
    face_areas: np.ndarray
    face_gradients: np.ndarray
    total_area: float
    mean_curvature_mean: float
    curvature_fluctuation_norm: float
    fluctuation_square_norm: float
    curvature_seminorm: float
    curvature_tensor_sup: float
    length_scale: float
    regularity_order: int = 1

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_normals)

    def summary(self) -> dict:
        return {
            "total_area": self.total_area,
            "mean_curvature_mean": self.mean_curvature_mean,
            "curvature_fluctuation_norm": self.curvature_fluctuation_norm,
            "fluctuation_square_norm": self.fluctuation_square_norm,
            "curvature_seminorm": self.curvature_seminorm,
            "curvature_tensor_sup": self.curvature_tensor_sup,
            "length_scale": self.length_scale,
            "regularity_order": self.regularity_order,
            "mean_curvature_min": float(self.mean_curvature.min()),
            "mean_curvature_max": float(self.mean_curvature.max()),
        }


def check_faces(mesh: TriMesh, areas) -> None:
    mean = areas.mean()
    bad = np.flatnonzero(areas < DEGENERATE_AREA_RATIO * mean)
    if bad.size:
        raise GeometryError(
            f"degenerate face {bad[0]} (area {areas[bad[0]]:.3e}, mean {mean:.3e})",
            face=bad[0],
        )


def compute_geometry(mesh: TriMesh, length_scale=None) -> GeometryData:
    """Normals, curvature and the derived scalars for a closed mesh.

    ``length_scale=None`` selects sqrt(|Gamma| / 4 pi).
    """
    raw = mesh.face_normals(unit=False)
    twice_area = np.linalg.norm(raw, axis=1)
    areas = 0.5 * twice_area
    check_faces(mesh, areas)
    fn = raw / twice_area[:, None]

    x = mesh.vertices[mesh.faces]
    vn = np.zeros_like(mesh.vertices)
    for i in range(3):
        e1 = x[:, (i + 1) % 3] - x[:, i]
        e2 = x[:, (i + 2) % 3] - x[:, i]
        w = 1.0 / (np.einsum("ij,ij->i", e1, e1) * np.einsum("ij,ij->i", e2, e2))
        np.add.at(vn, mesh.faces[:, i], raw * w[:, None])
    norms = np.linalg.norm(vn, axis=1)
    if np.any(norms == 0):
        raise GeometryError(f"vertex {int(np.argmin(norms))} has undefined normal")
    vn /= norms[:, None]

    grads = face_gradients(mesh, areas, fn)
    # H_K[a, b] = d n_a / d x_b
    tensor = np.einsum("kia,kib->kab", vn[mesh.faces], grads)
    trace = np.einsum("kaa->k", tensor)

    M = mass_matrix(mesh, areas)
    rhs = np.zeros(mesh.n_vertices)
    np.add.at(rhs, mesh.faces.ravel(), np.repeat(areas * trace / 3.0, 3))
    # lumped projection: the consistent one oscillates on anisotropic meshes;
    # both give the same integral of H
    H = rhs / np.asarray(M.sum(axis=1)).ravel()

    total = float(areas.sum())
    Hbar = float(M.dot(H).sum() / total)
    d = H - Hbar
    fluct2 = max(float(d @ M.dot(d)), 0.0)
    K = stiffness_matrix(mesh, areas, grads)
    semi2 = max(float(H @ K.dot(H)), 0.0)
    quartic = max(p1_quartic_integral(mesh, areas, d), 0.0)
    sup = float(np.linalg.norm(tensor, axis=(1, 2)).max())
    ell = np.sqrt(total / (4 * np.pi)) if length_scale is None else float(length_scale)
    if not ell > 0:
        raise GeometryError("length scale must be positive")

    return GeometryData(
        vertex_normals=vn,
        mean_curvature=H,
        curvature_tensor=tensor,
        face_normals=fn,
        face_areas=areas,
        face_gradients=grads,
        total_area=total,
        mean_curvature_mean=Hbar,
        curvature_fluctuation_norm=np.sqrt(fluct2),
        fluctuation_square_norm=np.sqrt(quartic),
        curvature_seminorm=np.sqrt(semi2),
        curvature_tensor_sup=sup,
        length_scale=float(ell),
    )
