"""Stabilized mixed solver for inextensible (and isochoric) surface flow.

Unknowns are a P1 velocity u, a P1 tension sigma and, for the isochoric
variant, a scalar pressure p.  The saddle system

    [ A    B^T        g ] [u]     [f]
    [ B   -d^2 S      0 ] [s]  =  [0]
    [ g^T  0          0 ] [p]     [0]

uses A = K_vec + l^-2 M_vec and the h_K^2-weighted multiplier stiffness S.
Before factorizing, the multiplier Schur complement is examined for an
isolated near-null mode (the sphere pair (-1, Hbar) in the isochoric case).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .assembly import FeOperators
from .errors import ConfigurationError, RankDeficiencyError, SolverError
from .geometry import GeometryData
from .infsup import InfSupProblem, infsup_constant, null_pair
from .linalg import m_angle
from .mesh import TriMesh
from .oracle import TRIPLE_WEIGHTS

FORMULATIONS = ("inextensible", "inextensible-isochoric")
SOLVE_RESIDUAL_TOL = 1e-10
# a Schur eigenvalue below GAP_RATIO times the next one is an isolated near-null mode
GAP_RATIO = 0.05
LDL_MAX_SIZE = 1500


@dataclass
class MixedProblem:
    formulation: str
    load: np.ndarray
    mesh: TriMesh
    geometry: GeometryData
    ops: FeOperators
    stabilization_weight: float = 1.0
    allow_unstable: bool = False
    check_rank: bool = True

    def __post_init__(self):
        if self.formulation not in FORMULATIONS:
            raise ConfigurationError(f"unknown formulation {self.formulation!r}")
        if not self.stabilization_weight >= 0:
            raise ConfigurationError("stabilization weight must be >= 0")
        self.load = np.asarray(self.load, dtype=float).ravel()
        if self.load.shape != (3 * self.ops.n_vertices,):
            raise ConfigurationError(
                f"load has {self.load.size} entries, expected {3 * self.ops.n_vertices}")
        if not np.all(np.isfinite(self.load)):
            raise ConfigurationError("load contains non-finite values")

    @property
    def isochoric(self) -> bool:
        return self.formulation == "inextensible-isochoric"


@dataclass
class MixedSolution:
    u: np.ndarray            # (V, 3)
    sigma: np.ndarray        # (V,)
    p: float | None
    residuals: dict
    diagnostics: dict = field(default_factory=dict)

    def summary(self) -> dict:
        return {
            "p": self.p,
            "residuals": self.residuals,
            "diagnostics": {k: v for k, v in self.diagnostics.items() if k != "null_mode"},
            "u_max": float(np.abs(self.u).max()),
            "sigma_max": float(np.abs(self.sigma).max()),
        }

    def to_json(self) -> str:
        return json.dumps({"schema": 1, **self.summary()}, indent=2, sort_keys=True,
                          default=_json_default)


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not serializable: {type(x)}")


# ------------------------------------------------------------------ loads

def translation_load(ops: FeOperators, c) -> np.ndarray:
    """f(v) = int c . v for a constant vector c."""
    c = np.asarray(c, dtype=float).reshape(3)
    return ops.M_vec @ np.tile(c, ops.n_vertices)


def tension_load(ops: FeOperators, sigma_star) -> np.ndarray:
    """f(v) = b(v, sigma*)."""
    return ops.B_form.T @ np.asarray(sigma_star, dtype=float)


def normal_load(ops: FeOperators) -> np.ndarray:
    """f(v) = int n . v with the facet normal."""
    return np.asarray(ops.g_vec, dtype=float).copy()


def smooth_tension(mesh: TriMesh, ops: FeOperators) -> np.ndarray:
    """Interpolant of sigma*(x) = x y + z, shifted to zero discrete mean."""
    x = mesh.vertices
    s = x[:, 0] * x[:, 1] + x[:, 2]
    return s - float(ops.mean_weights @ s) / ops.total_area


# ------------------------------------------------------------------ matrices

def saddle_matrix(ops: FeOperators, delta: float, isochoric: bool) -> sp.csc_matrix:
    ell = ops.length_scale
    A = ops.K_vec + ops.M_vec / ell**2
    B = ops.B_form
    blocks = [[A, B.T], [B, -(delta**2) * ops.S]]
    if isochoric:
        g = sp.csr_matrix(np.asarray(ops.g_vec).reshape(-1, 1))
        blocks[0].append(g)
        blocks[1].append(None)
        blocks.append([g.T, None, sp.csr_matrix((1, 1))])
    return sp.bmat(blocks).tocsc()


def saddle_inertia(K, n_u: int, n_mult: int, near_null: int = 0) -> dict:
    """Inertia (positive, negative, zero) of the saddle matrix.

    Small systems use a dense Bunch-Kaufman LDL^T; larger ones use Sylvester's
    law (A is positive definite, so the signs follow the Schur complement).
    """
    if K.shape[0] <= LDL_MAX_SIZE:
        _, D, _ = la.ldl(K.toarray())
        d = la.eigvalsh(D)
        tol = 1e-12 * np.abs(d).max()
        return {"positive": int(np.sum(d > tol)), "negative": int(np.sum(d < -tol)),
                "zero": int(np.sum(np.abs(d) <= tol)), "method": "ldl"}
    return {"positive": n_u, "negative": n_mult - near_null, "zero": near_null,
            "method": "sylvester"}


def diagnose_multipliers(problem: MixedProblem) -> dict:
    """Lowest eigenpairs of the multiplier Schur complement in the multiplier norm.

    With A = M_X / l^2 the Schur complement is l^2 (C M_X^-1 C^T + (d/l)^2 S), so
    the inf-sup pencil with weight d/l gives it up to the factor l^2.
    """
    ops, geo = problem.ops, problem.geometry
    ell = ops.length_scale
    delta = problem.stabilization_weight / ell
    if problem.isochoric:
        ip = InfSupProblem(form="c-full", multiplier_norm="lemma", stabilization_weight=delta,
                           dense_threshold=0)
    else:
        ip = InfSupProblem(form="b-only", stabilization_weight=delta, dense_threshold=0)
    res = infsup_constant(ip, ops, geo)
    lam = ell**2 * res.eigenvalue
    nxt = ell**2 * res.next_eigenvalues[0]
    gap = lam / nxt if nxt > 0 else 0.0
    out = {
        "schur_min": lam,
        "schur_next": nxt,
        "gap_ratio": gap,
        "near_null_dim": int(gap <= GAP_RATIO),
        "null_mode": res.eigenvector,
    }
    if problem.isochoric:
        out["null_mode_angle"] = m_angle(res.eigenvector, null_pair(ops), ops.N)
    return out


# ------------------------------------------------------------------ solve

def solve_mixed(problem: MixedProblem) -> MixedSolution:
    ops = problem.ops
    delta = problem.stabilization_weight
    n_v = ops.n_vertices
    n_u = 3 * n_v
    n_mult = n_v + (1 if problem.isochoric else 0)
    diag = {"formulation": problem.formulation, "stabilization_weight": delta}

    unstable = delta == 0 and not problem.allow_unstable
    if problem.check_rank or unstable:
        d = diagnose_multipliers(problem)
        mode = d.pop("null_mode")
        diag.update(d)
        if unstable:
            raise RankDeficiencyError(
                "equal-order P1/P1 pair without stabilization; set a positive weight or "
                "pass the unstable-pair override",
                null_mode={"vector": mode, **{k: d[k] for k in d if k != "near_null_dim"}},
                diagnostics=diag)
        if d["near_null_dim"]:
            detail = {"vector": mode, "schur_min": d["schur_min"], "gap_ratio": d["gap_ratio"]}
            msg = f"multiplier block near-singular (gap ratio {d['gap_ratio']:.2e})"
            if "null_mode_angle" in d:
                detail["angle_to_sphere_pair"] = d["null_mode_angle"]
                msg += f"; null mode at {d['null_mode_angle']:.2f} deg from (xi, q) = (-1, Hbar)"
            raise RankDeficiencyError(msg, null_mode=detail, diagnostics=diag)

    K = saddle_matrix(ops, delta, problem.isochoric)
    rhs = np.zeros(K.shape[0])
    rhs[:n_u] = problem.load
    try:
        lu = splu(K)
    except RuntimeError as exc:
        raise RankDeficiencyError(f"saddle matrix exactly singular: {exc}",
                                  diagnostics=diag) from exc
    x = lu.solve(rhs)
    r = rhs - K @ x
    x += lu.solve(r)  # one step of iterative refinement
    r = rhs - K @ x
    scale = max(np.linalg.norm(rhs), abs(K).max() * np.linalg.norm(x), 1e-300)
    rel = float(np.linalg.norm(r) / scale)
    if not np.all(np.isfinite(x)) or rel > SOLVE_RESIDUAL_TOL:
        raise SolverError(f"saddle residual {rel:.2e} above {SOLVE_RESIDUAL_TOL:.0e}",
                          diagnostics=diag)
    diag["algebraic_residual"] = rel
    diag["inertia"] = saddle_inertia(K, n_u, n_mult, diag.get("near_null_dim", 0))

    u = x[:n_u]
    sigma = x[n_u:n_u + n_v]
    p = float(x[-1]) if problem.isochoric else None
    sol = MixedSolution(u=u.reshape(n_v, 3), sigma=sigma, p=p, residuals={}, diagnostics=diag)
    sol.residuals = constraint_report(sol, problem.mesh, problem.geometry, ops, delta)
    return sol


# ------------------------------------------------------------------ post-processing

def face_divergence(mesh: TriMesh, geometry: GeometryData, u) -> np.ndarray:
    u = np.asarray(u, dtype=float).reshape(-1, 3)
    return np.einsum("kia,kia->k", geometry.face_gradients, u[mesh.faces])


def constraint_report(solution: MixedSolution, mesh: TriMesh, geometry: GeometryData,
                      ops: FeOperators, delta: float) -> dict:
    div = face_divergence(mesh, geometry, solution.u)
    u = solution.u.ravel()
    return {
        "divergence_l2": float(np.sqrt(np.sum(geometry.face_areas * div**2))),
        "flux": float(ops.g_vec @ u),
        "velocity_l2": float(np.sqrt(max(u @ (ops.M_vec @ u), 0.0))),
        "stabilization_energy": float(delta**2 * solution.sigma @ (ops.S @ solution.sigma)),
    }


def surface_tension_force(sigma, mesh: TriMesh, geometry: GeometryData) -> np.ndarray:
    """Nodal force F_i = int (grad sigma - H sigma n) phi_i, flattened to 3V."""
    sigma = np.asarray(sigma, dtype=float)
    grads = geometry.face_gradients
    areas = geometry.face_areas
    gs = np.einsum("ki,kia->ka", sigma[mesh.faces], grads)
    F = np.zeros((mesh.n_vertices, 3))
    for i in range(3):
        np.add.at(F, mesh.faces[:, i], (areas / 3.0)[:, None] * gs)
    # normal part: int H sigma phi_i n_K, exact for the P1 triple product per face
    fn = geometry.face_normals
    H = geometry.mean_curvature
    f = mesh.faces
    local = np.einsum("k,ijl,ki,kj->kl", areas, TRIPLE_WEIGHTS, H[f], sigma[f])
    for i in range(3):
        np.add.at(F, f[:, i], -local[:, i, None] * fn)
    return F.ravel()


def ibp_residual(sigma, v, mesh: TriMesh, geometry: GeometryData, ops: FeOperators) -> float:
    """R(sigma, v) = int sigma div v - int v . (-grad sigma + H sigma n)."""
    sigma = np.asarray(sigma, dtype=float)
    v = np.asarray(v, dtype=float).ravel()
    F = surface_tension_force(sigma, mesh, geometry)
    return float(sigma @ (ops.B_form @ v) + F @ v)


def write_vtk(path, mesh: TriMesh, solution: MixedSolution | None = None,
              geometry: GeometryData | None = None) -> None:
    """Legacy ASCII polydata with point arrays u, sigma and H."""
    r = repr
    lines = ["# vtk DataFile Version 3.0", "surfinfsup solution", "ASCII", "DATASET POLYDATA",
             f"POINTS {mesh.n_vertices} double"]
    lines += [" ".join(r(float(c)) for c in p) for p in mesh.vertices]
    lines.append(f"POLYGONS {mesh.n_faces} {4 * mesh.n_faces}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.faces]
    arrays = []
    if solution is not None:
        arrays.append(("VECTORS u double", solution.u))
        arrays.append(("SCALARS sigma double 1\nLOOKUP_TABLE default", solution.sigma))
    if geometry is not None:
        arrays.append(("SCALARS H double 1\nLOOKUP_TABLE default", geometry.mean_curvature))
    if arrays:
        lines.append(f"POINT_DATA {mesh.n_vertices}")
        for head, data in arrays:
            lines.append(head)
            if data.ndim == 2:
                lines += [" ".join(r(float(c)) for c in row) for row in data]
            else:
                lines += [r(float(c)) for c in data]
    Path(path).write_text("\n".join(lines) + "\n")
