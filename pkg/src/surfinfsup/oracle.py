"""Executable version of the constructive stability proofs.

Given a multiplier pair (xi, q) the test velocity is

    v = grad phi + v_n n,   Laplace(phi) = xi - xi_bar,
    v_n = k1 (Hbar xi_bar + q) + k2 (H - Hbar) xi_bar,

and the constants A, B, C bound c(v, (xi, q)) from below and ||v||_X from
above.  Everything is evaluated with the assembled P1 operators, so each
inequality of the argument can be checked numerically.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.sparse.linalg import splu
import scipy.sparse as sp

from .assembly import FeOperators
from .errors import ParameterError
from .geometry import GeometryData
from .mesh import TriMesh

# relative threshold below which ||H - Hbar||_0 is taken as exactly zero
FLAT_FLUCTUATION = 1e-10
SLACK_BUDGET = {"discretization": 0.10, "recovery": 0.10, "norm_equivalence": 0.05}
BOUND_TOL = sum(SLACK_BUDGET.values())

# int_K l_i l_j l_k / |K| for barycentric coordinates
TRIPLE_WEIGHTS = np.full((3, 3, 3), 1.0 / 60.0)
for _i in range(3):
    for _j in range(3):
        if _i != _j:
            TRIPLE_WEIGHTS[_i, _i, _j] = TRIPLE_WEIGHTS[_i, _j, _i] = TRIPLE_WEIGHTS[_j, _i, _i] = 1.0 / 30.0
    TRIPLE_WEIGHTS[_i, _i, _i] = 1.0 / 10.0


def p1_triple_integral(mesh: TriMesh, areas, a, b, c) -> float:
    """Exact integral of the product of three P1 fields."""
    f = mesh.faces
    return float(np.einsum("k,ijl,ki,kj,kl->", areas, TRIPLE_WEIGHTS, a[f], b[f], c[f]))


def p1_triple_vector(mesh: TriMesh, areas, a, b) -> np.ndarray:
    """Vector ``r_i = int a b phi_i`` for P1 fields a, b."""
    f = mesh.faces
    local = np.einsum("k,ijl,ki,kj->kl", areas, TRIPLE_WEIGHTS, a[f], b[f])
    r = np.zeros(mesh.n_vertices)
    np.add.at(r, f.ravel(), local.ravel())
    return r


class _Poisson:
    """Cached zero-mean Laplace-Beltrami solver (bordered with the mean constraint)."""

    def __init__(self, ops: FeOperators):
        m = ops.mean_weights
        K = sp.bmat([[ops.K, sp.csr_matrix(m.reshape(-1, 1))], [sp.csr_matrix(m.reshape(1, -1)), None]])
        self.lu = splu(K.tocsc())
        self.n = ops.n_vertices

    def solve(self, rhs):
        return self.lu.solve(np.append(rhs, 0.0))[: self.n]


def _poisson(ops: FeOperators) -> _Poisson:
    if "poisson" not in ops.extras:
        ops.extras["poisson"] = _Poisson(ops)
    return ops.extras["poisson"]


def mean_value(ops: FeOperators, xi) -> float:
    return float(ops.mean_weights @ xi) / ops.total_area


def solve_poisson_fluctuation(xi, ops: FeOperators) -> np.ndarray:
    """phi with K phi = -M (xi - xi_bar) and zero mean, the discrete Laplace(phi) = xi - xi_bar."""
    xi = np.asarray(xi, dtype=float)
    fluct = xi - mean_value(ops, xi)
    if not np.any(fluct):
        return np.zeros_like(xi)
    return _poisson(ops).solve(-(ops.M @ fluct))


# ------------------------------------------------------------------ constants

@dataclass
class ProofCertificate:
    k1: float
    k2: float
    A: float
    B: float
    C: float
    beta: float
    alpha_prop2: float
    alpha_prop1: float
    c_r_est: float
    length_scale: float
    total_area: float
    mean_curvature_mean: float
    fluctuation_norm: float
    fluctuation_square_norm: float
    curvature_seminorm: float
    curvature_tensor_sup: float
    A_terms: list = field(default_factory=list)
    B_terms: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps({"schema": 1, **self.to_dict()}, indent=2, sort_keys=True,
                          default=_json_default)

    def render(self) -> str:
        lines = [
            f"k1 = {self.k1:.6g}   k2 = {self.k2:.6g}   (l^2 = {self.length_scale**2:.6g})",
            f"A = {self.A:.6g}   B = {self.B:.6g}   C = {self.C:.6g}",
            f"beta = A/B = {self.beta:.6g}   alpha (b-only) = C/B = {self.alpha_prop2:.6g}",
            f"alpha (tangential) = 1/(c_r l) = {self.alpha_prop1:.6g}   c_r (empirical) = {self.c_r_est:.6g}",
        ]
        return "\n".join(lines + [f"note: {n}" for n in self.notes])


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not serializable: {type(x)}")


def _safe_ratio(num, den):
    """num/den with +inf for den == 0 < num and 0 for 0/0 (the min rules never pick these wrongly)."""
    if den > 0:
        return num / den
    return np.inf if num > 0 else 0.0


def proof_constants(geometry: GeometryData, ell: float | None = None,
                    c_r_est: float = 1.0) -> ProofCertificate:
    """k1, k2, A, B, C and the resulting inf-sup lower bounds (regularity order m = 1)."""
    ell = geometry.length_scale if ell is None else float(ell)
    area = geometry.total_area
    Hbar = geometry.mean_curvature_mean
    f = geometry.curvature_fluctuation_norm
    f2 = geometry.fluctuation_square_norm
    scale = np.sqrt(area) * max(np.abs(geometry.mean_curvature).max(), 1.0 / ell)
    notes = []
    if f <= FLAT_FLUCTUATION * scale:
        f, f2 = 0.0, 0.0
        notes.append("constant mean curvature: ||H - Hbar||_0 treated as 0")
    k1 = min(_safe_ratio(area, 2 * f**2), ell**2)
    k2 = min(_safe_ratio(f**2, 2 * f2**2), ell**2) if f > 0 else ell**2
    A_terms = [
        0.5,
        _safe_ratio(area**2, 4 * ell**4 * f**2),
        area / (2 * ell**2),
        _safe_ratio(f**4, 4 * ell**2 * f2**2),
        f**2 / 2,
    ]
    A = float(min(A_terms))
    Hsup = geometry.curvature_tensor_sup
    semi = geometry.curvature_seminorm
    amp = 1 + ell * Hsup
    B_terms = [
        c_r_est**2 * ell**2,
        amp**2 * area,
        (amp * ell * f + ell**2 * semi + ell**2 * semi) ** 2,
    ]
    B = float(np.sqrt(sum(B_terms)))
    C = float(min(0.5, k1 * Hbar**2 / 2 + k2 * f**2 / (2 * area)))
    notes.append("|phi|_2 replaced by ||Laplace(phi)||_0; c_r is an empirical lower estimate")
    notes.append("X-norm evaluated in its quadratic form (sqrt(2)-equivalent)")
    return ProofCertificate(
        k1=float(k1), k2=float(k2), A=A, B=B, C=C,
        beta=A / B, alpha_prop2=C / B, alpha_prop1=1.0 / (c_r_est * ell),
        c_r_est=float(c_r_est), length_scale=ell, total_area=area, mean_curvature_mean=Hbar,
        fluctuation_norm=f, fluctuation_square_norm=f2, curvature_seminorm=semi,
        curvature_tensor_sup=Hsup,
        A_terms=[float(t) for t in A_terms], B_terms=[float(t) for t in B_terms], notes=notes,
    )


def estimate_regularity_constant(ops: FeOperators, samples=32, seed: int = 0,
                                 smoothing: int = 2) -> float:
    """Empirical c_r: max over zero-mean samples of
    (||phi||_0 + l |phi|_1 + l^2 ||Laplace phi||_0) / (l^2 ||xi||_0).

    ``samples`` is a count (random fields: white noise smoothed ``smoothing``
    times by (M + l^2 K)^{-1} M) or an explicit array of fields, one per row.
    """
    ell = ops.length_scale
    if np.ndim(samples) == 0:
        count = int(samples)
        if count < 1:
            raise ParameterError("need at least one sample")
        rng = np.random.default_rng(seed)
        smoother = splu((ops.M + ell**2 * ops.K).tocsc())
        fields = []
        for _ in range(count):
            x = rng.standard_normal(ops.n_vertices)
            for _ in range(smoothing):
                x = smoother.solve(ops.M @ x)
            fields.append(x)
    else:
        fields = np.atleast_2d(np.asarray(samples, dtype=float))
        if len(fields) < 1:
            raise ParameterError("need at least one sample")
    best = 0.0
    for xi in fields:
        xi = xi - mean_value(ops, xi)
        nxi = np.sqrt(max(xi @ (ops.M @ xi), 0.0))
        if nxi == 0:
            continue
        phi = solve_poisson_fluctuation(xi, ops)
        n0 = np.sqrt(max(phi @ (ops.M @ phi), 0.0))
        n1 = np.sqrt(max(phi @ (ops.K @ phi), 0.0))
        ratio = (n0 + ell * n1 + ell**2 * nxi) / (ell**2 * nxi)
        best = max(best, ratio)
    return float(best)


# ------------------------------------------------------------------ the field

@dataclass
class ProofField:
    phi: np.ndarray
    v_tau_faces: np.ndarray     # (F, 3) raw per-face grad phi
    v_tau: np.ndarray           # (V, 3) recovered by area-weighted averaging
    v_n: np.ndarray             # (V,)
    v: np.ndarray               # (3V,) recovered P1 field v_tau + v_n n

    @property
    def v_normal_part(self) -> np.ndarray:
        return self.v - self.v_tau.ravel()


def recover_to_vertices(mesh: TriMesh, geometry: GeometryData, face_values) -> np.ndarray:
    """Area-weighted face-to-vertex averaging."""
    w = geometry.face_areas
    acc = np.zeros((mesh.n_vertices,) + face_values.shape[1:])
    den = np.zeros(mesh.n_vertices)
    for i in range(3):
        np.add.at(acc, mesh.faces[:, i], w.reshape((-1,) + (1,) * (face_values.ndim - 1)) * face_values)
        np.add.at(den, mesh.faces[:, i], w)
    return acc / den.reshape((-1,) + (1,) * (face_values.ndim - 1))


def construct_proof_field(xi, q, mesh: TriMesh, geometry: GeometryData, ops: FeOperators,
                          certificate: ProofCertificate) -> ProofField:
    xi = np.asarray(xi, dtype=float)
    phi = solve_poisson_fluctuation(xi, ops)
    grads = geometry.face_gradients
    faces = np.einsum("ki,kia->ka", phi[mesh.faces], grads)
    v_tau = recover_to_vertices(mesh, geometry, faces)
    xbar = mean_value(ops, xi)
    Hbar = geometry.mean_curvature_mean
    H = geometry.mean_curvature
    v_n = certificate.k1 * (Hbar * xbar + q) + certificate.k2 * (H - Hbar) * xbar
    v = v_tau + v_n[:, None] * geometry.vertex_normals
    return ProofField(phi=phi, v_tau_faces=faces, v_tau=v_tau, v_n=v_n, v=v.ravel())


def proof_form(xi, q, pf: ProofField, mesh: TriMesh, geometry: GeometryData,
               ops: FeOperators) -> float:
    """c(v, (xi, q)) = int xi div v_tau + int (H xi + q) v_n.

    The tangential term uses the raw face gradient in integrated-by-parts form
    -int grad xi . grad phi, the normal term exact P1 triple products.
    """
    xi = np.asarray(xi, dtype=float)
    tangential = -float(xi @ (ops.K @ pf.phi))
    H = geometry.mean_curvature
    normal = p1_triple_integral(mesh, geometry.face_areas, H, xi, pf.v_n)
    normal += q * float(ops.mean_weights @ pf.v_n)
    return tangential + normal


# ------------------------------------------------------------------ bounds

@dataclass
class BoundSample:
    index: int
    multiplier_norm: float
    c_value: float
    coercivity_lower: float
    young_lower: float
    velocity_norm: float
    continuity_upper: float
    coercivity_ok: bool
    continuity_ok: bool
    young_ok: bool
    realized_coercivity: float = 0.0
    realized_continuity: float = 0.0
    b_value: float | None = None
    prop2_lower: float | None = None
    prop2_ok: bool | None = None


@dataclass
class BoundReport:
    samples: list
    tolerance: float = BOUND_TOL
    slack_budget: dict = field(default_factory=lambda: dict(SLACK_BUDGET))

    @property
    def passed(self) -> bool:
        return all(s.coercivity_ok and s.continuity_ok and s.prop2_ok is not False
                   for s in self.samples)

    def fraction(self, attr) -> float:
        vals = [getattr(s, attr) for s in self.samples if getattr(s, attr) is not None]
        return float(np.mean(vals)) if vals else 1.0

    def failures(self) -> list:
        return [s for s in self.samples
                if not (s.coercivity_ok and s.continuity_ok and s.prop2_ok is not False)]

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tolerance": self.tolerance,
            "slack_budget": self.slack_budget,
            "coercivity_pass_fraction": self.fraction("coercivity_ok"),
            "continuity_pass_fraction": self.fraction("continuity_ok"),
            "young_pass_fraction": self.fraction("young_ok"),
            "prop2_pass_fraction": self.fraction("prop2_ok"),
            "samples": [asdict(s) for s in self.samples],
        }


def young_lower_bound(xi, q, ops: FeOperators, cert: ProofCertificate) -> float:
    """Right side of the Young-split estimate for the chosen k1, k2."""
    xi = np.asarray(xi, dtype=float)
    xbar = mean_value(ops, xi)
    fl = xi - xbar
    e0 = float(fl @ (ops.M @ fl))
    s = cert.mean_curvature_mean * xbar + q
    f, f2, area = cert.fluctuation_norm, cert.fluctuation_square_norm, cert.total_area
    lead = 1 - cert.k1 * f**2 / (2 * area) - (cert.k2 * _safe_ratio(f2**2, 2 * f**2) if f > 0 else 0.0)
    return lead * e0 + cert.k1 * area / 2 * s**2 + cert.k2 * f**2 / 2 * xbar**2


def check_bounds(pairs, mesh: TriMesh, geometry: GeometryData, ops: FeOperators,
                 certificate: ProofCertificate, tol: float = BOUND_TOL,
                 prop2: bool = True) -> BoundReport:
    """Check coercivity, continuity and (for q = 0) the b-only bound on each (xi, q).

    ``pairs`` is an iterable of ``(xi, q)``.  Zero pairs pass vacuously.
    """
    out = []
    A, B, C = certificate.A, certificate.B, certificate.C
    for idx, (xi, q) in enumerate(pairs):
        xi = np.asarray(xi, dtype=float)
        q = float(q)
        nrm = ops.multiplier_norm(xi, q)
        pf = construct_proof_field(xi, q, mesh, geometry, ops, certificate)
        cval = proof_form(xi, q, pf, mesh, geometry, ops)
        vnorm = ops.velocity_norm(pf.v)
        young = young_lower_bound(xi, q, ops, certificate)
        lower = A * (1 - tol) * nrm**2
        upper = B * (1 + tol) * nrm
        scale = max(nrm**2, 1e-300)
        sample = BoundSample(
            index=idx, multiplier_norm=nrm, c_value=cval, coercivity_lower=lower,
            young_lower=young, velocity_norm=vnorm, continuity_upper=upper,
            coercivity_ok=bool(cval >= lower - 1e-12 * scale),
            continuity_ok=bool(vnorm <= upper + 1e-12 * max(nrm, 1e-300)),
            young_ok=bool(young * (1 - tol) <= cval + 1e-12 * scale),
            realized_coercivity=cval / nrm**2 if nrm > 0 else 0.0,
            realized_continuity=vnorm / nrm if nrm > 0 else 0.0,
        )
        if prop2:
            pf0 = pf if q == 0 else construct_proof_field(xi, 0.0, mesh, geometry, ops, certificate)
            bval = proof_form(xi, 0.0, pf0, mesh, geometry, ops)
            l2 = float(xi @ (ops.M @ xi))
            sample.b_value = bval
            sample.prop2_lower = C * (1 - tol) * l2
            sample.prop2_ok = bool(bval >= sample.prop2_lower - 1e-12 * max(l2, 1e-300))
        out.append(sample)
    return BoundReport(samples=out, tolerance=tol)


def random_pairs(ops: FeOperators, count: int, seed: int = 0, smoothing: int = 1):
    """Seeded (xi, q) pairs normalised to unit multiplier norm.

    xi is white noise smoothed ``smoothing`` times plus a random constant, so
    both fluctuation and mean parts are exercised.
    """
    rng = np.random.default_rng(seed)
    ell = ops.length_scale
    smoother = splu((ops.M + ell**2 * ops.K).tocsc()) if smoothing else None
    pairs = []
    for _ in range(count):
        xi = rng.standard_normal(ops.n_vertices)
        for _ in range(smoothing):
            xi = smoother.solve(ops.M @ xi)
        xi = xi / np.sqrt(xi @ (ops.M @ xi) / ops.total_area) + rng.standard_normal()
        q = rng.standard_normal() / ell**2
        nrm = ops.multiplier_norm(xi, q)
        pairs.append((xi / nrm, q / nrm))
    return pairs
