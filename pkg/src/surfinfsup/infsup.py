"""Discrete inf-sup constants as extremal generalized eigenvalues.

For a constraint operator ``C`` (rows of b, optionally the volume row g^T),
velocity norm matrix ``M_X`` and multiplier norm ``N`` the discrete inf-sup
constant is sqrt(lambda_min) of

    (C M_X^{-1} C^T + delta^2 S) w = lambda N w.

Small problems are solved densely; larger ones by shift-invert Lanczos where
the shifted operator is inverted through the equivalent sparse saddle system.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, LinearOperator, eigsh, splu

from .assembly import FeOperators, FeSpace, apply_constraint, assemble, plain_norm_matrix
from .errors import ConfigurationError, SolverError, SurfInfSupError
from .geometry import GeometryData, compute_geometry
from .linalg import LowRankUpdated, m_angle, orthonormal_complement
from .mesh import generate_surface

FORMS = ("b-only", "c-full")
DENSE_THRESHOLD = 800
ZERO_RATIO = 1e-10
RESIDUAL_TOL = 1e-8
# eigenvector counts as a declared kernel mode below this N-angle (degrees)
KERNEL_ANGLE = 1e-3


@dataclass(frozen=True)
class InfSupProblem:
    """Which discrete inf-sup constant to compute.

    ``declared_kernel`` lists kernel modes the caller expects and that may be
    excluded when numerically zero: ``"constants"`` and/or ``"sphere-pair"``
    (the pair (xi, q) = (-1, Hbar)).  ``expose_kernel`` permits the otherwise
    rejected tangential-velocity / full-L2 combination.
    """

    form: str = "b-only"
    velocity_constraint: str = "none"
    multiplier_space: str = "L2"
    multiplier_norm: str = "plain"
    stabilization_weight: float = 0.0
    declared_kernel: tuple = ()
    expose_kernel: bool = False
    dense_threshold: int = DENSE_THRESHOLD
    n_eigs: int = 4

    def __post_init__(self):
        if self.form not in FORMS:
            raise ConfigurationError(f"unknown form {self.form!r}")
        if self.velocity_constraint not in ("none", "tangential"):
            raise ConfigurationError(f"unknown velocity constraint {self.velocity_constraint!r}")
        if self.multiplier_space not in ("L2", "L2_0"):
            raise ConfigurationError(f"unknown multiplier space {self.multiplier_space!r}")
        if self.multiplier_norm not in ("plain", "lemma"):
            raise ConfigurationError(f"unknown multiplier norm {self.multiplier_norm!r}")
        if self.multiplier_norm == "lemma" and self.form != "c-full":
            raise ConfigurationError("the (xi, q) norm needs the c-full form")
        if (self.velocity_constraint == "tangential" and self.multiplier_space != "L2_0"
                and not self.expose_kernel):
            raise ConfigurationError("tangential velocities require a zero-mean multiplier space")
        if not self.stabilization_weight >= 0:
            raise ConfigurationError("stabilization weight must be >= 0")
        if self.n_eigs < 4:
            raise ConfigurationError("n_eigs must be at least 4")
        for k in self.declared_kernel:
            if k not in ("constants", "sphere-pair"):
                raise ConfigurationError(f"unknown kernel mode {k!r}")

    @property
    def has_q(self) -> bool:
        return self.form == "c-full"

    def with_weight(self, delta: float) -> "InfSupProblem":
        d = asdict(self)
        d["stabilization_weight"] = float(delta)
        return InfSupProblem(**d)

    @classmethod
    def preset(cls, name: str, **kw) -> "InfSupProblem":
        """Settings of the four stability results: tangential, b-only, c-full, stabilized."""
        presets = {
            "tangential": dict(form="b-only", velocity_constraint="tangential",
                               multiplier_space="L2_0"),
            "b-only": dict(form="b-only"),
            "c-full": dict(form="c-full", multiplier_norm="lemma"),
            "stabilized": dict(form="c-full", multiplier_norm="lemma", stabilization_weight=1.0),
        }
        if name not in presets:
            raise ConfigurationError(f"unknown preset {name!r}")
        return cls(**{**presets[name], **kw})


@dataclass
class SpectrumResult:
    constant: float
    eigenvalue: float
    eigenvector: np.ndarray
    next_eigenvalues: list
    h: float
    residual: float
    iterations: int
    method: str
    dof_v: int
    dof_q: int
    kernel_dim: int = 0
    kernel_vectors: list = field(default_factory=list)
    lambda_max: float = float("nan")
    null_mode_angle: float | None = None
    has_q: bool = False

    @property
    def xi(self) -> np.ndarray:
        return self.eigenvector[: self.dof_q - 1] if self.has_q else self.eigenvector

    def summary(self) -> dict:
        return {
            "constant": self.constant,
            "eigenvalue": self.eigenvalue,
            "next_eigenvalues": [float(x) for x in self.next_eigenvalues],
            "h": self.h,
            "residual": self.residual,
            "iterations": self.iterations,
            "method": self.method,
            "dof_v": self.dof_v,
            "dof_q": self.dof_q,
            "kernel_dim": self.kernel_dim,
            "lambda_max": self.lambda_max,
            "null_mode_angle": self.null_mode_angle,
        }


class Pencil:
    """The pair (Schur + delta^2 S, N) for one problem, with optional zero-mean deflation."""

    def __init__(self, problem: InfSupProblem, ops: FeOperators, geometry: GeometryData):
        self.problem = problem
        vspace = FeSpace("vector", ops.n_vertices, problem.velocity_constraint)
        mspace = FeSpace("scalar", ops.n_vertices,
                         "zero-mean" if problem.multiplier_space == "L2_0" else "none")
        con = apply_constraint(ops, geometry, vspace, mspace)
        self.constrained = con
        if problem.has_q:
            self.C = sp.vstack([con.B_form, sp.csr_matrix(con.g_vec.reshape(1, -1))]).tocsr()
        else:
            self.C = con.B_form.tocsr()
        self.M_X = con.M_X.tocsc()
        ell = ops.length_scale
        if problem.multiplier_norm == "lemma":
            self.N = ops.N
        else:
            self.N = plain_norm_matrix(ops.M, ell, with_q=problem.has_q)
        n = self.C.shape[0]
        S = ops.S if problem.has_q is False else sp.block_diag([ops.S, sp.csr_matrix((1, 1))])
        self.S = (problem.stabilization_weight**2) * sp.csr_matrix(S)
        self.mean_weights = None
        if con.mean_weights is not None:
            self.mean_weights = np.zeros(n)
            self.mean_weights[: ops.n_vertices] = con.mean_weights
        self.n = n
        self.dof_v = self.M_X.shape[0]
        self.geometry = geometry
        self.ops = ops
        self._mx_lu = None

    @property
    def reduced_size(self) -> int:
        return self.n - (1 if self.mean_weights is not None else 0)

    def mx_solve(self, rhs):
        if self._mx_lu is None:
            try:
                self._mx_lu = splu(self.M_X)
            except RuntimeError as exc:
                raise SolverError(f"velocity norm matrix singular: {exc}") from exc
        return self._mx_lu.solve(rhs)

    def apply(self, w):
        """(Schur + delta^2 S) w."""
        w = np.asarray(w, dtype=float)
        return self.C @ self.mx_solve(self.C.T @ w) + self.S @ w

    def dense(self):
        X = self.mx_solve(self.C.T.toarray())
        A = self.C @ X
        A = 0.5 * (A + A.T) + self.S.toarray()
        return A, self.N.toarray()

    def rayleigh(self, w) -> float:
        w = np.asarray(w, dtype=float)
        return float(w @ self.apply(w)) / self.N.quad(w)


def smallest_generalized(A, N, n_eigs=4, deflate=None):
    """Dense generalized eigen-solve; returns ascending eigenvalues, vectors, lambda_max.

    ``deflate`` (vector m) restricts to {m . w = 0}.
    """
    Z = None
    if deflate is not None:
        Z = orthonormal_complement(deflate)
        A = Z.T @ A @ Z
        N = Z.T @ N @ Z
    try:
        lam, vec = la.eigh(A, N, check_finite=False)
    except la.LinAlgError as exc:
        raise SolverError(f"dense generalized eigensolve failed: {exc}") from exc
    lam_max = float(lam[-1])
    lam, vec = lam[: n_eigs + 2], vec[:, : n_eigs + 2]
    if Z is not None:
        vec = Z @ vec
    return lam, vec, lam_max


def _sparse_smallest(pencil: Pencil, n_eigs: int):
    p = pencil
    n, nv = p.n, p.dof_v
    N = p.N
    # shift below the spectrum: A - sigma N is then positive definite
    sigma = -1e-2 / p.ops.length_scale**2
    blocks = [[p.M_X, p.C.T], [p.C, -p.S + sigma * N.base]]
    U = np.vstack([np.zeros((nv, N.U.shape[1])), N.U])
    extra = 0
    if p.mean_weights is not None:
        m = sp.csr_matrix(p.mean_weights.reshape(-1, 1))
        K = sp.bmat([[p.M_X, p.C.T, None], [p.C, -p.S + sigma * N.base, m], [None, m.T, None]])
        U = np.vstack([U, np.zeros((1, U.shape[1]))])
        extra = 1
    else:
        K = sp.bmat(blocks)
    saddle = LowRankUpdated(K.tocsc(), U, sigma * N.D)
    counter = {"solves": 0}

    def opinv(r):
        counter["solves"] += 1
        rhs = np.concatenate([np.zeros(nv), -np.ravel(r), np.zeros(extra)])
        return saddle.solve(rhs)[nv:nv + n]

    Aop = LinearOperator((n, n), matvec=p.apply, dtype=float)
    Nop = N.as_operator()
    Op = LinearOperator((n, n), matvec=opinv, dtype=float)
    k = min(n_eigs + 2, n - 2)
    rng = np.random.default_rng(0)
    v0 = rng.standard_normal(n)
    if p.mean_weights is not None:
        v0 -= p.mean_weights * (p.mean_weights @ v0) / (p.mean_weights @ p.mean_weights)
    try:
        lam, vec = eigsh(Aop, k=k, M=Nop, sigma=sigma, which="LM", OPinv=Op, tol=1e-12, v0=v0,
                         maxiter=50 * n)
    except (ArpackNoConvergence, ArpackError) as exc:
        raise SolverError("shift-invert Lanczos did not converge",
                          diagnostics={"solves": counter["solves"], "message": str(exc)}) from exc
    order = np.argsort(lam)
    lam, vec = lam[order], vec[:, order]
    # lambda_max by plain Lanczos on N^{-1} A
    Ninv = LinearOperator((n, n), matvec=N.solve, dtype=float)
    try:
        top = eigsh(Aop, k=1, M=Nop, Minv=Ninv, which="LA", tol=1e-3, return_eigenvectors=False,
                    v0=v0)
        lam_max = float(top[0])
    except (ArpackNoConvergence, ArpackError):
        lam_max = float("nan")
    return lam, vec, lam_max, counter["solves"]


def _kernel_candidates(problem: InfSupProblem, pencil: Pencil):
    n_v = pencil.ops.n_vertices
    cands = []
    if "constants" in problem.declared_kernel:
        c = np.zeros(pencil.n)
        c[:n_v] = 1.0
        cands.append(c)
    if "sphere-pair" in problem.declared_kernel and problem.has_q:
        c = np.append(-np.ones(n_v), pencil.ops.mean_curvature_mean)
        cands.append(c)
    return cands


def null_pair(ops: FeOperators) -> np.ndarray:
    """The sphere null candidate (xi, q) = (-1, Hbar_h)."""
    return np.append(-np.ones(ops.n_vertices), ops.mean_curvature_mean)


def infsup_constant(problem: InfSupProblem, ops: FeOperators, geometry: GeometryData,
                    h: float | None = None) -> SpectrumResult:
    """Inf-sup constant sqrt(lambda_min) for ``problem`` on assembled operators."""
    pencil = Pencil(problem, ops, geometry)
    n_eigs = problem.n_eigs
    if pencil.reduced_size <= problem.dense_threshold:
        A, N = pencil.dense()
        lam, vec, lam_max = smallest_generalized(A, N, n_eigs, deflate=pencil.mean_weights)
        method, iters = "dense", 0
    else:
        lam, vec, lam_max, iters = _sparse_smallest(pencil, n_eigs)
        method = "shift-invert"

    scale = lam_max if np.isfinite(lam_max) and lam_max > 0 else float(np.max(np.abs(lam)))
    zero_tol = ZERO_RATIO * scale
    cands = _kernel_candidates(problem, pencil)
    kernel, keep = [], []
    for j in range(len(lam)):
        w = vec[:, j]
        is_declared = any(m_angle(w, c, pencil.N) <= KERNEL_ANGLE for c in cands)
        if lam[j] < zero_tol and is_declared:
            kernel.append(w)
        else:
            keep.append(j)
    if not keep:
        raise SolverError("no eigenvalue left after kernel exclusion",
                          diagnostics={"eigenvalues": lam.tolist()})
    j0 = keep[0]
    w = vec[:, j0]
    w = w / np.sqrt(pencil.N.quad(w))
    lam0 = float(lam[j0])
    r = pencil.apply(w) - lam0 * pencil.N.dot(w)
    if pencil.mean_weights is not None:
        m = pencil.mean_weights
        # residual of the restricted problem: remove the multiplier direction
        Zr = r - m * (m @ r) / (m @ m)
        r = Zr
    residual = float(np.linalg.norm(r) / max(np.linalg.norm(pencil.N.dot(w)), 1e-300))
    if residual > RESIDUAL_TOL:
        raise SolverError(f"eigen-residual {residual:.2e} above {RESIDUAL_TOL:.0e}",
                          diagnostics={"residual": residual, "method": method})
    # fix the sign convention: largest |component| positive
    if w[np.argmax(np.abs(w))] < 0:
        w = -w
    angle = None
    if problem.has_q:
        angle = m_angle(w, null_pair(ops), pencil.N)
    res = SpectrumResult(
        constant=float(np.sqrt(max(lam0, 0.0))),
        eigenvalue=lam0,
        eigenvector=w,
        next_eigenvalues=[float(x) for x in lam[keep[1:4]]],
        h=float(ops.h if h is None else h),
        residual=residual,
        iterations=int(iters),
        method=method,
        dof_v=int(pencil.dof_v),
        dof_q=int(pencil.n),
        kernel_dim=len(kernel),
        kernel_vectors=kernel,
        lambda_max=float(lam_max),
        null_mode_angle=angle,
        has_q=problem.has_q,
    )
    return res


def stabilized_infsup(problem: InfSupProblem, ops: FeOperators, geometry: GeometryData,
                      h: float | None = None) -> SpectrumResult:
    """Modified inf-sup constant sqrt(sup^2 + delta^2 * stab^2) (quadratic form of the sum).

    The multiplier space is P1, hence continuous, as the modified condition
    requires.  With zero weight this is exactly ``infsup_constant``.
    """
    return infsup_constant(problem, ops, geometry, h)


def rayleigh_quotient(problem: InfSupProblem, ops: FeOperators, geometry: GeometryData, w) -> float:
    return Pencil(problem, ops, geometry).rayleigh(w)


# ------------------------------------------------------------------ sweeps

TABLE_COLUMNS = ("level", "h", "dof_v", "dof_q", "constant", "kernel_dim", "residual")


@dataclass
class ConvergenceTable:
    rows: list
    header: dict = field(default_factory=dict)
    results: list = field(default_factory=list)

    @property
    def constants(self) -> np.ndarray:
        return np.array([r["constant"] for r in self.rows], dtype=float)

    @property
    def h(self) -> np.ndarray:
        return np.array([r["h"] for r in self.rows], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        for k, v in self.header.items():
            buf.write(f"# {k}: {v}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TABLE_COLUMNS + ("status",))
        for r in self.rows:
            writer.writerow([_fmt(r[c]) for c in TABLE_COLUMNS] + [r.get("status", "ok")])
        return buf.getvalue()

    def to_json(self) -> str:
        payload = {"schema": 1, "header": self.header, "rows": self.rows}
        return json.dumps(payload, indent=2, sort_keys=True, default=_json_default)


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return x


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(f"not serializable: {type(x)}")


def h_sweep(problem: InfSupProblem, kind: str, params=None, levels=(2, 3, 4), ell=None,
            header: dict | None = None) -> ConvergenceTable:
    """One inf-sup solve per refinement level; failed levels are marked, not raised."""
    levels = list(levels)
    if not levels:
        raise ConfigurationError("levels must be nonempty")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ConfigurationError("levels must be strictly increasing")
    rows, results = [], []
    for level in levels:
        mesh = generate_surface(kind, params, level)
        try:
            geom = compute_geometry(mesh, ell)
            ops = assemble(mesh, geom, ell)
            res = infsup_constant(problem, ops, geom)
            rows.append({"level": level, "h": mesh.h, "dof_v": res.dof_v, "dof_q": res.dof_q,
                         "constant": res.constant, "kernel_dim": res.kernel_dim,
                         "residual": res.residual, "status": "ok"})
            results.append(res)
        except SurfInfSupError as exc:
            rows.append({"level": level, "h": mesh.h, "dof_v": 0, "dof_q": 0,
                         "constant": float("nan"), "kernel_dim": 0, "residual": float("nan"),
                         "status": f"failed: {exc.kind}"})
            results.append(exc)
    return ConvergenceTable(rows=rows, header=dict(header or {}), results=results)
