"""Closed triangulated surfaces: generation, refinement and validation.

Sphere and ellipsoid meshes come from recursive midpoint subdivision of an
icosahedron; the torus is a structured parametric grid.  Vertices of analytic
kinds always lie on the exact surface, new vertices created by refinement
are projected back onto it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, GeometryError, ParameterError

SURFACE_KINDS = ("sphere", "ellipsoid", "torus", "file")
DEFAULT_MAX_VERTICES = 400_000
DEFAULT_PARAMS = {
    "sphere": (1.0,),
    "ellipsoid": (2.0, 1.0, 1.0),
    "torus": (1.0, 0.4),
    "file": (),
}


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Closed, consistently oriented triangle mesh.

    Attributes
    ----------
    vertices : (V, 3) float array
    faces : (F, 3) int array, counter-clockwise seen from outside
    kind : one of ``SURFACE_KINDS``
    params : shape parameters (radius | semi-axes | major, minor radius)
    level : refinement depth
    """

    vertices: np.ndarray
    faces: np.ndarray
    kind: str = "file"
    params: tuple = ()
    level: int = 0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        f = np.ascontiguousarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ParameterError("vertices must have shape (V, 3)")
        if f.ndim != 2 or f.shape[1] != 3:
            raise ParameterError("faces must have shape (F, 3)")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ParameterError("face index out of range")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted pairs, (E, 2)."""
        if "edges" not in self._cache:
            e, inv = self._edge_index()
            self._cache["edges"] = e
            self._cache["face_edges"] = inv
        return self._cache["edges"]

    @property
    def face_edges(self) -> np.ndarray:
        """Edge ids of each face, columns ordered (01, 12, 20)."""
        self.edges
        return self._cache["face_edges"]

    def _edge_index(self):
        f = self.faces
        half = np.stack([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]], axis=1)
        half = np.sort(half.reshape(-1, 2), axis=1)
        e, inv = np.unique(half, axis=0, return_inverse=True)
        return e, inv.reshape(-1, 3)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces

    def face_normals(self, unit=True) -> np.ndarray:
        x = self.vertices[self.faces]
        c = np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
        if not unit:
            return c
        return c / np.linalg.norm(c, axis=1)[:, None]

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_normals(unit=False), axis=1)

    def area(self) -> float:
        return float(self.face_areas().sum())

    def volume(self) -> float:
        x = self.vertices[self.faces]
        return float(np.einsum("ij,ij->i", x[:, 0], np.cross(x[:, 1], x[:, 2])).sum() / 6.0)

    def face_diameters(self) -> np.ndarray:
        """h_K: longest edge of each face."""
        x = self.vertices[self.faces]
        lengths = np.stack(
            [
                np.linalg.norm(x[:, 1] - x[:, 0], axis=1),
                np.linalg.norm(x[:, 2] - x[:, 1], axis=1),
                np.linalg.norm(x[:, 0] - x[:, 2], axis=1),
            ],
            axis=1,
        )
        return lengths.max(axis=1)

    @property
    def h(self) -> float:
        return float(self.face_diameters().max())

    def flipped(self) -> "TriMesh":
        return TriMesh(self.vertices, self.faces[:, ::-1], self.kind, self.params, self.level)

    def validate(self) -> None:
        """Raise GeometryError unless the mesh is closed, oriented and non-degenerate."""
        f = self.faces
        directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        _, counts = np.unique(directed, axis=0, return_counts=True)
        if np.any(counts != 1):
            raise GeometryError("inconsistent orientation or non-manifold edge")
        undirected = np.sort(directed, axis=1)
        _, counts = np.unique(undirected, axis=0, return_counts=True)
        if np.any(counts != 2):
            raise GeometryError("mesh is not closed: edge not shared by exactly two faces")
        areas = self.face_areas()
        bad = np.flatnonzero(areas <= 0)
        if bad.size:
            raise GeometryError(f"face {bad[0]} has zero area", face=bad[0])


def _check_params(kind, params):
    if kind not in SURFACE_KINDS:
        raise ParameterError(f"unknown surface kind {kind!r}")
    p = tuple(float(x) for x in (DEFAULT_PARAMS[kind] if params is None else params))
    if kind == "sphere":
        if len(p) != 1 or not p[0] > 0:
            raise ParameterError("sphere needs one positive radius")
    elif kind == "ellipsoid":
        if len(p) != 3 or not all(a > 0 for a in p):
            raise ParameterError("ellipsoid needs three positive semi-axes")
    elif kind == "torus":
        if len(p) != 2 or not (p[0] > p[1] > 0):
            raise ParameterError("torus needs major radius > minor radius > 0")
    return p


def project(kind: str, params: tuple, points: np.ndarray) -> np.ndarray:
    """Map points onto the analytic surface (identity for ``file`` meshes)."""
    points = np.asarray(points, dtype=float)
    if kind == "sphere":
        return params[0] * points / np.linalg.norm(points, axis=1)[:, None]
    if kind == "ellipsoid":
        axes = np.asarray(params)
        y = points / axes
        return axes * (y / np.linalg.norm(y, axis=1)[:, None])
    if kind == "torus":
        major, minor = params
        rho = np.hypot(points[:, 0], points[:, 1])
        ring = np.column_stack(
            [major * points[:, 0] / rho, major * points[:, 1] / rho, np.zeros(len(points))]
        )
        d = points - ring
        return ring + minor * d / np.linalg.norm(d, axis=1)[:, None]
    return points


def _icosahedron():
    t = (1.0 + 5.0**0.5) / 2.0
    v = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=float,
    )
    v /= np.linalg.norm(v, axis=1)[:, None]
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ]
    )
    return v, _orient_outward(v, f)


def _orient_outward(v, f):
    # valid for star-shaped surfaces around the origin
    x = v[f]
    c = np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
    inward = np.einsum("ij,ij->i", c, x.mean(axis=1)) < 0
    f = f.copy()
    f[inward] = f[inward][:, ::-1]
    return f


def _subdivide(vertices, faces):
    """1-to-4 midpoint split; returns new vertices (unprojected) and faces."""
    half = np.stack([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]], axis=1)
    half = np.sort(half.reshape(-1, 2), axis=1)
    edges, inv = np.unique(half, axis=0, return_inverse=True)
    inv = inv.reshape(-1, 3) + len(vertices)
    mid = 0.5 * (vertices[edges[:, 0]] + vertices[edges[:, 1]])
    a, b, c = faces.T
    ab, bc, ca = inv.T
    new_faces = np.concatenate(
        [
            np.column_stack([a, ab, ca]),
            np.column_stack([b, bc, ab]),
            np.column_stack([c, ca, bc]),
            np.column_stack([ab, bc, ca]),
        ]
    )
    return np.vstack([vertices, mid]), new_faces, len(vertices)


def _torus_grid(major, minor, level):
    nu = 16 * 2**level
    nv = max(6, int(np.ceil(16 * minor / major))) * 2**level
    u = 2 * np.pi * np.arange(nu) / nu
    w = 2 * np.pi * np.arange(nv) / nv
    uu, ww = np.meshgrid(u, w, indexing="ij")
    rho = major + minor * np.cos(ww)
    v = np.column_stack(
        [(rho * np.cos(uu)).ravel(), (rho * np.sin(uu)).ravel(), (minor * np.sin(ww)).ravel()]
    )
    i, j = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
    i, j = i.ravel(), j.ravel()
    p00 = i * nv + j
    p10 = ((i + 1) % nu) * nv + j
    p11 = ((i + 1) % nu) * nv + (j + 1) % nv
    p01 = i * nv + (j + 1) % nv
    # (u, v) parametrisation has outward r_u x r_v
    f = np.concatenate([np.column_stack([p00, p10, p11]), np.column_stack([p00, p11, p01])])
    return v, f


def generate_surface(kind: str, params=None, level: int = 0,
                     max_vertices: int = DEFAULT_MAX_VERTICES) -> TriMesh:
    """Build an analytic test surface at a given refinement level.

    ``params`` defaults per kind: sphere radius 1, ellipsoid axes (2, 1, 1),
    torus radii (1, 0.4).
    """
    if kind == "file":
        raise ParameterError("file meshes are loaded, not generated")
    params = _check_params(kind, params)
    if int(level) != level or level < 0:
        raise ParameterError("level must be a nonnegative integer")
    level = int(level)
    if kind == "torus":
        nu = 16 * 2**level
        nv = max(6, int(np.ceil(16 * params[1] / params[0]))) * 2**level
        if nu * nv > max_vertices:
            raise CapacityError(f"torus level {level} needs {nu * nv} vertices > cap {max_vertices}")
        v, f = _torus_grid(params[0], params[1], level)
        return TriMesh(v, f, kind, params, level)
    if 10 * 4**level + 2 > max_vertices:
        raise CapacityError(
            f"level {level} needs {10 * 4**level + 2} vertices > cap {max_vertices}"
        )
    v, f = _icosahedron()
    for _ in range(level):
        v, f, _ = _subdivide(v, f)
        v = v / np.linalg.norm(v, axis=1)[:, None]
    if kind == "sphere":
        v = params[0] * v
    else:
        v = v * np.asarray(params)
    return TriMesh(v, f, kind, params, level)


def refine(mesh: TriMesh, max_vertices: int = DEFAULT_MAX_VERTICES) -> TriMesh:
    """Split every face into four; new vertices go back onto analytic surfaces."""
    if mesh.n_vertices + mesh.n_edges > max_vertices:
        raise CapacityError(
            f"refinement needs {mesh.n_vertices + mesh.n_edges} vertices > cap {max_vertices}"
        )
    v, f, first_new = _subdivide(mesh.vertices, mesh.faces)
    if mesh.kind != "file":
        v[first_new:] = project(mesh.kind, mesh.params, v[first_new:])
    return TriMesh(v, f, mesh.kind, mesh.params, mesh.level + 1)


def from_arrays(vertices, faces) -> TriMesh:
    mesh = TriMesh(vertices, faces, "file", (), 0)
    mesh.validate()
    return mesh
