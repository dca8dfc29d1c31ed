import numpy as np
import pytest

from surfinfsup.errors import GeometryError
from surfinfsup.geometry import compute_geometry, p1_quartic_integral
from surfinfsup.mesh import TriMesh, generate_surface


def ellipsoid_mean_curvature_oracle(axes, n_theta=200, n_phi=400):
    """(1/|Gamma|) int H and |Gamma| from Gauss-Legendre in cos(theta), uniform in phi.

    H comes from the implicit form F = sum x_i^2 / a_i^2:
    H = (|grad F|^2 tr Hess F - grad F^T Hess F grad F) / |grad F|^3.
    """
    a = np.asarray(axes, dtype=float)
    t, w = np.polynomial.legendre.leggauss(n_theta)  # t = cos(theta)
    phi = (np.arange(n_phi) + 0.5) * 2 * np.pi / n_phi
    T, P = np.meshgrid(t, phi, indexing="ij")
    S = np.sqrt(1 - T**2)
    x = np.stack([a[0] * S * np.cos(P), a[1] * S * np.sin(P), a[2] * T], axis=-1)
    # derivatives w.r.t. t = cos(theta) and phi
    dx_dt = np.stack([-a[0] * T / S * np.cos(P), -a[1] * T / S * np.sin(P),
                      a[2] * np.ones_like(T)], axis=-1)
    dx_dp = np.stack([-a[0] * S * np.sin(P), a[1] * S * np.cos(P), np.zeros_like(T)], axis=-1)
    dA = np.linalg.norm(np.cross(dx_dt, dx_dp), axis=-1)
    grad = 2 * x / a**2
    hess = 2 / a**2
    g2 = np.sum(grad**2, axis=-1)
    H = (g2 * hess.sum() - np.sum(grad**2 * hess, axis=-1)) / g2**1.5
    weights = w[:, None] * (2 * np.pi / n_phi) * dA
    area = weights.sum()
    return float((H * weights).sum() / area), float(area)


def test_oracle_self_check():
    Hbar, area = ellipsoid_mean_curvature_oracle((1, 1, 1))
    assert np.isclose(Hbar, 2.0, rtol=1e-10) and np.isclose(area, 4 * np.pi, rtol=1e-10)
    # prolate spheroid closed-form area
    e = np.sqrt(1 - 1 / 4)
    exact = 2 * np.pi * (1 + 2 / e * np.arcsin(e))
    assert np.isclose(ellipsoid_mean_curvature_oracle((2, 1, 1))[1], exact, rtol=1e-8)


def test_ellipsoid_mean_curvature_mean_matches_quadrature(setup):
    _, geom, _ = setup("ellipsoid", 4)
    Hbar, _ = ellipsoid_mean_curvature_oracle((2, 1, 1))
    assert abs(geom.mean_curvature_mean - Hbar) / Hbar < 0.01


def test_unit_sphere_curvature_level4(setup):
    _, geom, _ = setup("sphere", 4)
    assert np.max(np.abs(geom.mean_curvature - 2.0)) / 2.0 < 0.02


def test_normals_are_unit(setup):
    for kind in ("sphere", "ellipsoid", "torus"):
        _, geom, _ = setup(kind, 2)
        assert np.allclose(np.linalg.norm(geom.vertex_normals, axis=1), 1.0, atol=1e-12)


def test_normals_point_outward(setup):
    mesh, geom, _ = setup("ellipsoid", 2)
    assert np.all(np.einsum("ij,ij->i", geom.vertex_normals, mesh.vertices) > 0)


def test_sphere_fluctuation_vanishes():
    for level in (2, 3, 4, 5):
        geom = compute_geometry(generate_surface("sphere", level=level))
        assert geom.curvature_fluctuation_norm <= 1e-10


def test_ellipsoid_max_error_strictly_decreasing():
    a = np.array([2.0, 1.0, 1.0])
    errs = []
    for level in (2, 3, 4, 5):
        mesh = generate_surface("ellipsoid", tuple(a), level)
        geom = compute_geometry(mesh)
        x = mesh.vertices
        grad = 2 * x / a**2
        hess = 2 / a**2
        g2 = np.sum(grad**2, axis=1)
        exact = (g2 * hess.sum() - np.sum(grad**2 * hess, axis=1)) / g2**1.5
        errs.append(np.max(np.abs(geom.mean_curvature - exact)))
    assert all(b < a for a, b in zip(errs, errs[1:])), errs


def test_fluctuation_identity(setup):
    for kind in ("ellipsoid", "torus"):
        _, geom, ops = setup(kind, 2)
        H = geom.mean_curvature
        lhs = geom.curvature_fluctuation_norm**2
        rhs = H @ (ops.M @ H) - geom.total_area * geom.mean_curvature_mean**2
        assert np.isclose(lhs, rhs, rtol=1e-10)
        assert lhs >= 0


def test_total_area_is_sum_of_faces(setup):
    mesh, geom, _ = setup("torus", 1)
    assert geom.total_area == float(mesh.face_areas().sum())


def test_torus_mean_curvature_mean(setup):
    # int H dA = 4 pi^2 R and |Gamma| = 4 pi^2 R r, so Hbar = 1/r
    _, geom, _ = setup("torus", 3)
    assert abs(geom.mean_curvature_mean - 2.5) / 2.5 < 0.01


def test_flipped_orientation_negates_curvature():
    mesh = generate_surface("ellipsoid", level=2)
    a = compute_geometry(mesh)
    b = compute_geometry(mesh.flipped())
    assert np.allclose(b.mean_curvature, -a.mean_curvature, atol=1e-12)
    assert np.allclose(b.vertex_normals, -a.vertex_normals, atol=1e-12)


def test_scaled_sphere():
    mesh = generate_surface("sphere", (2.0,), 3)
    geom = compute_geometry(mesh)
    assert np.allclose(geom.mean_curvature, 1.0, atol=1e-10)
    assert np.isclose(geom.length_scale, np.sqrt(geom.total_area / (4 * np.pi)))


def test_explicit_length_scale():
    geom = compute_geometry(generate_surface("sphere", level=1), length_scale=3.0)
    assert geom.length_scale == 3.0
    with pytest.raises(GeometryError):
        compute_geometry(generate_surface("sphere", level=1), length_scale=-1.0)


def test_degenerate_face_is_named():
    mesh = generate_surface("sphere", level=1)
    v = mesh.vertices.copy()
    i, j, k = mesh.faces[7]
    v[k] = 0.5 * (v[i] + v[j])  # collapse face 7
    bad = TriMesh(v, mesh.faces, "file", (), 0)
    with pytest.raises(GeometryError) as info:
        compute_geometry(bad)
    assert info.value.face is not None
    assert "degenerate face" in str(info.value)


def test_quartic_integral_exact():
    sympy = pytest.importorskip("sympy")
    s, t = sympy.symbols("s t")
    mesh = generate_surface("sphere", level=0)
    areas = mesh.face_areas()
    vals = np.arange(mesh.n_vertices, dtype=float) * 0.1 - 0.3
    expected = 0.0
    for k in range(3):  # a few faces, exact symbolic integral on the reference triangle
        d = [sympy.Rational(str(round(x, 10))) for x in vals[mesh.faces[k]]]
        f = (d[0] * (1 - s - t) + d[1] * s + d[2] * t) ** 4
        ref = sympy.integrate(sympy.integrate(f, (t, 0, 1 - s)), (s, 0, 1))
        expected += 2 * areas[k] * float(ref)
    sub = TriMesh(mesh.vertices, mesh.faces[:3], "file", (), 0)
    assert np.isclose(p1_quartic_integral(sub, areas[:3], vals), expected, rtol=1e-12)


def test_summary_keys(setup):
    _, geom, _ = setup("sphere", 2)
    s = geom.summary()
    assert s["regularity_order"] == 1
    assert {"total_area", "mean_curvature_mean", "curvature_tensor_sup"} <= set(s)
