import json

import numpy as np
import pytest
import scipy.sparse as sp

from surfinfsup.errors import ConfigurationError, RankDeficiencyError
from surfinfsup.mixed import (MixedProblem, constraint_report, ibp_residual, normal_load,
                              saddle_matrix, smooth_tension, solve_mixed, surface_tension_force,
                              tension_load, translation_load, write_vtk)


def _solve(setup, kind, level, load, formulation="inextensible", **kw):
    mesh, geom, ops = setup(kind, level)
    f = load(mesh, ops) if callable(load) else load
    return solve_mixed(MixedProblem(formulation, f, mesh, geom, ops, **kw))


def _translation(mesh, ops):
    return translation_load(ops, [0.3, -1.0, 2.0])


@pytest.mark.parametrize("formulation", ["inextensible", "inextensible-isochoric"])
def test_rigid_translation_is_exact(setup, formulation):
    mesh, geom, ops = setup("ellipsoid", 2)
    sol = _solve(setup, "ellipsoid", 2, _translation, formulation)
    ell = ops.length_scale
    c = np.array([0.3, -1.0, 2.0])
    assert np.allclose(sol.u, ell**2 * c, atol=1e-12)
    assert np.abs(sol.sigma).max() <= 1e-12
    assert sol.residuals["divergence_l2"] <= 1e-8
    if formulation == "inextensible-isochoric":
        assert abs(sol.p) <= 1e-12


def test_manufactured_tension_converges():
    from conftest import build
    errs, hs = [], []
    for level in (2, 3, 4):
        mesh, geom, ops = build("ellipsoid", level)
        s = smooth_tension(mesh, ops)
        sol = solve_mixed(MixedProblem("inextensible", tension_load(ops, s), mesh, geom, ops))
        d = sol.sigma - s
        errs.append(np.sqrt(d @ (ops.M @ d)))
        hs.append(mesh.h)
    orders = np.diff(np.log(errs)) / np.diff(np.log(hs))
    assert np.all(orders >= 1.0), orders


def test_unstabilized_manufactured_tension_is_exact(setup):
    mesh, geom, ops = setup("ellipsoid", 2)
    s = smooth_tension(mesh, ops)
    prob = MixedProblem("inextensible", tension_load(ops, s), mesh, geom, ops,
                        stabilization_weight=0.0, allow_unstable=True, check_rank=False)
    sol = solve_mixed(prob)
    assert np.abs(sol.u).max() <= 1e-8
    assert np.allclose(sol.sigma, s, atol=1e-8)
    assert sol.residuals["divergence_l2"] <= 1e-8


def test_zero_weight_needs_override(setup):
    mesh, geom, ops = setup("ellipsoid", 2)
    with pytest.raises(RankDeficiencyError) as info:
        solve_mixed(MixedProblem("inextensible", normal_load(ops), mesh, geom, ops,
                                 stabilization_weight=0.0))
    rec = info.value.record()
    assert rec["error"] == "rank-deficiency"
    assert "null_mode" in rec and "vector" not in rec["null_mode"]


@pytest.mark.parametrize("level", [2, 3])
def test_sphere_isochoric_rank_deficiency(setup, level):
    with pytest.raises(RankDeficiencyError) as info:
        _solve(setup, "sphere", level, lambda m, o: normal_load(o), "inextensible-isochoric")
    mode = info.value.null_mode
    assert mode["angle_to_sphere_pair"] <= 10.0
    assert mode["gap_ratio"] <= 0.05
    assert json.dumps(info.value.record())


@pytest.mark.parametrize("kind", ["ellipsoid", "torus"])
def test_isochoric_solvable_off_sphere(setup, kind):
    mesh, geom, ops = setup(kind, 2)
    sol = _solve(setup, kind, 2, lambda m, o: normal_load(o), "inextensible-isochoric")
    u = sol.u.ravel()
    bound = 1e-8 * np.sqrt(u @ (ops.M_vec @ u)) * np.sqrt(geom.total_area)
    assert abs(sol.residuals["flux"]) <= bound
    assert sol.diagnostics["near_null_dim"] == 0
    assert sol.diagnostics["algebraic_residual"] <= 1e-10


def test_sphere_inextensible_is_solvable(setup):
    sol = _solve(setup, "sphere", 2, lambda m, o: normal_load(o))
    assert sol.diagnostics["near_null_dim"] == 0


@pytest.mark.parametrize("isochoric", [False, True])
def test_saddle_symmetry(setup, isochoric):
    _, _, ops = setup("torus", 2)
    K = saddle_matrix(ops, 1.0, isochoric)
    asym = abs(K - K.T).max() / abs(K).max()
    assert asym <= 1e-12
    n = 4 * ops.n_vertices + (1 if isochoric else 0)
    assert K.shape == (n, n)


def test_inertia_counts(setup):
    mesh, geom, ops = setup("ellipsoid", 2)
    n = ops.n_vertices
    a = _solve(setup, "ellipsoid", 2, lambda m, o: normal_load(o))
    b = _solve(setup, "ellipsoid", 2, lambda m, o: normal_load(o), "inextensible-isochoric")
    assert (a.diagnostics["inertia"]["positive"], a.diagnostics["inertia"]["negative"]) == (3 * n, n)
    assert (b.diagnostics["inertia"]["positive"], b.diagnostics["inertia"]["negative"]) == (3 * n, n + 1)
    assert a.diagnostics["inertia"]["zero"] == b.diagnostics["inertia"]["zero"] == 0


def test_translation_superposition(setup):
    mesh, geom, ops = setup("ellipsoid", 2)
    base = normal_load(ops)
    extra = translation_load(ops, [1.0, 0.5, -0.2])
    s1 = solve_mixed(MixedProblem("inextensible-isochoric", base, mesh, geom, ops))
    s2 = solve_mixed(MixedProblem("inextensible-isochoric", base + extra, mesh, geom, ops))
    shift = ops.length_scale**2 * np.array([1.0, 0.5, -0.2])
    assert np.allclose(s2.u - s1.u, shift, atol=1e-10)
    assert np.allclose(s2.sigma, s1.sigma, atol=1e-10)
    assert np.isclose(s2.p, s1.p, atol=1e-10)


def test_normal_load_divergence_converges():
    from conftest import build
    divs, hs = [], []
    for level in (2, 3, 4):
        mesh, geom, ops = build("ellipsoid", level)
        sol = solve_mixed(MixedProblem("inextensible", normal_load(ops), mesh, geom, ops))
        divs.append(sol.residuals["divergence_l2"])
        hs.append(mesh.h)
    orders = np.diff(np.log(divs)) / np.diff(np.log(hs))
    assert np.all(orders >= 1.0), orders


def test_problem_validation(setup):
    mesh, geom, ops = setup("sphere", 1)
    with pytest.raises(ConfigurationError):
        MixedProblem("stokes", normal_load(ops), mesh, geom, ops)
    with pytest.raises(ConfigurationError):
        MixedProblem("inextensible", np.zeros(5), mesh, geom, ops)
    with pytest.raises(ConfigurationError):
        MixedProblem("inextensible", normal_load(ops), mesh, geom, ops, stabilization_weight=-1)
    bad = normal_load(ops)
    bad[0] = np.nan
    with pytest.raises(ConfigurationError):
        MixedProblem("inextensible", bad, mesh, geom, ops)


def test_unit_tension_force_on_sphere(setup):
    mesh, geom, ops = setup("sphere", 4)
    F = surface_tension_force(np.ones(mesh.n_vertices), mesh, geom)
    ref = -2.0 * (ops.M_vec @ geom.vertex_normals.ravel())
    assert np.linalg.norm(F - ref) / np.linalg.norm(ref) <= 0.05


def _smooth_fields(mesh, rng, count):
    x = mesh.vertices
    basis = np.column_stack([np.ones(len(x)), x, x**2, x[:, [0]] * x[:, [1]], np.sin(x)])
    return [basis @ rng.standard_normal((basis.shape[1], 3)) for _ in range(count)]


def test_force_duality_residual_decreases():
    from conftest import build
    worst = []
    for level in (2, 3, 4):
        mesh, geom, ops = build("torus", level)
        sigma = smooth_tension(mesh, ops) + 0.7
        rng = np.random.default_rng(0)
        F = surface_tension_force(sigma, mesh, geom)
        rel = []
        for v in _smooth_fields(mesh, rng, 100):
            v = v.ravel()
            gap = abs(F @ v + sigma @ (ops.B_form @ v))
            assert np.isclose(gap, abs(ibp_residual(sigma, v, mesh, geom, ops)), rtol=1e-9, atol=1e-14)
            rel.append(gap / (np.sqrt(sigma @ (ops.M @ sigma)) * ops.velocity_norm(v)))
        worst.append(max(rel))
    assert worst[0] > worst[1] > worst[2]


def test_normal_force_is_invisible_to_tangential_fields():
    # for sigma = 1 only the H sigma n part remains; its tangential component vanishes with h
    from conftest import build
    vals = []
    for level in (2, 3, 4):
        mesh, geom, ops = build("ellipsoid", level)
        n = geom.vertex_normals
        F = surface_tension_force(np.ones(mesh.n_vertices), mesh, geom).reshape(-1, 3)
        tang = F - np.einsum("ij,ij->i", F, n)[:, None] * n
        vals.append(np.linalg.norm(tang, axis=1).max() / np.linalg.norm(F, axis=1).max())
    assert vals[0] > vals[1] > vals[2]
    assert vals[2] < 0.02


def test_constraint_report_stabilization_energy(setup):
    mesh, geom, ops = setup("ellipsoid", 2)
    sol = _solve(setup, "ellipsoid", 2, lambda m, o: normal_load(o), stabilization_weight=0.5)
    rep = constraint_report(sol, mesh, geom, ops, 0.5)
    assert rep == sol.residuals
    assert np.isclose(rep["stabilization_energy"], 0.25 * sol.sigma @ (ops.S @ sol.sigma))
    assert rep["stabilization_energy"] > 0


def test_solution_json(setup):
    sol = _solve(setup, "ellipsoid", 2, lambda m, o: normal_load(o), "inextensible-isochoric")
    data = json.loads(sol.to_json())
    assert data["schema"] == 1
    assert {"divergence_l2", "flux", "velocity_l2", "stabilization_energy"} <= set(data["residuals"])
    assert isinstance(data["p"], float)


def test_vtk_export(setup, tmp_path):
    mesh, geom, ops = setup("sphere", 1)
    sol = _solve(setup, "sphere", 1, lambda m, o: normal_load(o))
    p = tmp_path / "s.vtk"
    write_vtk(p, mesh, sol, geom)
    lines = p.read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0"
    assert lines[3] == "DATASET POLYDATA"
    assert f"POINTS {mesh.n_vertices} double" in lines
    assert f"POLYGONS {mesh.n_faces} {4 * mesh.n_faces}" in lines
    assert "VECTORS u double" in lines and "SCALARS sigma double 1" in lines
    assert "SCALARS H double 1" in lines
    i = lines.index("VECTORS u double")
    back = np.array([[float(c) for c in row.split()] for row in lines[i + 1:i + 1 + mesh.n_vertices]])
    assert np.array_equal(back, sol.u)


def test_saddle_matrix_blocks(setup):
    _, _, ops = setup("sphere", 1)
    n = ops.n_vertices
    K = saddle_matrix(ops, 2.0, False).tocsr()
    assert abs(K[3 * n:, 3 * n:] + 4.0 * ops.S).max() <= 1e-14
    assert abs(K[3 * n:, :3 * n] - ops.B_form).max() == 0
    assert sp.issparse(K)
