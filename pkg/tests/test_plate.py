import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import assume, given, strategies as st
from sklearn.base import clone

from subdtune import plate
from subdtune.mesh import WeightAssignment, grid_mesh
from subdtune.plate import (
    Load, Material, NumericalError, PlateProblem, PlateSolver, WeightTable, analytic_solution,
    assemble, assemble_solve, backward_error, cup_saddle_ratio, decompose, decompose_patch,
    discretisation, error_norms, observed_rates, solve_spd,
)
from subdtune.spectral import default_weights, eigensystem_for
from subdtune.tuner import lift

L = 10.0
MAT = Material()
D = MAT.D


@pytest.fixture(scope="module")
def sinus_problem(symmetric_mesh):
    return PlateProblem(symmetric_mesh, Load("sinusoidal"))


@pytest.fixture(scope="module")
def sinus_solution(sinus_problem):
    return assemble_solve(sinus_problem, 2)


# ---------------------------------------------------------------- analytic reference

def test_sinusoidal_reference_values():
    load = Load("sinusoidal")
    assert analytic_solution(load, MAT, L / 2, L / 2) == pytest.approx(0.0, abs=1e-20)
    expected = load.p * L ** 4 / (64 * math.pi ** 4 * D)
    assert analytic_solution(load, MAT, L / 4, L / 4) == pytest.approx(expected, rel=1e-13)


def test_uniform_series_is_truncation_stable():
    load = Load("uniform")
    w51 = analytic_solution(load, MAT, L / 2, L / 2, terms=51)
    w99 = analytic_solution(load, MAT, L / 2, L / 2, terms=99)
    assert w51 == pytest.approx(w99, rel=1e-8)
    # classic centre coefficient of the simply supported square plate
    assert w99 * D / (load.p * L ** 4) == pytest.approx(0.00406235, rel=1e-5)


@pytest.mark.parametrize("kind", ["uniform", "sinusoidal"])
def test_reference_derivatives_match_differences(kind):
    load = Load(kind)
    x, y, h = 3.1, 6.7, 1e-4
    w, g, H = analytic_solution(load, MAT, x, y, order=2)
    gx = (analytic_solution(load, MAT, x + h, y) - analytic_solution(load, MAT, x - h, y)) / (2 * h)
    assert g[0] == pytest.approx(gx, rel=1e-6)
    _, gp, _ = analytic_solution(load, MAT, x, y + h, order=2)
    _, gm, _ = analytic_solution(load, MAT, x, y - h, order=2)
    assert H[1] == pytest.approx((gp[0] - gm[0]) / (2 * h), rel=1e-5)
    assert H[2] == pytest.approx((gp[1] - gm[1]) / (2 * h), rel=1e-5)


def test_load_and_problem_validation(symmetric_mesh):
    with pytest.raises(ValueError):
        Load("point")
    with pytest.raises(ValueError, match="policy"):
        PlateProblem(symmetric_mesh, policy="best")
    with pytest.raises(ValueError, match="span"):
        PlateProblem(grid_mesh(2, 2, 1.0, 1.0))
    lifted = symmetric_mesh.with_vertices(symmetric_mesh.vertices + [0, 0, 1.0])
    with pytest.raises(ValueError, match="planar"):
        PlateProblem(lifted)


# ---------------------------------------------------------------- discretisation

def test_affine_fields_have_zero_curvature(symmetric_mesh):
    disc = discretisation(symmetric_mesh, 1)
    wa = WeightAssignment({e.ev: (13.0, 0.9, 1.1) for e in disc.evs})
    xy = disc.xy
    w = 0.3 + 1.7 * xy[:, 0] - 0.4 * xy[:, 1]
    for g in disc.groups(wa):
        x, inv, G2, det = plate._geometry(g, xy, slice(None))
        H, _ = plate._physical_hessian(g, inv, G2)
        # near a vertex the basis inherits the eigendecomposition's round-off
        tol = 1e-13 if g.ev is None else 1e-9
        scale = np.einsum("gqrn,gn->gqr", np.abs(H), np.abs(w[g.ids]))
        assert np.all(np.abs(np.einsum("gqrn,gn->gqr", H, w[g.ids])) <= tol * scale)


def test_stiffness_is_symmetric_positive_definite(symmetric_mesh):
    prob = PlateProblem(symmetric_mesh)
    disc = discretisation(symmetric_mesh, 1)
    K, f, _ = assemble(prob, disc, WeightAssignment())
    assert abs(K - K.T).max() < 1e-10 * abs(K).max()
    assert np.linalg.eigvalsh(K.toarray()).min() > 0
    assert f.shape == (disc.n_free,) and np.all(np.isfinite(f))


def test_quadrature_areas_cover_the_plate(symmetric_mesh):
    disc = discretisation(symmetric_mesh, 1)
    area = 0.0
    for g in disc.groups(WeightAssignment()):
        _, _, _, det = plate._geometry(g, disc.xy, slice(None))
        area += np.sum(det * g.wq[None])
    assert area == pytest.approx(L * L, rel=1e-9)


def test_galerkin_energy_identity(sinus_problem, sinus_solution):
    # |u - u_h|^2 = |u|^2 - |u_h|^2 in the energy norm
    disc = sinus_solution.disc
    K, _, _ = assemble(sinus_problem, disc, sinus_solution.weights)
    w = sinus_solution.w_free
    k = 2 * math.pi / L
    amp = sinus_problem.load.p / (D * (2 * k * k) ** 2)
    exact = (amp * k * k * L) ** 2
    e = error_norms(sinus_solution).energy
    assert e ** 2 == pytest.approx(1 - w @ K @ w / (D * exact), rel=1e-3)


def test_sinusoidal_solution_is_antisymmetric(sinus_solution):
    xy, w = sinus_solution.corner_values()
    key = {(round(a, 9), round(b, 9)): c for (a, b), c in zip(xy, w)}
    pairs = [(c, key.get((round(L - a, 9), round(b, 9)))) for (a, b), c in zip(xy, w)]
    pairs = [(c, d) for c, d in pairs if d is not None]
    assert len(pairs) > 100
    scale = np.abs(w).max()
    assert max(abs(c + d) for c, d in pairs) < 1e-9 * scale


def test_deflection_lookup(sinus_solution):
    w = sinus_solution.deflection_at((L / 2, L / 2))
    assert abs(w) < 1e-9 * np.abs(sinus_solution.w).max()
    with pytest.raises(ValueError, match="no regular face corner"):
        sinus_solution.deflection_at((1.234, 5.678))


def test_boundary_values_vanish(sinus_solution):
    top = sinus_solution.disc.mesh.topology
    assert np.all(sinus_solution.w[top.boundary] == 0.0)


def test_errors_decrease_on_a_regular_grid():
    prob = PlateProblem(grid_mesh(4, 4, L, L), Load("sinusoidal"))
    e = [error_norms(assemble_solve(prob, lev)) for lev in (1, 2, 3)]
    assert e[0].l2 > e[1].l2 > e[2].l2
    rates = observed_rates([x.energy for x in e])
    assert np.isnan(rates[0]) and rates[2] == pytest.approx(2.0, abs=0.2)


# ---------------------------------------------------------------- linear solver

def test_two_grid_agrees_with_direct(sinus_problem, monkeypatch):
    disc = discretisation(sinus_problem.mesh, 2)
    K, f, _ = assemble(sinus_problem, disc, WeightAssignment())
    direct = solve_spd(K, f)
    monkeypatch.setattr(plate, "DIRECT_LIMIT", 0)
    iterative = solve_spd(K, f, lambda: disc.prolongation(WeightAssignment()))
    assert backward_error(K, iterative, f) < plate.RESIDUAL_TOL
    np.testing.assert_allclose(iterative, direct, rtol=0, atol=1e-8 * np.abs(direct).max())


def test_solver_rejects_indefinite_diagonal():
    K = sp.csc_matrix(np.diag([1.0, -1.0]))
    with pytest.raises(NumericalError):
        solve_spd(K, np.ones(2))


def test_backward_error_of_exact_solution():
    A = sp.csr_matrix(np.array([[4.0, 1.0], [1.0, 3.0]]))
    x = np.array([1.0, -2.0])
    assert backward_error(A, x, A @ x) == 0.0


# ---------------------------------------------------------------- decomposition

def _block(E, j, scale=1.0):
    return np.column_stack([E.r1, E.r2, scale * lift(E, j).control])


def test_pure_cup_and_saddle_are_classified():
    E = eigensystem_for(5, default_weights(5))
    cup = decompose_patch(E, _block(E, 3))
    assert cup.R > 1e6 and cup.shape == "cup"
    saddle = decompose_patch(E, _block(E, 4))
    assert saddle.R < 1e-6 and saddle.shape == "saddle"


def test_equal_coefficients_give_thirteen_sevenths():
    assert cup_saddle_ratio(1.0, 1.0, 0.0) == pytest.approx(13 / 7)
    assert cup_saddle_ratio(1.0, 0.0, 0.0) == math.inf
    assert cup_saddle_ratio(0.0, 0.0, 0.0) == 0.0


@given(st.floats(0.1, 10.0), st.floats(-3, 3), st.floats(-3, 3), st.floats(0, 2 * math.pi))
def test_ratio_invariant_under_scaling_and_rotation(scale, b, c, angle):
    assume(abs(b) + abs(c) > 0.05)
    E = eigensystem_for(5, (13.4575, 0.9999, 0.9999))
    p = np.column_stack([E.r1, E.r2, lift(E, 3).control + b * lift(E, 4).control
                         + c * lift(E, 5).control])
    base = decompose_patch(E, p).R
    scaled = p.copy()
    scaled[:, 2] *= scale
    assert decompose_patch(E, scaled).R == pytest.approx(base, rel=1e-9)
    ca, sa = math.cos(angle), math.sin(angle)
    Rz = np.array([[ca, -sa, 0], [sa, ca, 0], [0, 0, 1]])
    Rx = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]])
    assert decompose_patch(E, p @ (Rx @ Rz).T).R == pytest.approx(base, rel=1e-8)


def test_ratio_invariant_under_sector_relabelling():
    E = eigensystem_for(5, default_weights(5))
    rng = np.random.default_rng(4)
    p = np.column_stack([E.r1, E.r2, lift(E, 3).control + rng.normal(size=3) @ np.array(
        [lift(E, 4).control, lift(E, 5).control, lift(E, 3).control])])
    rolled = np.vstack([p[:1], np.roll(p[1:], 12, axis=0)])
    rolled[:, :2] = p[:, :2]
    assert decompose_patch(E, rolled).R == pytest.approx(decompose_patch(E, p).R, rel=1e-9)


def test_decompose_patch_validates_shape():
    E = eigensystem_for(5, default_weights(5))
    with pytest.raises(ValueError, match="control block"):
        decompose_patch(E, np.zeros((10, 3)))
    flat = np.column_stack([E.r1, E.r2, np.zeros_like(E.r1)])
    flat[:, 1] = 0.0
    with pytest.raises(ValueError, match="tangent plane"):
        decompose_patch(E, flat)


def test_decompose_requires_an_extraordinary_vertex(sinus_solution):
    with pytest.raises(ValueError, match="not an interior extraordinary vertex"):
        decompose(sinus_solution, 0)
    ev = sinus_solution.disc.evs[0].ev
    d = decompose(sinus_solution, ev)
    assert d.valence == 5 and d.row()["ev_id"] == ev + 1


# ---------------------------------------------------------------- estimator

def test_weight_table_without_tuning():
    t = WeightTable({}, tune_missing=False)
    with pytest.raises(KeyError):
        t.get(6, "cup")
    assert WeightTable.default().get(5, "saddle")[0] == pytest.approx(13.985075)


def test_plate_solver_estimator(symmetric_mesh):
    est = PlateSolver(load="sinusoidal", level=1, policy="cc")
    assert clone(est).get_params() == est.get_params()
    with pytest.raises(RuntimeError):
        est.predict([[5.0, 5.0]])
    est.fit(symmetric_mesh)
    assert est.n_dofs_ == est.solution_.n_dofs and est.decisions_ == []
    assert est.score() == -est.errors_.energy
    assert abs(est.predict([[L / 2, L / 2]])[0]) < 1e-12


def test_plate_solver_auto_records_decisions(asymmetric_mesh):
    est = PlateSolver(load="sinusoidal", level=1).fit(asymmetric_mesh)
    assert {d.shape for d in est.decisions_} <= {"cup", "saddle"}
    assert len(est.decisions_) == len([e for e in est.solution_.disc.evs if e.valence >= 5])


@pytest.mark.parametrize("kw", [{"level": 9}, {"quadrature": 1}])
def test_plate_solver_parameter_ranges(symmetric_mesh, kw):
    with pytest.raises(ValueError):
        PlateSolver(**kw).fit(symmetric_mesh)


def test_plate_solver_rejects_other_inputs():
    with pytest.raises(TypeError):
        PlateSolver().fit(np.zeros((3, 3)))
