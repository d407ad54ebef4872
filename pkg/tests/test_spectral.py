import numpy as np
import pytest
from hypothesis import given, strategies as st

from subdtune.mesh import WeightAssignment, local_patch, subdivide
from subdtune.spectral import (
    SpectralError, assemble, characteristic_mesh, default_weights, dft_matrix, eigensystem,
    eigensystem_for, fourier_blocks, smoothness_report, spectrum_rows,
)

from conftest import ring_mesh

# regression constant produced by this eigensolver (classic weights, valence 3)
LAMBDA1_V3 = 0.41009705080055187

weights_st = st.tuples(st.floats(2.0, 30.0), st.floats(0.4, 2.0), st.floats(0.4, 2.0))


def test_assemble_validates_input():
    with pytest.raises(ValueError):
        assemble(2)
    with pytest.raises(ValueError):
        assemble(5, 15, 0.0, 1.0)


@pytest.mark.parametrize("v", [3, 4, 5, 6, 7, 8])
def test_matrix_shape_and_row_sums(v):
    S = assemble(v)
    assert S.size == 12 * v + 1
    np.testing.assert_allclose(S.matrix.sum(axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("v", [3, 5, 7])
def test_dft_is_unitary(v):
    F = dft_matrix(v)
    np.testing.assert_allclose(F @ F.conj(), np.eye(12 * v + 1), atol=1e-12)


@given(st.integers(3, 8), weights_st)
def test_fourier_blocks_are_block_diagonal(v, w):
    fb = fourier_blocks(assemble(v, *w))
    assert fb.sizes == [13] + [12] * (v - 1)
    assert fb.off_block_residual < 1e-12
    F = fb.F
    np.testing.assert_allclose(F.conj() @ fb.transformed @ F, assemble(v, *w).matrix, atol=1e-12)


def test_scrambled_ordering_is_detected():
    S = assemble(5)
    perm = np.arange(S.size)
    perm[[3, 30]] = perm[[30, 3]]
    bad = type(S)(5, S.weights, S.matrix[np.ix_(perm, perm)])
    with pytest.raises(SpectralError, match="ordering mismatch"):
        fourier_blocks(bad)


@st.composite
def near_classic(draw):
    """A valence and weights within a band around the classic ones."""
    v = draw(st.sampled_from([3, 5, 6, 7]))
    a = draw(st.floats(0.7, 1.3)) * v * (v - 2)
    return v, (a, draw(st.floats(0.75, 1.25)), draw(st.floats(0.75, 1.25)))


@given(near_classic())
def test_eigen_invariants(case):
    v, w = case
    E = eigensystem(assemble(v, *w))
    assert abs(E.values[0] - 1.0) < 1e-10
    np.testing.assert_allclose(E.right[:, 0], 1.0, atol=1e-10)
    np.testing.assert_allclose(E.left.T @ E.right, np.eye(12 * v + 1), atol=1e-10)
    assert np.all(np.diff(E.values) <= 1e-12)


@pytest.mark.parametrize("v", [5, 6, 7])
def test_frequency_pairs_share_eigenvalues(v):
    fb = fourier_blocks(assemble(v))
    for m in range(1, v):
        np.testing.assert_allclose(np.sort_complex(fb.block_eigenvalues(m)),
                                   np.sort_complex(fb.block_eigenvalues(v - m).conj()), atol=1e-10)


def test_original_valence_five_eigenvalue():
    E = eigensystem_for(5, default_weights(5))
    assert abs(E.lambda1 - 0.550) < 5e-4
    assert set(E.frequency[[1, 2]]) == {1, 4}


def test_valence_three_regression_value():
    E = eigensystem_for(3, default_weights(3))
    assert E.lambda1 < 0.5
    assert abs(E.lambda1 - LAMBDA1_V3) < 1e-12


def test_spectrum_rows_for_valence_three():
    rows = spectrum_rows(eigensystem_for(3, default_weights(3)))
    assert len(rows) == 37
    assert rows[0][1] == pytest.approx(1.0)


def test_characteristic_map_starts_on_the_xi1_axis():
    E = eigensystem_for(5, default_weights(5))
    C = characteristic_mesh(E)
    np.testing.assert_allclose(C.vertex(0, 1, 0), [1.0, 0.0], atol=1e-12)
    ang = np.arctan2(*C.vertex(1, 1, 0)[::-1])
    assert ang == pytest.approx(2 * np.pi / 5)


def test_smoothness_report_for_tuned_saddle():
    E = eigensystem_for(5, (13.985075, 0.8248855, 0.8248855))
    rep = smoothness_report(E)
    assert rep.c1_holds and rep.injective
    assert rep.lambdas["lambda_cup"] == pytest.approx(0.585 ** 2, abs=1e-6)
    assert rep.c2_residuals["lambda_cup - lambda1^2"] < 1e-6


def test_defaults_fail_second_order_conditions():
    rep = smoothness_report(eigensystem_for(5, default_weights(5)))
    assert rep.c1_holds
    assert not rep.c2_holds


@given(st.sampled_from([3, 5, 6, 7]), st.integers(0, 10_000))
def test_local_matrix_matches_global_refinement(v, seed):
    m = ring_mesh(v, jitter=0.05, lift=0.3, seed=seed)
    rng = np.random.default_rng(seed)
    w = tuple(rng.uniform(0.5, 20.0, 3))
    before = m.vertices[list(local_patch(m, 0).indices)]
    fine = subdivide(m, WeightAssignment({0: w}))
    after = fine.vertices[list(local_patch(fine, 0, first=_first_child(m, fine)).indices)]
    np.testing.assert_allclose(assemble(v, *w).matrix @ before, after, atol=1e-12)


def _first_child(m, fine):
    from subdtune.mesh import edge_child
    lp = local_patch(m, 0)
    return edge_child(m, 0, lp.indices[1])
