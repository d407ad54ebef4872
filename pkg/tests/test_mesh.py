import os

import numpy as np
import pytest
from hypothesis import given, strategies as st

from subdtune.mesh import (
    ControlMesh, MeshError, WeightAssignment, attach_ghosts, format_obj, grid_mesh,
    local_patch, parse_obj, refine, refinement_operator, regular_grid, regular_grids,
    split_polygons, star_mesh, subdivide, write_mesh,
)

from conftest import ring_mesh


def test_parse_obj_reads_quads_and_ghost_markers():
    text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nf 1 2 3 4\n# ghost 4\n"
    m = parse_obj(text)
    assert m.n_vertices == 4 and m.n_faces == 1
    assert m.ghost.tolist() == [False, False, False, True]


@pytest.mark.parametrize("text, msg", [
    ("v 0 0 0\nv 1 0 0\nv 1 1 0\nf 1 2 3\n", "non-quad face at line 4"),
    ("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 9\n", "out of range at line 5"),
    ("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 2 4\n", "repeated vertex"),
    ("v 0 0 0\nv 1 x 0\n", "bad vertex at line 2"),
    ("v 0 0 0\n", "no faces"),
])
def test_parse_obj_errors(text, msg):
    with pytest.raises(MeshError, match=msg):
        parse_obj(text)


def test_inconsistent_orientation_reports_line():
    text = ("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 2 0 0\nv 2 1 0\n"
            "f 1 2 3 4\nf 2 3 6 5\n")
    with pytest.raises(MeshError, match="line 8"):
        parse_obj(text)


def test_obj_round_trip(tmp_path):
    m = grid_mesh(3, 2, 3.0, 2.0)
    path = tmp_path / "g.obj"
    write_mesh(m, str(path), comment="grid")
    back = parse_obj(path.read_text())
    np.testing.assert_array_equal(back.faces, m.faces)
    np.testing.assert_allclose(back.vertices, m.vertices)
    assert not [p for p in os.listdir(tmp_path) if p.startswith(".tmp-")]


def test_format_obj_can_keep_ghosts():
    gr = attach_ghosts(grid_mesh(2, 2))
    text = format_obj(gr.mesh, include_ghosts=True)
    assert parse_obj(text).ghost.sum() == gr.mesh.ghost.sum()


def test_topology_of_grid():
    top = grid_mesh(3, 3).topology
    assert top.boundary.sum() == 12
    assert top.extraordinary == []
    assert len(top.edges) == 24


def test_extraordinary_detection_in_star():
    m = star_mesh(5)
    assert m.extraordinary == [0]
    assert m.topology.valence[0] == 5


def test_weights_must_be_positive_triples():
    with pytest.raises(ValueError):
        WeightAssignment({0: (1.0, -1.0, 1.0)})
    wa = WeightAssignment({3: (10, 1, 1)})
    assert wa.get(3, 5) == (10.0, 1.0, 1.0)
    assert wa.get(4, 5) == (15.0, 1.0, 1.0)


def test_refinement_rows_sum_to_one():
    S = refinement_operator(ring_mesh(5), WeightAssignment({0: (13.0, 0.9, 1.1)}))
    np.testing.assert_allclose(np.asarray(S.sum(axis=1)).ravel(), 1.0, atol=1e-12)


def test_weights_on_boundary_vertex_rejected():
    with pytest.raises(MeshError, match="not interior"):
        refinement_operator(grid_mesh(2, 2), WeightAssignment({0: (8, 1, 1)}))


def test_subdivision_counts():
    m = grid_mesh(2, 3)
    s = subdivide(m)
    assert s.n_faces == 4 * m.n_faces
    assert s.n_vertices == m.n_vertices + len(m.topology.edges) + m.n_faces


def test_regular_grid_boundary_is_preserved_by_refinement():
    # ghost reflection turns boundary rules into cubic B-spline curve rules
    m = refine(grid_mesh(3, 3, 3.0, 3.0), 2)
    b = m.topology.boundary
    V = m.vertices[b]
    on_edge = np.isclose(V, 0) | np.isclose(V, 3)
    assert np.all(on_edge[:, 0] | on_edge[:, 1])


@given(st.integers(0, 2**31 - 1))
def test_subdivide_commutes_with_affine_maps(seed):
    rng = np.random.default_rng(seed)
    m = ring_mesh(int(rng.integers(3, 8)), jitter=0.1, lift=0.2, seed=seed)
    A = rng.standard_normal((3, 3))
    t = rng.standard_normal(3)
    w = WeightAssignment({0: tuple(rng.uniform(0.5, 20.0, 3))})
    lhs = subdivide(m.with_vertices(m.vertices @ A.T + t), w).vertices
    rhs = subdivide(m, w).vertices @ A.T + t
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * max(1.0, np.abs(rhs).max()))


def test_ghost_reflection_stencils():
    gr = attach_ghosts(grid_mesh(2, 2, 2.0, 2.0))
    V = gr.mesh.vertices
    ghosts = np.nonzero(gr.mesh.ghost)[0]
    assert len(ghosts) == 16
    # reflected points lie one spacing outside the square
    outside = (V[ghosts, :2] < -0.5) | (V[ghosts, :2] > 2.5)
    assert np.all(outside.any(axis=1))
    np.testing.assert_allclose(np.asarray(gr.reflect.sum(axis=1)).ravel(), 1.0)


def test_ghosts_need_straight_boundaries():
    # an L-shaped region has a reflex boundary vertex with three faces
    V = [(x, y, 0) for y in range(3) for x in range(3)]
    F = [(0, 1, 4, 3), (1, 2, 5, 4), (3, 4, 7, 6)]
    with pytest.raises(MeshError, match="3 faces"):
        attach_ghosts(ControlMesh(V, F))


def test_vectorised_grids_match_walk(symmetric_mesh):
    aug = attach_ghosts(refine(symmetric_mesh, 1)).mesh
    fast = regular_grids(aug)
    for fi in range(aug.n_faces):
        slow = regular_grid(aug, fi)
        assert (fast[fi, 0] < 0) if slow is None else fast[fi].tolist() == slow


@pytest.mark.parametrize("v", [3, 5, 6, 7])
def test_local_patch_layout(v):
    m = ring_mesh(v)
    lp = local_patch(m, 0)
    assert len(lp) == 12 * v + 1
    assert len(set(lp.indices)) == 12 * v + 1
    assert lp.indices[0] == 0


def test_local_patch_needs_three_rings():
    with pytest.raises(MeshError, match="insufficient ring depth"):
        local_patch(star_mesh(5, rings=2), 0)


def test_local_patch_rejects_boundary_vertex():
    with pytest.raises(MeshError, match="insufficient ring depth"):
        local_patch(grid_mesh(2, 2), 0)


def test_split_polygons_builds_valence_n_centres():
    pts = [(0, 0), (2, 0), (3, 1), (1.5, 2.5), (0, 1.5)]
    m = split_polygons(pts, [[0, 1, 2, 3, 4]])
    assert m.n_faces == 5
    centre = np.argmin(np.hypot(*(m.vertices[:, :2] - [1.3, 1.0]).T))
    assert m.topology.valence[centre] == 5
    assert m.extraordinary == [int(centre)]
