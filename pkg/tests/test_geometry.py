import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evtrack import (AlignmentError, ArticulatedModel, MeshError, ParamSet,
                     ParameterShapeError, RigidTransform, TriMesh, apply_rigid,
                     build_adjacency, deform_articulated, geodesic_distances,
                     load_obj, posed_joints, procrustes_align, save_obj,
                     subsample_vertices, template_geodesics)
from evtrack.geometry import rotation_matrix
from evtrack.scenes import make_finger_chain, make_sheet, make_uv_sphere


# ---------------------------------------------------------------------------
# meshes


def test_trimesh_validates_face_indices():
    with pytest.raises(MeshError):
        TriMesh.from_arrays(np.zeros((3, 3)), [[0, 1, 5]])


def test_trimesh_rejects_degenerate_faces():
    with pytest.raises(MeshError):
        TriMesh.from_arrays(np.zeros((3, 3)), [[0, 1, 1]])


def test_template_is_frozen():
    mesh = make_sheet(3, 3)
    with pytest.raises(ValueError):
        mesh.template_vertices[0, 0] = 99.0


# ---------------------------------------------------------------------------
# adjacency


def test_adjacency_single_triangle():
    mesh = TriMesh.from_arrays(np.eye(3), [[0, 1, 2]])
    adj = build_adjacency(mesh)
    assert [list(n) for n in adj.neighbors] == [[1, 2], [0, 2], [0, 1]]


def test_adjacency_shared_edge():
    # two triangles sharing edge (1, 2): vertices 1 and 2 gain 3 neighbors
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0.0]])
    adj = build_adjacency(TriMesh.from_arrays(v, [[0, 1, 2], [1, 3, 2]]))
    assert [len(n) for n in adj.neighbors] == [2, 3, 3, 2]
    # symmetric, no self loops
    pairs = {(i, j) for i, j in adj.pairs}
    assert all((j, i) in pairs for i, j in pairs)
    assert all(i != j for i, j in pairs)


def test_adjacency_empty_faces():
    mesh = TriMesh.from_arrays(np.zeros((4, 3)), np.empty((0, 3), dtype=np.int64))
    adj = build_adjacency(mesh)
    assert all(len(n) == 0 for n in adj.neighbors)


# ---------------------------------------------------------------------------
# rigid transforms


def test_apply_rigid_identity():
    v = np.random.default_rng(0).standard_normal((5, 3))
    out = apply_rigid(v, RigidTransform.identity())
    np.testing.assert_allclose(out, v, atol=1e-15)


def test_apply_rigid_translation():
    v = np.zeros((4, 3))
    out = apply_rigid(v, RigidTransform(np.array([0, 0, 2.0]), np.zeros(3)))
    np.testing.assert_allclose(out[:, 2], 2.0)


def test_apply_rigid_half_turn_about_z():
    rigid = RigidTransform(np.zeros(3), np.array([0, 0, np.pi]))
    out = apply_rigid(np.array([[1.0, 0.0, 0.0]]), rigid)
    np.testing.assert_allclose(out, [[-1.0, 0.0, 0.0]], atol=1e-12)


def test_rotation_matrix_is_orthonormal():
    r = np.array([0.3, -1.2, 0.7])
    m = rotation_matrix(r)
    np.testing.assert_allclose(m @ m.T, np.eye(3), atol=1e-9)
    assert np.linalg.det(m) == pytest.approx(1.0, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3),
       st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_apply_rigid_preserves_distances(r, t):
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0.3, 0.7, -0.2]])
    out = apply_rigid(v, RigidTransform(np.array(t), np.array(r)))
    d0 = np.linalg.norm(v[:, None] - v[None], axis=-1)
    d1 = np.linalg.norm(out[:, None] - out[None], axis=-1)
    np.testing.assert_allclose(d0, d1, atol=1e-9)


# ---------------------------------------------------------------------------
# parameter sets


def test_paramset_requires_exactly_one_body():
    with pytest.raises(ParameterShapeError):
        ParamSet(rigid=RigidTransform.identity())
    with pytest.raises(ParameterShapeError):
        ParamSet(rigid=RigidTransform.identity(), theta=np.zeros(3),
                 vertices=np.zeros((2, 3)))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=12, max_size=12))
def test_paramset_flatten_roundtrip_vertices(vals):
    p = ParamSet(rigid=RigidTransform(np.array(vals[:3]), np.array(vals[3:6])),
                 vertices=np.array(vals[6:]).reshape(2, 3))
    q = ParamSet.unflatten(p.flatten(), p)
    assert np.array_equal(p.flatten(), q.flatten())
    assert not q.is_parametric


def test_paramset_flatten_order_rigid_first():
    p = ParamSet(rigid=RigidTransform(np.array([1, 2, 3.0]), np.array([4, 5, 6.0])),
                 theta=np.array([7.0, 8.0]))
    np.testing.assert_array_equal(p.flatten(), [1, 2, 3, 4, 5, 6, 7, 8])


def test_paramset_unflatten_dimension_check():
    p = ParamSet(rigid=RigidTransform.identity(), theta=np.zeros(3))
    with pytest.raises(ParameterShapeError):
        ParamSet.unflatten(np.zeros(5), p)


# ---------------------------------------------------------------------------
# linear blend skinning


def _one_joint_model():
    # one joint at the origin, one ring of vertices fully bound to it
    mesh = TriMesh.from_arrays(
        np.array([[1, 0, 0], [0, 0, 1], [1, 0, 1.0]]), [[0, 1, 2]])
    return ArticulatedModel(rest_mesh=mesh, joint_parents=np.array([-1]),
                            joint_offsets=np.zeros((1, 3)),
                            skin_weights=np.ones((3, 1)),
                            joint_regressor=np.full((1, 3), 1 / 3))


def test_lbs_zero_pose_identity_rigid_is_rest():
    model = make_finger_chain(4, 8)
    p = ParamSet(rigid=RigidTransform.identity(), theta=np.zeros(12))
    posed = deform_articulated(model, p)
    assert np.array_equal(posed.vertices, model.rest_mesh.template_vertices)


def test_lbs_pure_translation():
    model = _one_joint_model()
    p = ParamSet(rigid=RigidTransform(np.array([1.0, 0, 0]), np.zeros(3)),
                 theta=np.zeros(3))
    posed = deform_articulated(model, p)
    np.testing.assert_allclose(
        posed.vertices, model.rest_mesh.template_vertices + [1.0, 0, 0], atol=1e-12)


def test_lbs_single_joint_quarter_turn():
    # vertex at rest offset (1, 0, 0) from the joint maps to joint + (0, 1, 0)
    model = _one_joint_model()
    p = ParamSet(rigid=RigidTransform.identity(),
                 theta=np.array([0.0, 0.0, np.pi / 2]))
    posed = deform_articulated(model, p)
    np.testing.assert_allclose(posed.vertices[0], [0.0, 1.0, 0.0], atol=1e-12)


def test_lbs_theta_shape_check():
    model = make_finger_chain(3, 6)
    with pytest.raises(ParameterShapeError):
        deform_articulated(model, ParamSet(rigid=RigidTransform.identity(),
                                           theta=np.zeros(5)))


def test_posed_joints_match_forward_kinematics():
    model = make_finger_chain(4, 8)
    theta = np.zeros(12)
    theta[5] = 0.8
    theta[8] = -0.5
    rigid = RigidTransform(np.array([0.1, -0.2, 0.05]), np.array([0.1, 0.2, -0.1]))
    joints = posed_joints(model, ParamSet(rigid=rigid, theta=theta))

    # independent oracle: accumulate the joint transforms explicitly
    q = model.rest_joints()
    rots, pos = [], []
    for j in range(model.n_joints):
        rj = rotation_matrix(theta[3 * j:3 * j + 3])
        pa = model.joint_parents[j]
        if pa < 0:
            rots.append(rj)
            pos.append(q[j])
        else:
            rots.append(rots[pa] @ rj)
            pos.append(pos[pa] + rots[pa] @ (q[j] - q[pa]))
    expected = np.array(pos) @ rotation_matrix(rigid.r).T + rigid.t
    np.testing.assert_allclose(joints, expected, atol=1e-9)


# ---------------------------------------------------------------------------
# geodesics


def test_geodesic_zero_diagonal():
    mesh = make_sheet(3, 3)
    d = geodesic_distances(mesh, [0, 4, 8])
    np.testing.assert_allclose(np.diag(d), 0.0)


def test_geodesic_path_graph():
    # strip where the shortest 0 -> 2 path is 0-1-2 with unit edges (total 2)
    v = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [1, 5, 0.0]])
    mesh = TriMesh.from_arrays(v, [[0, 1, 3], [1, 2, 3]])
    d = geodesic_distances(mesh, [0, 2])
    assert d[0, 1] == pytest.approx(2.0, abs=1e-12)


def test_geodesic_equilateral_triangle():
    s = 0.7
    v = s * np.array([[0, 0, 0], [1, 0, 0], [0.5, np.sqrt(3) / 2, 0]])
    mesh = TriMesh.from_arrays(v, [[0, 1, 2]])
    d = geodesic_distances(mesh, [0, 1, 2])
    off = d[~np.eye(3, dtype=bool)]
    np.testing.assert_allclose(off, s, atol=1e-12)


def test_geodesic_matrix_properties_exhaustive():
    mesh = make_uv_sphere(rings=5, segments=8)  # 34 vertices
    assert mesh.n_vertices <= 50
    samples = subsample_vertices(mesh, 1)
    d = geodesic_distances(mesh, samples)
    assert np.array_equal(d, d.T)
    assert (d >= 0).all()
    np.testing.assert_allclose(np.diag(d), 0.0)
    n = len(samples)
    for i in range(n):
        for j in range(n):
            assert (d[i, :] <= d[i, j] + d[j, :] + 1e-9).all()


def test_geodesic_disconnected_pair_is_infinite():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0],
                  [5, 5, 0], [6, 5, 0], [5, 6, 0.0]])
    mesh = TriMesh.from_arrays(v, [[0, 1, 2], [3, 4, 5]])
    d = geodesic_distances(mesh, [0, 3])
    assert np.isinf(d[0, 1])
    geo = template_geodesics(mesh, [0, 3])
    assert geo.n_pairs == 0  # infinite pairs are excluded


def test_template_geodesics_paths_rebuild_distances():
    mesh = make_sheet(4, 4)
    geo = template_geodesics(mesh, subsample_vertices(mesh, 3))
    tpl = mesh.template_vertices
    for p in range(geo.n_pairs):
        sel = geo.edge_pair == p
        length = np.linalg.norm(tpl[geo.edge_u[sel]] - tpl[geo.edge_v[sel]],
                                axis=1).sum()
        assert length == pytest.approx(geo.pair_dist[p], abs=1e-9)


# ---------------------------------------------------------------------------
# subsampling


@pytest.mark.parametrize("n, stride, expected", [
    (25, 10, [0, 10, 20]),
    (5, 1, [0, 1, 2, 3, 4]),
    (9, 10, [0]),
])
def test_subsample_vertices(n, stride, expected):
    mesh = TriMesh.from_arrays(np.zeros((n, 3)), np.empty((0, 3), dtype=np.int64))
    assert list(subsample_vertices(mesh, stride)) == expected


def test_subsample_rejects_bad_stride():
    with pytest.raises(ValueError):
        subsample_vertices(make_sheet(3, 3), 0)


# ---------------------------------------------------------------------------
# Procrustes alignment


def test_procrustes_recovers_rigid_transform():
    rng = np.random.default_rng(1)
    src = rng.standard_normal((8, 3))
    rot = rotation_matrix(np.array([0.4, -0.2, 0.9]))
    tgt = src @ rot.T + np.array([1.0, -2.0, 0.5])
    aligned = procrustes_align(src, tgt)
    assert np.linalg.norm(aligned - tgt) < 1e-9


def test_procrustes_identity():
    src = np.random.default_rng(2).standard_normal((5, 3))
    aligned = procrustes_align(src, src)
    np.testing.assert_allclose(aligned, src, atol=1e-9)


def test_procrustes_beats_rotation_grid_search():
    rng = np.random.default_rng(3)
    src = rng.standard_normal((4, 3))
    tgt = src + 0.1 * rng.standard_normal((4, 3))
    best = np.linalg.norm(tgt - src)  # unaligned residual

    # brute-force oracle: rotations over an axis-angle grid, optimal translation
    for ax in range(40):
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        for ang in np.linspace(0, np.pi, 20):
            rot = rotation_matrix(axis * ang)
            moved = src @ rot.T
            moved += tgt.mean(0) - moved.mean(0)
            best = min(best, np.linalg.norm(tgt - moved))

    residual = np.linalg.norm(tgt - procrustes_align(src, tgt))
    assert residual <= best + 1e-9
    assert residual <= np.linalg.norm(tgt - src) + 1e-12


def test_procrustes_residual_invariant_to_source_pose():
    rng = np.random.default_rng(4)
    src = rng.standard_normal((6, 3))
    tgt = rng.standard_normal((6, 3))
    r0 = np.linalg.norm(tgt - procrustes_align(src, tgt))
    moved = apply_rigid(src, RigidTransform(np.array([3.0, -1, 2]),
                                            np.array([0.2, 1.1, -0.4])))
    r1 = np.linalg.norm(tgt - procrustes_align(moved, tgt))
    assert r0 == pytest.approx(r1, abs=1e-9)


def test_procrustes_rejects_too_few_points():
    with pytest.raises(AlignmentError):
        procrustes_align(np.zeros((2, 3)), np.zeros((2, 3)))


def test_procrustes_rejects_collinear_points():
    src = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0.0]])
    with pytest.raises(AlignmentError):
        procrustes_align(src, src * 2.0)


# ---------------------------------------------------------------------------
# OBJ round trip


def test_obj_roundtrip(tmp_path):
    mesh = make_uv_sphere(rings=4, segments=6)
    path = tmp_path / "mesh.obj"
    save_obj(path, mesh)
    back = load_obj(path)
    np.testing.assert_array_equal(back.vertices, mesh.vertices)
    np.testing.assert_array_equal(back.faces, mesh.faces)


def test_obj_rejects_quads(tmp_path):
    path = tmp_path / "quad.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    with pytest.raises(MeshError):
        load_obj(path)
