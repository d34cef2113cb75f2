import numpy as np
import pytest
import torch

from evtrack import (Camera, EventFrame, EventMask, ObjectiveWeights, ParamSet,
                     RasterSettings, RigidTransform, ThresholdParams, TriMesh,
                     build_adjacency, e_geo, e_iso, e_reg, e_top,
                     smooth_threshold, subsample_vertices, template_geodesics,
                     total_mesh, total_parametric)
from evtrack.objective import FrameContext, event_terms_t
from evtrack.scenes import make_finger_chain, make_sheet


def _ctx(branch="mesh", frame_values=None, prev=None, weights=None):
    if branch == "mesh":
        model = make_sheet(4, 4)
        n = model.n_vertices
        prev = prev or ParamSet(rigid=RigidTransform.identity(),
                                vertices=model.template_vertices.copy())
        adjacency = build_adjacency(model)
        geo = template_geodesics(model, subsample_vertices(model, 3))
    else:
        model = make_finger_chain(3, 6)
        prev = prev or ParamSet(rigid=RigidTransform.identity(), theta=np.zeros(9))
        adjacency = geo = None
    camera = Camera(fx=48, fy=48, cx=15.5, cy=15.5, width=32, height=32)
    values = np.zeros((32, 32)) if frame_values is None else frame_values
    frame = EventFrame(values=values, t_first=0, t_last=1, count=1)
    return FrameContext(branch=branch, model=model, camera=camera,
                        settings=RasterSettings(),
                        thresh=ThresholdParams(c=10 / 255, w=5 * 255 / 10, eps=1e-3),
                        weights=weights or ObjectiveWeights(),
                        prev=prev, input_frame=frame, adjacency=adjacency,
                        geo=geo, relevant_events=np.empty((0, 2), dtype=np.int64))


# ---------------------------------------------------------------------------
# event mask


def test_event_mask_from_frame():
    v = np.zeros((4, 4))
    v[1, 2] = 0.5
    v[3, 0] = -1.0
    mask = EventMask.from_frame(EventFrame(values=v, t_first=0, t_last=0, count=2))
    assert mask.gamma.sum() == 2
    np.testing.assert_array_equal(mask.gamma + mask.gamma_bar, np.ones((4, 4)))


# ---------------------------------------------------------------------------
# event / no-event terms


def test_event_term_zero_for_empty_input_frame():
    ctx = _ctx("mesh")
    p = ParamSet(rigid=RigidTransform.identity(),
                 vertices=ctx.model.template_vertices.copy())
    assert ctx.terms(p)["event"] == 0.0


def test_event_term_single_masked_pixel():
    gen = torch.tensor([[0.5, 0.0], [0.0, 0.0]], dtype=torch.float64)
    obs = torch.tensor([[1.0, 0.0], [0.0, 0.0]], dtype=torch.float64)
    gamma = (obs != 0).to(torch.float64)
    e_ev, _ = event_terms_t(gen, obs, gamma)
    assert float(e_ev) == pytest.approx(0.25)


def test_event_term_zero_when_frames_agree_on_mask():
    obs = torch.tensor([[1.0, 0.3], [0.0, -0.7]], dtype=torch.float64)
    gamma = (obs != 0).to(torch.float64)
    gen = obs.clone()
    gen[1, 0] = 0.42  # unmasked pixel may differ freely
    e_ev, _ = event_terms_t(gen, obs, gamma)
    assert float(e_ev) == 0.0


def test_no_event_floor_at_static_state():
    # theta = prev on an all-zero input frame: every pixel contributes g(0)^2
    ctx = _ctx("parametric")
    p = ParamSet(rigid=RigidTransform.identity(), theta=np.zeros(9))
    g0 = smooth_threshold(0.0, ctx.thresh)
    expected = 32 * 32 * g0 ** 2
    assert ctx.terms(p)["no_event"] == pytest.approx(expected, rel=1e-9)


def test_no_event_term_zero_when_frame_is_full():
    ctx = _ctx("parametric", frame_values=np.ones((32, 32)))
    p = ParamSet(rigid=RigidTransform.identity(), theta=np.zeros(9))
    assert ctx.terms(p)["no_event"] == 0.0


def test_no_event_single_unmasked_pixel():
    gen = torch.tensor([[-0.3, 0.0]], dtype=torch.float64)
    obs = torch.tensor([[0.0, 1.0]], dtype=torch.float64)
    gamma = (obs != 0).to(torch.float64)
    _, e_noev = event_terms_t(gen, obs, gamma)
    assert float(e_noev) == pytest.approx(0.09)


# ---------------------------------------------------------------------------
# temporal regularizer


def test_reg_zero_at_previous():
    p = ParamSet(rigid=RigidTransform.identity(), theta=np.zeros(6))
    assert e_reg(p, p) == 0.0


def test_reg_single_component():
    a = ParamSet(rigid=RigidTransform.identity(), theta=np.zeros(6))
    t = np.zeros(6)
    t[3] = 2.0
    b = ParamSet(rigid=RigidTransform.identity(), theta=t)
    assert e_reg(b, a) == 4.0


def test_reg_measures_axis_angle_components_directly():
    rng = np.random.default_rng(0)
    fa = rng.standard_normal(12)
    fb = rng.standard_normal(12)
    like = ParamSet(rigid=RigidTransform.identity(), vertices=np.zeros((2, 3)))
    a = ParamSet.unflatten(fa, like)
    b = ParamSet.unflatten(fb, like)
    assert e_reg(a, b) == pytest.approx(((fa - fb) ** 2).sum(), rel=1e-12)


# ---------------------------------------------------------------------------
# topology term


def test_top_zero_on_template():
    mesh = make_sheet(4, 4)
    adj = build_adjacency(mesh)
    assert e_top(mesh.template_vertices, mesh.template_vertices, adj) == 0.0


def test_top_zero_under_translation():
    mesh = make_sheet(4, 4)
    adj = build_adjacency(mesh)
    moved = mesh.template_vertices + np.array([0.3, -1.2, 0.8])
    assert e_top(moved, mesh.template_vertices, adj) == pytest.approx(0.0, abs=1e-18)


def test_top_single_vertex_perturbation():
    # moving one vertex with k neighbors by d costs 2 k ||d||^2
    mesh = make_sheet(4, 4)
    adj = build_adjacency(mesh)
    idx = 5
    k = len(adj.neighbors[idx])
    d = np.array([0.03, -0.02, 0.05])
    moved = mesh.template_vertices.copy()
    moved[idx] += d
    expected = 2.0 * k * (d @ d)
    assert e_top(moved, mesh.template_vertices, adj) == pytest.approx(expected, rel=1e-12)


# ---------------------------------------------------------------------------
# isometry term


def test_iso_zero_under_rigid_motion():
    from evtrack import apply_rigid
    mesh = make_sheet(4, 4)
    adj = build_adjacency(mesh)
    moved = apply_rigid(mesh.template_vertices,
                        RigidTransform(np.array([1.0, 2, 3]), np.array([0.3, -0.2, 0.5])))
    assert e_iso(moved, mesh.template_vertices, adj) == pytest.approx(0.0, abs=1e-18)


def test_iso_uniform_scale():
    mesh = make_sheet(4, 4)
    adj = build_adjacency(mesh)
    s = 1.3
    center = mesh.template_vertices.mean(0)
    scaled = center + s * (mesh.template_vertices - center)
    # oracle: sum (s-1)^2 ||edge||^2 over ordered pairs
    i, j = adj.pairs.T
    edges = mesh.template_vertices[i] - mesh.template_vertices[j]
    expected = (s - 1.0) ** 2 * (edges ** 2).sum()
    assert e_iso(scaled, mesh.template_vertices, adj) == pytest.approx(expected, rel=1e-9)


# ---------------------------------------------------------------------------
# geodesic term


def test_geo_zero_on_template():
    mesh = make_sheet(4, 4)
    geo = template_geodesics(mesh, subsample_vertices(mesh, 3))
    assert e_geo(mesh.template_vertices, geo) == 0.0


def test_geo_zero_under_rigid_motion():
    from evtrack import apply_rigid
    mesh = make_sheet(4, 4)
    geo = template_geodesics(mesh, subsample_vertices(mesh, 3))
    moved = apply_rigid(mesh.template_vertices,
                        RigidTransform(np.array([-0.5, 0.1, 2.0]), np.array([1.0, 0.2, -0.3])))
    assert e_geo(moved, geo) == pytest.approx(0.0, abs=1e-18)


def test_geo_uniform_scale_on_strip():
    # on a strip whose shortest paths follow the x axis, uniform scale s makes
    # every pair distance s * d, so each ordered-pair term is ((s-1) d)^2
    v = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [1, 5, 0.0]])
    mesh = TriMesh.from_arrays(v, [[0, 1, 3], [1, 2, 3]])
    geo = template_geodesics(mesh, np.array([0, 1, 2]))
    s = 1.7
    scaled = s * mesh.template_vertices
    expected = 2.0 * ((s - 1.0) * geo.pair_dist ** 1.0) @ ((s - 1.0) * geo.pair_dist)
    assert e_geo(scaled, geo) == pytest.approx(expected, rel=1e-9)


def test_geo_single_sample_is_zero():
    mesh = make_sheet(4, 4)
    geo = template_geodesics(mesh, np.array([0]))
    assert geo.n_pairs == 0
    assert e_geo(mesh.template_vertices + 1.0, geo) == 0.0


# ---------------------------------------------------------------------------
# totals


def test_total_parametric_is_weighted_sum():
    ctx = _ctx("parametric", weights=ObjectiveWeights(lam=10.0, lam1=0.1))
    theta = np.zeros(9)
    theta[5] = 0.2
    p = ParamSet(rigid=RigidTransform.identity(), theta=theta)
    terms = ctx.terms(p)
    expected = terms["event"] + 0.1 * terms["no_event"] + 10.0 * terms["reg"]
    assert total_parametric(ctx, p) == pytest.approx(expected, rel=1e-12)
    assert set(terms) == {"event", "no_event", "reg"}


def test_total_mesh_is_weighted_sum_with_paper_defaults():
    ctx = _ctx("mesh")
    bent = ctx.model.template_vertices.copy()
    bent[:, 2] -= 0.1 * np.sin(np.pi * (bent[:, 0] + 0.5))
    p = ParamSet(rigid=RigidTransform(np.array([0.01, 0, 0]), np.zeros(3)),
                 vertices=bent)
    terms = ctx.terms(p)
    w = ctx.weights
    expected = (terms["event"] + w.lam_sil * terms["sil"] + w.lam_top * terms["top"]
                + w.lam_iso * terms["iso"] + w.lam_geo * terms["geo"]
                + w.lam_reg * terms["reg"])
    assert total_mesh(ctx, p) == pytest.approx(expected, rel=1e-12)
    # branch-appropriate term sets: mesh omits no-event
    assert set(terms) == {"event", "sil", "top", "iso", "geo", "reg"}


def test_total_weight_toggling_is_linear():
    base = _ctx("mesh")
    bent = base.model.template_vertices.copy()
    bent[:, 2] -= 0.08 * np.sin(np.pi * (bent[:, 0] + 0.5))
    p = ParamSet(rigid=RigidTransform.identity(), vertices=bent)
    terms = base.terms(p)
    for name, key in [("lam_top", "top"), ("lam_iso", "iso"), ("lam_geo", "geo"),
                      ("lam_reg", "reg")]:
        for scale in (0.0, 2.0):
            w = {f: getattr(ObjectiveWeights(), f) for f in
                 ("lam", "lam1", "lam_sil", "lam_top", "lam_iso", "lam_geo", "lam_reg")}
            w[name] = scale
            ctx = _ctx("mesh", weights=ObjectiveWeights(**w))
            delta = total_mesh(ctx, p) - total_mesh(base, p)
            expected = (scale - getattr(ObjectiveWeights(), name)) * terms[key]
            assert delta == pytest.approx(expected, rel=1e-9, abs=1e-12)


def test_every_term_nonnegative():
    ctx = _ctx("mesh")
    rng = np.random.default_rng(3)
    bent = ctx.model.template_vertices + 0.03 * rng.standard_normal((16, 3))
    p = ParamSet(rigid=RigidTransform.identity(), vertices=bent)
    assert all(v >= 0.0 for v in ctx.terms(p).values())


def test_weights_reject_negative():
    with pytest.raises(ValueError):
        ObjectiveWeights(lam=-1.0)
