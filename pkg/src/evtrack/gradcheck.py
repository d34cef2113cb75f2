"""Finite-difference verification of every energy term and both totals.

Each check compares the autodiff gradient against the central-difference
oracle on a small fixture (a bumped sheet for the mesh branch, a bent capsule
chain for the parametric branch) and reports the relative infinity-norm
error. The silhouette term is checked with frozen event-to-vertex
assignments, which is also how it is differentiated during tracking.
"""

from __future__ import annotations

import numpy as np
import torch

from .events import EventFrame, ThresholdParams, filter_noise, generated_frame_t
from .geometry import (ParamSet, RigidTransform, build_adjacency, posed_vertices,
                       subsample_vertices, template_geodesics)
from .objective import FrameContext, ObjectiveWeights
from .optim import fd_gradient, gradient
from .render import Camera, RasterSettings, soft_render_t
from .scenes import make_finger_chain, make_sheet

_CAMERA = dict(fx=48.0, fy=48.0, cx=15.5, cy=15.5, width=32, height=32)
_THRESH = ThresholdParams(c=10.0 / 255.0, w=5.0 * 255.0 / 10.0, eps=1e-3)


def _rel_err(analytic: np.ndarray, fd: np.ndarray) -> float:
    scale = max(np.abs(fd).max(), 1e-12)
    return float(np.abs(analytic - fd).max() / scale)


def _observed_frame(model, prev: ParamSet, target: ParamSet, camera, settings):
    """Event frame a camera would have seen between two states: the thresholded
    render difference, small responses zeroed out."""
    from .geometry import model_faces
    faces = model_faces(model)
    with torch.no_grad():
        a = soft_render_t(torch.from_numpy(posed_vertices(model, prev)), faces,
                          camera, settings)
        b = soft_render_t(torch.from_numpy(posed_vertices(model, target)), faces,
                          camera, settings)
        values = generated_frame_t(b, a, _THRESH).numpy()
    values[np.abs(values) < 0.5] = 0.0
    return EventFrame(values=np.clip(values, -1.0, 1.0), t_first=0, t_last=1, count=1)


def _mesh_fixture(seed: int):
    rng = np.random.default_rng(seed)
    mesh = make_sheet(4, 4, size=1.0)
    camera = Camera(**_CAMERA)
    settings = RasterSettings()
    prev = ParamSet(rigid=RigidTransform.identity(),
                    vertices=mesh.template_vertices.copy())

    bent = mesh.template_vertices.copy()
    bent[:, 2] -= 0.2 * np.sin(np.pi * (bent[:, 0] + 0.5))
    target = ParamSet(rigid=RigidTransform.identity(), vertices=bent)
    frame = _observed_frame(mesh, prev, target, camera, settings)

    # gradients are taken at a partially fitted state away from the optimum
    halfway = mesh.template_vertices + 0.5 * (bent - mesh.template_vertices)
    at = ParamSet(rigid=RigidTransform(np.array([0.004, -0.003, 0.002]),
                                       np.array([0.01, -0.008, 0.006])),
                  vertices=halfway + 0.002 * rng.standard_normal(halfway.shape))

    ctx = FrameContext(branch="mesh", model=mesh, camera=camera, settings=settings,
                       thresh=_THRESH, weights=ObjectiveWeights(), prev=prev,
                       input_frame=frame, adjacency=build_adjacency(mesh),
                       geo=template_geodesics(mesh, subsample_vertices(mesh, 3)),
                       relevant_events=filter_noise(frame, min_count=2),
                       freeze_sil=True)
    return ctx, at


def _parametric_fixture(seed: int):
    rng = np.random.default_rng(seed + 1)
    model = make_finger_chain(n_joints=3, ring=6, bone_len=0.35, radius=0.12)
    camera = Camera(**_CAMERA)
    settings = RasterSettings()
    prev = ParamSet(rigid=RigidTransform.identity(), theta=np.zeros(9))
    bent = np.zeros(9)
    bent[5] = 0.5   # bend about z at joint 1
    bent[8] = -0.3  # counter-bend at joint 2
    target = ParamSet(rigid=RigidTransform.identity(), theta=bent)
    frame = _observed_frame(model, prev, target, camera, settings)

    at = ParamSet(rigid=RigidTransform(np.array([0.003, 0.002, -0.004]),
                                       np.array([0.006, -0.004, 0.008])),
                  theta=0.5 * bent + 0.02 * rng.standard_normal(9))
    ctx = FrameContext(branch="parametric", model=model, camera=camera,
                       settings=settings, thresh=_THRESH,
                       weights=ObjectiveWeights(), prev=prev, input_frame=frame)
    return ctx, at


def _check(ctx: FrameContext, params: ParamSet, pick, h: float) -> float:
    def fn(flat: torch.Tensor) -> torch.Tensor:
        return pick(ctx, flat)

    flat = params.flatten()
    if ctx.freeze_sil:
        ctx._sil_cache = None
        with torch.no_grad():
            fn(torch.from_numpy(flat))  # prime the frozen assignment
    analytic = gradient(fn, flat)
    fd = fd_gradient(fn, flat, h)
    return _rel_err(analytic, fd)


def _term(name: str):
    return lambda c, flat: c.terms_t(flat)[name]


def run_gradcheck(seed: int = 0, h: float = 1e-6) -> dict:
    """Relative autodiff-vs-central-difference error per term and total."""
    results = {}
    ctx, at = _mesh_fixture(seed)
    for name in ("event", "sil", "top", "iso", "geo", "reg"):
        results[f"mesh/{name}"] = _check(ctx, at, _term(name), h)
    results["mesh/total"] = _check(ctx, at, lambda c, flat: c.total_t(flat), h)

    pctx, pat = _parametric_fixture(seed)
    for name in ("event", "no_event", "reg"):
        results[f"parametric/{name}"] = _check(pctx, pat, _term(name), h)
    results["parametric/total"] = _check(pctx, pat, lambda c, flat: c.total_t(flat), h)
    return results
