"""Energy terms and total objectives for the two tracking branches.

The parametric branch (pose vector + rigid) minimizes event, no-event, and
temporal-smoothness terms. The mesh branch (free vertices + rigid) swaps the
no-event term for silhouette, topology, isometry, and geodesic
regularization. Every term is a differentiable scalar of the flattened
parameter vector; the previous frame's image is rendered once per frame and
cached.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import NonFiniteObjectiveError, TrackingError
from .events import EventFrame, ThresholdParams, generated_frame_t
from .geometry import (Adjacency, ArticulatedModel, GeodesicPaths, ParamSet,
                       TriMesh, apply_rigid_t, lbs_t, posed_vertices,
                       template_mesh)
from .render import Camera, RasterSettings, project_t, soft_render_t


@dataclass(frozen=True)
class ObjectiveWeights:
    """Energy weights; defaults follow the reference hyperparameter set."""

    lam: float = 10.0       # temporal regularizer, parametric branch
    lam1: float = 0.1       # no-event term
    lam_sil: float = 0.01   # silhouette term
    lam_top: float = 1.0    # topology preservation
    lam_iso: float = 1.0    # edge-length isometry
    lam_geo: float = 1.0    # geodesic preservation
    lam_reg: float = 10.0   # temporal regularizer, mesh branch

    def __post_init__(self):
        for name in ("lam", "lam1", "lam_sil", "lam_top", "lam_iso", "lam_geo", "lam_reg"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class EventMask:
    """Indicator grid of pixels holding at least one accumulated event."""

    gamma: np.ndarray

    @classmethod
    def from_frame(cls, frame: EventFrame) -> "EventMask":
        return cls((frame.values != 0).astype(np.float64))

    @property
    def gamma_bar(self) -> np.ndarray:
        return 1.0 - self.gamma


# ---------------------------------------------------------------------------
# torch term cores


def event_terms_t(gen: torch.Tensor, observed: torch.Tensor, gamma: torch.Tensor):
    """(event, no-event) pair: masked and complement-masked squared residuals."""
    on = gamma * (observed - gen)
    off = (1.0 - gamma) * gen
    return (on * on).sum(), (off * off).sum()


def reg_t(flat: torch.Tensor, prev_flat: torch.Tensor) -> torch.Tensor:
    d = flat - prev_flat
    return (d * d).sum()


def top_t(v: torch.Tensor, tpl: torch.Tensor, pi: torch.Tensor, pj: torch.Tensor):
    d = (v[pi] - v[pj]) - (tpl[pi] - tpl[pj])
    return (d * d).sum()


def iso_t(v: torch.Tensor, tpl: torch.Tensor, pi: torch.Tensor, pj: torch.Tensor):
    cur = (v[pi] - v[pj]).norm(dim=1)
    ref = (tpl[pi] - tpl[pj]).norm(dim=1)
    return ((cur - ref) ** 2).sum()


def geo_t(v: torch.Tensor, edge_u: torch.Tensor, edge_v: torch.Tensor,
          edge_pair: torch.Tensor, pair_dist: torch.Tensor, n_pairs: int):
    """Geodesics re-measured along the template shortest-path edge sequences.

    The factor 2 counts each unordered sample pair in both directions.
    """
    if n_pairs == 0:
        return v.new_zeros(())
    seg = (v[edge_u] - v[edge_v]).norm(dim=1)
    cur = v.new_zeros(n_pairs).index_add(0, edge_pair, seg)
    return 2.0 * ((cur - pair_dist) ** 2).sum()


# ---------------------------------------------------------------------------
# per-frame evaluation context


@dataclass
class FrameContext:
    """Everything held fixed while fitting a single event frame."""

    branch: str                      # "parametric" | "mesh"
    model: object                    # ArticulatedModel or TriMesh
    camera: Camera
    settings: RasterSettings
    thresh: ThresholdParams
    weights: ObjectiveWeights
    prev: ParamSet
    input_frame: EventFrame
    adjacency: Adjacency | None = None
    geo: GeodesicPaths | None = None
    relevant_events: np.ndarray | None = None  # (K, 2) x, y pixels
    # visibility slack for the silhouette term; the soft depth map blends
    # adjacent faces, so this must exceed the blending scale (~gamma units)
    vis_tol: float = 0.05
    freeze_sil: bool = False

    def __post_init__(self):
        if self.branch not in ("parametric", "mesh"):
            raise ValueError(f"unknown branch {self.branch!r}")
        if self.branch == "mesh" and (self.adjacency is None or self.geo is None):
            raise ValueError("mesh branch requires adjacency and geodesic context")
        tpl = template_mesh(self.model)
        self._faces = tpl.faces
        self._tpl = torch.from_numpy(tpl.template_vertices.copy())
        self._prev_flat = torch.from_numpy(self.prev.flatten())
        self._observed = torch.from_numpy(self.input_frame.values.copy())
        self._gamma = torch.from_numpy((self.input_frame.values != 0).astype(np.float64))
        if self.branch == "parametric":
            m: ArticulatedModel = self.model
            self._rest = torch.from_numpy(m.rest_mesh.template_vertices.copy())
            self._skin = torch.from_numpy(m.skin_weights)
            self._joints = torch.from_numpy(m.rest_joints())
            self._offsets = torch.from_numpy(m.joint_offsets)
            self._parents = [int(p) for p in m.joint_parents]
        else:
            pi, pj = (self.adjacency.pairs.T if len(self.adjacency.pairs)
                      else (np.empty(0, np.int64), np.empty(0, np.int64)))
            self._pi = torch.from_numpy(np.ascontiguousarray(pi))
            self._pj = torch.from_numpy(np.ascontiguousarray(pj))
            self._geo_eu = torch.from_numpy(self.geo.edge_u)
            self._geo_ev = torch.from_numpy(self.geo.edge_v)
            self._geo_ep = torch.from_numpy(self.geo.edge_pair)
            self._geo_d = torch.from_numpy(self.geo.pair_dist)
            ev = self.relevant_events
            self._events = (torch.from_numpy(ev.astype(np.float64))
                            if ev is not None and len(ev) else None)
        with torch.no_grad():
            prev_v = torch.from_numpy(posed_vertices(self.model, self.prev))
            self._prev_img = soft_render_t(prev_v, self._faces, self.camera, self.settings)
        self._sil_cache = None

    # -- parameter mapping ------------------------------------------------

    def posed_t(self, flat: torch.Tensor) -> torch.Tensor:
        """World-frame vertices as a differentiable function of the flat vector."""
        t, r = flat[0:3], flat[3:6]
        if self.branch == "parametric":
            return lbs_t(self._rest, self._skin, self._joints, self._offsets,
                         self._parents, flat[6:], t, r)
        return apply_rigid_t(flat[6:].reshape(-1, 3), t, r)

    # -- terms -------------------------------------------------------------

    def _sil_assignment(self, posed: torch.Tensor, depth: torch.Tensor):
        """Nearest visible vertex per relevant event; fixed during differentiation."""
        if self.freeze_sil and self._sil_cache is not None:
            return self._sil_cache
        with torch.no_grad():
            pix, z = project_t(posed, self.camera)
            ui = pix[:, 0].round().long()
            vi = pix[:, 1].round().long()
            inb = ((ui >= 0) & (ui < self.camera.width)
                   & (vi >= 0) & (vi < self.camera.height) & (z > 0))
            d_at = torch.full_like(z, float("inf"))
            d_at[inb] = depth[vi[inb], ui[inb]]
            visible = inb & ((z - d_at).abs() <= self.vis_tol)
            if not bool(visible.any()):
                raise TrackingError("no visible vertices for the silhouette term")
            vis_idx = visible.nonzero(as_tuple=False).squeeze(1)
            d2 = torch.cdist(self._events, pix[vis_idx])
            assign = vis_idx[d2.argmin(dim=1)]
        if self.freeze_sil:
            self._sil_cache = assign
        return assign

    def sil_t(self, posed: torch.Tensor, depth: torch.Tensor) -> torch.Tensor:
        if self._events is None:
            return posed.new_zeros(())
        assign = self._sil_assignment(posed, depth)
        pix, _ = project_t(posed[assign], self.camera)
        d = pix - self._events
        return (d * d).sum()

    def terms_t(self, flat: torch.Tensor) -> dict:
        posed = self.posed_t(flat)
        need_depth = self.branch == "mesh"
        rendered = soft_render_t(posed, self._faces, self.camera, self.settings,
                                 with_depth=need_depth)
        img, depth = rendered if need_depth else (rendered, None)
        gen = generated_frame_t(img, self._prev_img, self.thresh)
        e_ev, e_noev = event_terms_t(gen, self._observed, self._gamma)
        terms = {"event": e_ev, "reg": reg_t(flat, self._prev_flat)}
        if self.branch == "parametric":
            terms["no_event"] = e_noev
        else:
            terms["sil"] = self.sil_t(posed, depth)
            terms["top"] = top_t(posed, self._tpl, self._pi, self._pj)
            terms["iso"] = iso_t(posed, self._tpl, self._pi, self._pj)
            terms["geo"] = geo_t(posed, self._geo_eu, self._geo_ev, self._geo_ep,
                                 self._geo_d, self.geo.n_pairs)
        return terms

    def total_t(self, flat: torch.Tensor) -> torch.Tensor:
        terms = self.terms_t(flat)
        for name, val in terms.items():
            if not torch.isfinite(val):
                raise NonFiniteObjectiveError(name, float(val))
        w = self.weights
        if self.branch == "parametric":
            return terms["event"] + w.lam1 * terms["no_event"] + w.lam * terms["reg"]
        return (terms["event"] + w.lam_sil * terms["sil"] + w.lam_top * terms["top"]
                + w.lam_iso * terms["iso"] + w.lam_geo * terms["geo"]
                + w.lam_reg * terms["reg"])

    def terms(self, params: ParamSet) -> dict:
        with torch.no_grad():
            return {k: float(v) for k, v in
                    self.terms_t(torch.from_numpy(params.flatten())).items()}

    def total(self, params: ParamSet) -> float:
        with torch.no_grad():
            return float(self.total_t(torch.from_numpy(params.flatten())))


# ---------------------------------------------------------------------------
# operation-level API (thin wrappers over the torch cores)


def e_event(ctx: FrameContext, params: ParamSet) -> float:
    """Masked squared difference between observed and generated event frames."""
    return ctx.terms(params)["event"]


def e_no_event(ctx: FrameContext, params: ParamSet) -> float:
    """Squared generated-frame magnitude where the observed frame is empty."""
    with torch.no_grad():
        flat = torch.from_numpy(params.flatten())
        posed = ctx.posed_t(flat)
        img = soft_render_t(posed, ctx._faces, ctx.camera, ctx.settings)
        gen = generated_frame_t(img, ctx._prev_img, ctx.thresh)
        return float(event_terms_t(gen, ctx._observed, ctx._gamma)[1])


def e_reg(params: ParamSet, prev: ParamSet) -> float:
    """Squared L2 norm of the flattened parameter change."""
    d = params.flatten() - prev.flatten()
    return float(d @ d)


def e_sil(ctx: FrameContext, params: ParamSet) -> float:
    """Distance from relevant events to the nearest visible projected vertices."""
    with torch.no_grad():
        flat = torch.from_numpy(params.flatten())
        posed = ctx.posed_t(flat)
        _, depth = soft_render_t(posed, ctx._faces, ctx.camera, ctx.settings,
                                 with_depth=True)
        return float(ctx.sil_t(posed, depth))


def e_top(vertices, template, adjacency: Adjacency) -> float:
    """Neighbor-relative position drift against the template (ordered pairs)."""
    if len(adjacency.pairs) == 0:
        return 0.0
    pi, pj = adjacency.pairs.T
    with torch.no_grad():
        return float(top_t(torch.as_tensor(vertices, dtype=torch.float64),
                           torch.as_tensor(template, dtype=torch.float64),
                           torch.from_numpy(np.ascontiguousarray(pi)),
                           torch.from_numpy(np.ascontiguousarray(pj))))


def e_iso(vertices, template, adjacency: Adjacency) -> float:
    """Edge-length drift against the template (ordered pairs)."""
    if len(adjacency.pairs) == 0:
        return 0.0
    pi, pj = adjacency.pairs.T
    with torch.no_grad():
        return float(iso_t(torch.as_tensor(vertices, dtype=torch.float64),
                           torch.as_tensor(template, dtype=torch.float64),
                           torch.from_numpy(np.ascontiguousarray(pi)),
                           torch.from_numpy(np.ascontiguousarray(pj))))


def e_geo(vertices, geo: GeodesicPaths) -> float:
    """Sampled geodesic-length drift against the template distances."""
    with torch.no_grad():
        return float(geo_t(torch.as_tensor(vertices, dtype=torch.float64),
                           torch.from_numpy(geo.edge_u), torch.from_numpy(geo.edge_v),
                           torch.from_numpy(geo.edge_pair), torch.from_numpy(geo.pair_dist),
                           geo.n_pairs))


def total_parametric(ctx: FrameContext, params: ParamSet) -> float:
    """event + lam1 * no_event + lam * reg."""
    if ctx.branch != "parametric":
        raise ValueError("context was built for the mesh branch")
    return ctx.total(params)


def total_mesh(ctx: FrameContext, params: ParamSet) -> float:
    """event + lam_sil*sil + lam_top*top + lam_iso*iso + lam_geo*geo + lam_reg*reg."""
    if ctx.branch != "mesh":
        raise ValueError("context was built for the parametric branch")
    return ctx.total(params)
