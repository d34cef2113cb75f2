"""Procedural test objects and their deformation scripts.

Built-in scenes stand in for authored animation assets: a bending sheet, an
inflating sphere, a sliding sheet, and an articulated capsule chain driven
by linear blend skinning. Each scene exposes its template model and the
ground-truth parameters as a function of normalized time tau in [0, 1].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .geometry import ArticulatedModel, ParamSet, RigidTransform, TriMesh

SCENE_DEPTH = 2.5  # default object distance from the camera, scene units


def _orient_faces(verts: np.ndarray, faces: np.ndarray, outward) -> np.ndarray:
    """Flip triangles whose normal disagrees with an outward direction field.

    ``outward`` maps face centroids (F, 3) to desired normal directions.
    """
    tri = verts[faces]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    flip = (n * outward(tri.mean(axis=1))).sum(axis=1) < 0
    fixed = faces.copy()
    fixed[flip] = fixed[flip][:, [0, 2, 1]]
    return fixed


# ---------------------------------------------------------------------------
# procedural geometry


def make_sheet(nx: int = 10, ny: int = 10, size: float = 1.0,
               depth: float = SCENE_DEPTH) -> TriMesh:
    """Regular nx x ny vertex grid in the x-y plane, facing the camera."""
    if nx < 2 or ny < 2:
        raise ConfigError("sheet needs at least 2x2 vertices")
    xs = np.linspace(-size / 2, size / 2, nx)
    ys = np.linspace(-size / 2, size / 2, ny)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    verts = np.stack([gx.ravel(), gy.ravel(), np.full(nx * ny, depth)], axis=1)
    faces = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            a = j * nx + i
            b = a + 1
            c = a + nx
            d = c + 1
            # wound so normals face the camera (-z)
            faces.append([a, c, b])
            faces.append([b, c, d])
    return TriMesh.from_arrays(verts, np.array(faces, dtype=np.int64))


def make_uv_sphere(rings: int = 9, segments: int = 12, radius: float = 0.4,
                   center=(0.0, 0.0, SCENE_DEPTH)) -> TriMesh:
    """Watertight latitude-longitude sphere with outward normals."""
    if rings < 3 or segments < 3:
        raise ConfigError("sphere needs rings >= 3 and segments >= 3")
    center = np.asarray(center, dtype=np.float64)
    verts = [center + (0.0, 0.0, -radius)]  # front pole (toward the camera)
    for i in range(1, rings):
        phi = math.pi * i / rings
        for k in range(segments):
            th = 2.0 * math.pi * k / segments
            verts.append(center + radius * np.array([
                math.sin(phi) * math.cos(th),
                math.sin(phi) * math.sin(th),
                -math.cos(phi),
            ]))
    verts.append(center + (0.0, 0.0, radius))  # back pole
    back = len(verts) - 1
    faces = []
    ring0 = 1
    for k in range(segments):
        k2 = (k + 1) % segments
        faces.append([0, ring0 + k, ring0 + k2])
    for i in range(rings - 2):
        a0 = ring0 + i * segments
        b0 = a0 + segments
        for k in range(segments):
            k2 = (k + 1) % segments
            faces.append([a0 + k, b0 + k, a0 + k2])
            faces.append([a0 + k2, b0 + k, b0 + k2])
    last = ring0 + (rings - 2) * segments
    for k in range(segments):
        k2 = (k + 1) % segments
        faces.append([back, last + k2, last + k])
    v = np.array(verts)
    f = _orient_faces(v, np.array(faces, dtype=np.int64), lambda c: c - center)
    return TriMesh.from_arrays(v, f)


def make_finger_chain(n_joints: int = 4, ring: int = 8, bone_len: float = 0.3,
                      radius: float = 0.1, base=(0.0, -0.45, SCENE_DEPTH),
                      zig: float = 0.03) -> ArticulatedModel:
    """Capsule-like articulated tube: a chain of bones along +y.

    Rings of `ring` vertices sit at every joint and at the tip; a ring shared
    by two bones is skinned half-and-half so each joint position is exactly
    recoverable as its ring centroid (the joint regressor). A small `zig`
    offsets joints alternately in x so the joint set is never collinear.
    """
    if n_joints < 2 or ring < 3:
        raise ConfigError("chain needs n_joints >= 2 and ring >= 3")
    base = np.asarray(base, dtype=np.float64)
    offsets = np.zeros((n_joints, 3))
    offsets[0] = base
    for j in range(1, n_joints):
        dx = zig if j % 2 else -zig
        offsets[j] = (dx, bone_len, 0.0)
    joints = np.zeros((n_joints, 3))
    joints[0] = offsets[0]
    for j in range(1, n_joints):
        joints[j] = joints[j - 1] + offsets[j]

    ring_centers = [joints[j] for j in range(n_joints)]
    ring_centers.append(joints[-1] + (0.0, bone_len, 0.0))  # tip ring
    ring_bones = list(range(n_joints)) + [n_joints - 1]

    verts = []
    weights_rows = []
    angles = 2.0 * math.pi * np.arange(ring) / ring
    for idx, center in enumerate(ring_centers):
        for th in angles:
            verts.append(center + radius * np.array([math.cos(th), 0.0, math.sin(th)]))
            w = np.zeros(n_joints)
            j = ring_bones[idx]
            if 0 < idx < n_joints:
                w[j - 1] = 0.5
                w[j] = 0.5
            else:
                w[j] = 1.0
            weights_rows.append(w)
    # cap apexes, fully bound to their end joints
    verts.append(ring_centers[0] - (0.0, 0.6 * radius, 0.0))
    w = np.zeros(n_joints)
    w[0] = 1.0
    weights_rows.append(w)
    verts.append(ring_centers[-1] + (0.0, 0.6 * radius, 0.0))
    w = np.zeros(n_joints)
    w[-1] = 1.0
    weights_rows.append(w)

    n_rings = len(ring_centers)
    base_apex = n_rings * ring
    tip_apex = base_apex + 1
    faces = []
    for s in range(n_rings - 1):
        a0 = s * ring
        b0 = a0 + ring
        for k in range(ring):
            k2 = (k + 1) % ring
            faces.append([a0 + k, a0 + k2, b0 + k])
            faces.append([a0 + k2, b0 + k2, b0 + k])
    for k in range(ring):
        k2 = (k + 1) % ring
        faces.append([base_apex, k2, k])
        top0 = (n_rings - 1) * ring
        faces.append([tip_apex, top0 + k, top0 + k2])

    v = np.array(verts)
    f = np.array(faces, dtype=np.int64)

    def outward(c: np.ndarray) -> np.ndarray:
        radial = np.stack([c[:, 0] - base[0], np.zeros(len(c)), c[:, 2] - base[2]], axis=1)
        has_base = (f == base_apex).any(axis=1)
        has_tip = (f == tip_apex).any(axis=1)
        radial[has_base] = (0.0, -1.0, 0.0)
        radial[has_tip] = (0.0, 1.0, 0.0)
        return radial

    mesh = TriMesh.from_arrays(v, _orient_faces(v, f, outward))
    regressor = np.zeros((n_joints, len(verts)))
    for j in range(n_joints):
        regressor[j, j * ring:(j + 1) * ring] = 1.0 / ring
    parents = np.arange(-1, n_joints - 1)
    return ArticulatedModel(rest_mesh=mesh, joint_parents=parents,
                            joint_offsets=offsets,
                            skin_weights=np.array(weights_rows),
                            joint_regressor=regressor)


# ---------------------------------------------------------------------------
# deformation scripts


@dataclass
class Scene:
    name: str
    branch: str
    model: object  # TriMesh or ArticulatedModel

    def params_at(self, tau: float) -> ParamSet:
        raise NotImplementedError


@dataclass
class SheetScene(Scene):
    amplitude: float = 0.5
    cycles: float = 1.0

    def params_at(self, tau: float) -> ParamSet:
        tpl = self.model.template_vertices
        x = tpl[:, 0]
        u = (x - x.min()) / max(x.max() - x.min(), 1e-12)
        bump = (self.amplitude * np.sin(math.pi * u)
                * math.sin(2.0 * math.pi * self.cycles * tau))
        verts = tpl.copy()
        verts[:, 2] -= bump  # bulge toward the camera
        return ParamSet(rigid=RigidTransform.identity(), vertices=verts)


@dataclass
class SphereScene(Scene):
    amplitude: float = 0.5  # fractional radius swing is amplitude / 2
    cycles: float = 1.0

    def params_at(self, tau: float) -> ParamSet:
        tpl = self.model.template_vertices
        center = tpl.mean(axis=0)
        scale = 1.0 + 0.5 * self.amplitude * math.sin(2.0 * math.pi * self.cycles * tau)
        verts = center + (tpl - center) * scale
        return ParamSet(rigid=RigidTransform.identity(), vertices=verts)


@dataclass
class SlideScene(Scene):
    speed: float = 0.15  # total x translation over tau in [0, 1]

    def params_at(self, tau: float) -> ParamSet:
        rigid = RigidTransform(np.array([self.speed * tau, 0.0, 0.0]), np.zeros(3))
        return ParamSet(rigid=rigid, vertices=self.model.template_vertices.copy())


@dataclass
class ChainScene(Scene):
    amplitude: float = 0.5  # peak bend per joint, radians
    cycles: float = 1.0

    def params_at(self, tau: float) -> ParamSet:
        n = self.model.n_joints
        theta = np.zeros(3 * n)
        for j in range(1, n):
            phase = 0.4 * j
            # bend about z: in-plane motion the camera sees directly
            theta[3 * j + 2] = self.amplitude * math.sin(
                2.0 * math.pi * self.cycles * tau + phase)
        return ParamSet(rigid=RigidTransform.identity(), theta=theta)


def build_scene(cfg) -> Scene:
    """Instantiate the configured scene with its template model."""
    if cfg.scene == "sheet":
        return SheetScene("sheet", "mesh", make_sheet(cfg.sheet_nx, cfg.sheet_ny),
                          amplitude=cfg.amplitude, cycles=cfg.cycles)
    if cfg.scene == "sphere":
        return SphereScene("sphere", "mesh",
                           make_uv_sphere(cfg.sphere_rings, cfg.sphere_segments),
                           amplitude=cfg.amplitude, cycles=cfg.cycles)
    if cfg.scene == "slide":
        return SlideScene("slide", "mesh", make_sheet(cfg.sheet_nx, cfg.sheet_ny),
                          speed=cfg.speed)
    if cfg.scene == "chain":
        return ChainScene("chain", "parametric",
                          make_finger_chain(cfg.chain_joints, cfg.chain_ring),
                          amplitude=cfg.amplitude, cycles=cfg.cycles)
    raise ConfigError(f"unknown scene {cfg.scene!r}")


# ---------------------------------------------------------------------------
# articulated model serialization


def save_model_json(model: ArticulatedModel, path) -> None:
    doc = {
        "rest_vertices": model.rest_mesh.template_vertices.tolist(),
        "faces": model.rest_mesh.faces.tolist(),
        "joint_parents": model.joint_parents.tolist(),
        "joint_offsets": model.joint_offsets.tolist(),
        "skin_weights": model.skin_weights.tolist(),
        "joint_regressor": model.joint_regressor.tolist(),
    }
    Path(path).write_text(json.dumps(doc))


def load_model_json(path) -> ArticulatedModel:
    doc = json.loads(Path(path).read_text())
    mesh = TriMesh.from_arrays(np.array(doc["rest_vertices"]),
                               np.array(doc["faces"], dtype=np.int64))
    return ArticulatedModel(rest_mesh=mesh,
                            joint_parents=np.array(doc["joint_parents"], dtype=np.int64),
                            joint_offsets=np.array(doc["joint_offsets"]),
                            skin_weights=np.array(doc["skin_weights"]),
                            joint_regressor=np.array(doc["joint_regressor"]))
