"""Meshes, rigid transforms, linear blend skinning, geodesics, and alignment.

All operations are pure functions on immutable inputs. Parameter vectors
follow a fixed flattening order: ``[tx, ty, tz, rx, ry, rz]`` (global rigid
transform, rotation as an axis-angle vector) followed by the pose vector
``theta`` or the row-major free vertices, depending on the branch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

from .errors import AlignmentError, MeshError, ParameterShapeError

RIGID_DIM = 6


def _as_f64(a) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a, dtype=np.float64))


# ---------------------------------------------------------------------------
# core types


@dataclass
class TriMesh:
    """Triangle mesh carrying an immutable reference (template) vertex set."""

    vertices: np.ndarray           # (N, 3) current positions
    faces: np.ndarray              # (F, 3) vertex index triples
    template_vertices: np.ndarray  # (N, 3) reference positions, read-only

    def __post_init__(self):
        self.vertices = _as_f64(self.vertices).reshape(-1, 3)
        self.faces = np.ascontiguousarray(np.asarray(self.faces, dtype=np.int64)).reshape(-1, 3)
        self.template_vertices = _as_f64(self.template_vertices).reshape(-1, 3)
        if self.template_vertices.shape != self.vertices.shape:
            raise MeshError(
                f"template has {len(self.template_vertices)} vertices, mesh has {len(self.vertices)}"
            )
        if self.faces.size:
            if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
                raise MeshError("face index out of range")
            a, b, c = self.faces.T
            if np.any((a == b) | (b == c) | (a == c)):
                raise MeshError("degenerate face (repeated vertex index)")
        self.template_vertices.setflags(write=False)

    @classmethod
    def from_arrays(cls, vertices, faces) -> "TriMesh":
        v = _as_f64(vertices).reshape(-1, 3)
        return cls(vertices=v, faces=faces, template_vertices=v.copy())

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices) -> "TriMesh":
        """Same topology and template, new current vertex positions."""
        return TriMesh(vertices=_as_f64(vertices), faces=self.faces,
                       template_vertices=self.template_vertices)


@dataclass
class Adjacency:
    """Edge adjacency of a mesh: symmetric, no self-loops."""

    neighbors: list  # per-vertex sorted arrays of neighbor indices
    pairs: np.ndarray  # (M, 2) every ordered pair (i, j) with j a neighbor of i


def build_adjacency(mesh: TriMesh) -> Adjacency:
    n = mesh.n_vertices
    if mesh.n_faces == 0:
        return Adjacency([np.empty(0, np.int64) for _ in range(n)],
                         np.empty((0, 2), np.int64))
    e = mesh.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    e = np.unique(np.concatenate([e, e[:, ::-1]]), axis=0)
    counts = np.bincount(e[:, 0], minlength=n)
    neighbors = np.split(e[:, 1].copy(), np.cumsum(counts)[:-1])
    return Adjacency(neighbors, e)


@dataclass
class RigidTransform:
    """Global rigid motion: translation plus axis-angle rotation (radians)."""

    t: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        self.t = _as_f64(self.t).reshape(3)
        self.r = _as_f64(self.r).reshape(3)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.zeros(3), np.zeros(3))

    def matrix(self) -> np.ndarray:
        """3x3 rotation matrix built from the axis-angle vector."""
        with torch.no_grad():
            return rodrigues(torch.from_numpy(self.r)).numpy()


@dataclass
class ParamSet:
    """Per-frame unknowns: a rigid transform plus pose theta or free vertices.

    Flattening order is fixed: rigid first (t then r), then theta or the
    row-major vertex coordinates.
    """

    rigid: RigidTransform
    theta: np.ndarray | None = None
    vertices: np.ndarray | None = None

    def __post_init__(self):
        if (self.theta is None) == (self.vertices is None):
            raise ParameterShapeError("exactly one of theta or vertices must be set")
        if self.theta is not None:
            self.theta = _as_f64(self.theta).ravel()
        else:
            self.vertices = _as_f64(self.vertices).reshape(-1, 3)

    @property
    def is_parametric(self) -> bool:
        return self.theta is not None

    @property
    def dim(self) -> int:
        body = self.theta if self.is_parametric else self.vertices
        return RIGID_DIM + body.size

    def flatten(self) -> np.ndarray:
        body = self.theta if self.is_parametric else self.vertices.ravel()
        return np.concatenate([self.rigid.t, self.rigid.r, body])

    @classmethod
    def unflatten(cls, vec, like: "ParamSet") -> "ParamSet":
        vec = _as_f64(vec).ravel()
        if vec.size != like.dim:
            raise ParameterShapeError(f"expected {like.dim} values, got {vec.size}")
        rigid = RigidTransform(vec[0:3].copy(), vec[3:6].copy())
        if like.is_parametric:
            return cls(rigid=rigid, theta=vec[6:].copy())
        return cls(rigid=rigid, vertices=vec[6:].reshape(-1, 3).copy())


@dataclass
class ArticulatedModel:
    """Minimal linear-blend-skinned model: a joint tree driving a rest mesh."""

    rest_mesh: TriMesh
    joint_parents: np.ndarray    # (J,), parent index; root is joint 0 with parent -1
    joint_offsets: np.ndarray    # (J, 3) rest offset from parent (root: absolute)
    skin_weights: np.ndarray     # (N, J) non-negative rows summing to 1
    joint_regressor: np.ndarray  # (J, N) posed joints = regressor @ posed vertices

    def __post_init__(self):
        self.joint_parents = np.asarray(self.joint_parents, dtype=np.int64).reshape(-1)
        self.joint_offsets = _as_f64(self.joint_offsets).reshape(-1, 3)
        self.skin_weights = _as_f64(self.skin_weights)
        self.joint_regressor = _as_f64(self.joint_regressor)
        j = len(self.joint_parents)
        if self.joint_parents[0] != -1:
            raise MeshError("joint 0 must be the root (parent -1)")
        for k in range(1, j):
            if not 0 <= self.joint_parents[k] < k:
                raise MeshError("joint parents must form a tree rooted at joint 0")
        n = self.rest_mesh.n_vertices
        if self.skin_weights.shape != (n, j):
            raise MeshError(f"skin weights must be ({n}, {j})")
        if self.skin_weights.min() < 0 or np.abs(self.skin_weights.sum(1) - 1.0).max() > 1e-9:
            raise MeshError("skin weight rows must be non-negative and sum to 1")
        if self.joint_regressor.shape != (j, n):
            raise MeshError(f"joint regressor must be ({j}, {n})")

    @property
    def n_joints(self) -> int:
        return len(self.joint_parents)

    def rest_joints(self) -> np.ndarray:
        """Absolute rest-pose joint positions, accumulated along the tree."""
        q = np.zeros((self.n_joints, 3))
        q[0] = self.joint_offsets[0]
        for j in range(1, self.n_joints):
            q[j] = q[self.joint_parents[j]] + self.joint_offsets[j]
        return q


# ---------------------------------------------------------------------------
# rotations and rigid motion


def rodrigues(r: torch.Tensor) -> torch.Tensor:
    """Axis-angle vector to rotation matrix, differentiable at zero rotation."""
    sq = (r * r).sum()
    small = sq < 1e-8
    theta = torch.sqrt(torch.clamp(sq, min=1e-8))
    sq_safe = torch.clamp(sq, min=1e-8)
    a = torch.where(small, 1.0 - sq / 6.0 + sq * sq / 120.0, torch.sin(theta) / theta)
    b = torch.where(small, 0.5 - sq / 24.0 + sq * sq / 720.0, (1.0 - torch.cos(theta)) / sq_safe)
    zero = torch.zeros((), dtype=r.dtype)
    k = torch.stack([
        torch.stack([zero, -r[2], r[1]]),
        torch.stack([r[2], zero, -r[0]]),
        torch.stack([-r[1], r[0], zero]),
    ])
    return torch.eye(3, dtype=r.dtype) + a * k + b * (k @ k)


def rotation_matrix(r) -> np.ndarray:
    with torch.no_grad():
        return rodrigues(torch.from_numpy(_as_f64(r).reshape(3))).numpy()


def apply_rigid_t(vertices: torch.Tensor, t: torch.Tensor, r: torch.Tensor) -> torch.Tensor:
    return vertices @ rodrigues(r).T + t


def apply_rigid(vertices, rigid: RigidTransform) -> np.ndarray:
    """v' = R v + t per vertex; accepts (N, 3) or a single (3,) point."""
    v = _as_f64(vertices)
    with torch.no_grad():
        out = apply_rigid_t(torch.from_numpy(v.reshape(-1, 3)),
                            torch.from_numpy(rigid.t), torch.from_numpy(rigid.r))
    return out.numpy().reshape(v.shape)


# ---------------------------------------------------------------------------
# linear blend skinning


def lbs_t(rest_vertices: torch.Tensor, skin_weights: torch.Tensor,
          rest_joints: torch.Tensor, joint_offsets: torch.Tensor, parents,
          theta: torch.Tensor, t: torch.Tensor, r: torch.Tensor) -> torch.Tensor:
    """Pose a rest mesh by per-joint axis-angle rotations, then rigid motion.

    Joint j rotates everything bound to it about its own (posed) position;
    transforms accumulate down the tree. Displacements are carried in delta
    form so the zero pose reproduces the rest mesh bit-exactly.
    """
    n_joints = len(parents)
    eye = torch.eye(3, dtype=rest_vertices.dtype)
    rot = []    # global joint rotations
    delta = []  # posed minus rest joint positions
    for j in range(n_joints):
        rj = rodrigues(theta[3 * j:3 * j + 3])
        p = parents[j]
        if p < 0:
            rot.append(rj)
            delta.append(torch.zeros(3, dtype=rest_vertices.dtype))
        else:
            rot.append(rot[p] @ rj)
            delta.append(delta[p] + (rot[p] - eye) @ joint_offsets[j])
    move = torch.zeros_like(rest_vertices)
    for j in range(n_joints):
        dj = (rest_vertices - rest_joints[j]) @ (rot[j] - eye).T + delta[j]
        move = move + skin_weights[:, j:j + 1] * dj
    return apply_rigid_t(rest_vertices + move, t, r)


def deform_articulated(model: ArticulatedModel, params: ParamSet) -> TriMesh:
    """Rest mesh deformed by LBS with the pose vector, then the rigid transform."""
    if not params.is_parametric:
        raise ParameterShapeError("deform_articulated requires the parametric variant")
    if params.theta.size != 3 * model.n_joints:
        raise ParameterShapeError(
            f"theta must have {3 * model.n_joints} values, got {params.theta.size}")
    with torch.no_grad():
        posed = lbs_t(
            torch.from_numpy(model.rest_mesh.template_vertices.copy()),
            torch.from_numpy(model.skin_weights),
            torch.from_numpy(model.rest_joints()),
            torch.from_numpy(model.joint_offsets),
            model.joint_parents,
            torch.from_numpy(params.theta),
            torch.from_numpy(params.rigid.t),
            torch.from_numpy(params.rigid.r),
        )
    return model.rest_mesh.with_vertices(posed.numpy())


def posed_joints(model: ArticulatedModel, params: ParamSet) -> np.ndarray:
    """3D joint positions of the posed model via the joint regressor."""
    mesh = deform_articulated(model, params)
    return model.joint_regressor @ mesh.vertices


def posed_vertices(model, params: ParamSet) -> np.ndarray:
    """World-frame vertices for either branch."""
    if params.is_parametric:
        return deform_articulated(model, params).vertices
    return apply_rigid(params.vertices, params.rigid)


def model_faces(model) -> np.ndarray:
    return model.rest_mesh.faces if isinstance(model, ArticulatedModel) else model.faces


def template_mesh(model) -> TriMesh:
    return model.rest_mesh if isinstance(model, ArticulatedModel) else model


# ---------------------------------------------------------------------------
# geodesics on the template edge graph


def subsample_vertices(mesh: TriMesh, stride: int) -> np.ndarray:
    """Every stride-th vertex index of the template."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return np.arange(0, mesh.n_vertices, stride, dtype=np.int64)


def _edge_graph(mesh: TriMesh):
    adj = build_adjacency(mesh)
    if len(adj.pairs) == 0:
        n = mesh.n_vertices
        return coo_matrix((n, n)).tocsr()
    i, j = adj.pairs.T
    w = np.linalg.norm(mesh.template_vertices[i] - mesh.template_vertices[j], axis=1)
    n = mesh.n_vertices
    return coo_matrix((w, (i, j)), shape=(n, n)).tocsr()


def geodesic_distances(mesh: TriMesh, samples) -> np.ndarray:
    """Pairwise shortest-path distances between sampled vertices.

    Distances run along template mesh edges with template edge lengths;
    disconnected pairs are reported as +inf.
    """
    samples = np.asarray(samples, dtype=np.int64).reshape(-1)
    if samples.size == 0:
        raise ValueError("samples must be nonempty")
    if samples.min() < 0 or samples.max() >= mesh.n_vertices:
        raise ValueError("sample index out of range")
    dist = dijkstra(_edge_graph(mesh), directed=False, indices=samples)
    d = dist[:, samples]
    return np.minimum(d, d.T)


@dataclass
class GeodesicPaths:
    """Template geodesics between sampled vertices plus their edge sequences.

    Edge sequences allow re-measuring each path on a deformed mesh: the
    current-geometry distance of pair p is the sum of current lengths of the
    edges with ``edge_pair == p``. Infinite (disconnected) pairs are omitted.
    """

    samples: np.ndarray    # (S,) template vertex indices
    dist: np.ndarray       # (S, S) template distances, +inf when disconnected
    pair_i: np.ndarray     # (P,) sample-list index, i < j, finite pairs only
    pair_j: np.ndarray     # (P,)
    pair_dist: np.ndarray  # (P,) template distance per pair
    edge_u: np.ndarray     # (E,) vertex ids of path edges, concatenated
    edge_v: np.ndarray     # (E,)
    edge_pair: np.ndarray  # (E,) owning pair index

    @property
    def n_pairs(self) -> int:
        return len(self.pair_i)


def template_geodesics(mesh: TriMesh, samples) -> GeodesicPaths:
    """Dijkstra on the template once, with shortest-path edge sequences."""
    samples = np.asarray(samples, dtype=np.int64).reshape(-1)
    if samples.size == 0:
        raise ValueError("samples must be nonempty")
    graph = _edge_graph(mesh)
    dist, pred = dijkstra(graph, directed=False, indices=samples, return_predecessors=True)
    pair_i, pair_j, pair_d = [], [], []
    edge_u, edge_v, edge_pair = [], [], []
    for a in range(len(samples)):
        for b in range(a + 1, len(samples)):
            d = dist[a, samples[b]]
            if not np.isfinite(d):
                continue
            p = len(pair_i)
            pair_i.append(a)
            pair_j.append(b)
            pair_d.append(d)
            cur = samples[b]
            while cur != samples[a]:
                prv = pred[a, cur]
                edge_u.append(prv)
                edge_v.append(cur)
                edge_pair.append(p)
                cur = prv
    dmat = np.minimum(dist[:, samples], dist[:, samples].T)
    return GeodesicPaths(
        samples=samples,
        dist=dmat,
        pair_i=np.asarray(pair_i, dtype=np.int64),
        pair_j=np.asarray(pair_j, dtype=np.int64),
        pair_dist=np.asarray(pair_d, dtype=np.float64),
        edge_u=np.asarray(edge_u, dtype=np.int64),
        edge_v=np.asarray(edge_v, dtype=np.int64),
        edge_pair=np.asarray(edge_pair, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# alignment


def procrustes_align(source, target) -> np.ndarray:
    """Rigidly align source to target by least squares (no scaling).

    Solves for the rotation and translation via the centered cross-covariance
    SVD with the determinant sign corrected to +1, and returns R source + t.
    """
    s = _as_f64(source).reshape(-1, 3)
    g = _as_f64(target).reshape(-1, 3)
    if s.shape != g.shape:
        raise AlignmentError(f"point counts differ: {s.shape} vs {g.shape}")
    if len(s) < 3:
        raise AlignmentError("at least 3 points required")
    ms, mg = s.mean(0), g.mean(0)
    h = (s - ms).T @ (g - mg)
    u, sv, vt = np.linalg.svd(h)
    if sv[1] <= 1e-12 * max(sv[0], 1e-300):
        raise AlignmentError("rank-deficient covariance (degenerate point spread)")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = mg - rot @ ms
    return s @ rot.T + t


# ---------------------------------------------------------------------------
# OBJ input/output


def load_obj(path) -> TriMesh:
    """Read a Wavefront OBJ (v/f records, triangles, 1-based indices)."""
    verts, faces = [], []
    for line_no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            if len(parts) < 4:
                raise MeshError(f"{path}:{line_no}: malformed vertex line")
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = [int(tok.split("/")[0]) for tok in parts[1:]]
            if len(idx) != 3:
                raise MeshError(f"{path}:{line_no}: only triangle faces are supported")
            faces.append([i - 1 for i in idx])
    if not verts:
        raise MeshError(f"{path}: no vertices found")
    return TriMesh.from_arrays(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_obj(path, mesh_or_vertices, faces=None) -> None:
    """Write vertices and triangle faces as Wavefront OBJ (1-based indices)."""
    if faces is None:
        v, f = mesh_or_vertices.vertices, mesh_or_vertices.faces
    else:
        v, f = _as_f64(mesh_or_vertices).reshape(-1, 3), np.asarray(faces, dtype=np.int64)
    lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in v]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in f.reshape(-1, 3)]
    Path(path).write_text("\n".join(lines) + "\n")
