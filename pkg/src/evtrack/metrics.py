"""Evaluation metrics: relative Frobenius error after per-frame rigid alignment.

Alignment resolves translation and rotation only; scale is deliberately not
removed, so a uniformly scaled reconstruction scores nonzero.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MetricError
from .geometry import procrustes_align


@dataclass
class SequenceGT:
    """Per-frame ground truth: joint sets and/or dense meshes."""

    joints: list | None = None   # list of (J, 3) arrays
    meshes: list | None = None   # list of (N, 3) vertex arrays

    def __len__(self) -> int:
        src = self.joints if self.joints is not None else self.meshes
        return 0 if src is None else len(src)


def _frame_error(gt: np.ndarray, rec: np.ndarray) -> float:
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    rec = np.asarray(rec, dtype=np.float64).reshape(-1, 3)
    if gt.shape != rec.shape:
        raise MetricError(f"point counts differ: {gt.shape} vs {rec.shape}")
    denom = np.linalg.norm(gt)
    if denom == 0.0:
        raise MetricError("ground truth has zero Frobenius norm")
    aligned = procrustes_align(rec, gt)
    return float(np.linalg.norm(gt - aligned) / denom)


def e_joint3d(recovered_joints, gt_joints):
    """Average relative 3D joint error after per-frame Procrustes alignment.

    Returns (mean, per-frame array).
    """
    if len(recovered_joints) != len(gt_joints):
        raise MetricError(f"frame counts differ: {len(recovered_joints)} vs {len(gt_joints)}")
    if len(gt_joints) == 0:
        raise MetricError("no frames to evaluate")
    per_frame = np.array([_frame_error(g, r) for g, r in zip(gt_joints, recovered_joints)])
    return float(per_frame.mean()), per_frame


def e_3d(recovered_meshes, gt_meshes):
    """Average relative dense mesh error; same formula over full vertex sets."""
    return e_joint3d(recovered_meshes, gt_meshes)


def write_metrics_csv(path, per_frame) -> None:
    """`frame,e3d` rows followed by the summary lines mean and std."""
    per_frame = np.asarray(per_frame, dtype=np.float64)
    lines = ["frame,e3d"]
    lines += [f"{i},{float(v)!r}" for i, v in enumerate(per_frame)]
    lines.append(f"mean,{float(per_frame.mean())!r}")
    lines.append(f"std,{float(per_frame.std())!r}")
    Path(path).write_text("\n".join(lines) + "\n")
