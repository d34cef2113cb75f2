"""Event streams, event frames, smooth thresholding, and event synthesis.

An event is a brightness-change record (t, x, y, p) with microsecond
timestamp and polarity p in {-1, +1}. Windows of a fixed EVENT COUNT are
consolidated into event frames: per-pixel polarity sums scaled by the
maximum absolute sum so values lie in [-1, 1].
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy.signal import convolve2d

from .errors import EventFormatError
from .geometry import model_faces, posed_vertices, ParamSet
from .render import Camera, GrayImage, RasterSettings, soft_render_t

logger = logging.getLogger(__name__)

_REC_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])


@dataclass(frozen=True)
class Event:
    t: int
    x: int
    y: int
    p: int


@dataclass
class EventStream:
    """Time-ordered event records plus the sensor geometry."""

    t: np.ndarray  # (M,) uint64 microseconds, non-decreasing
    x: np.ndarray  # (M,) int32 pixel column
    y: np.ndarray  # (M,) int32 pixel row
    p: np.ndarray  # (M,) int8 polarity in {-1, +1}
    width: int
    height: int

    def __post_init__(self):
        self.t = np.ascontiguousarray(self.t, dtype=np.uint64)
        self.x = np.ascontiguousarray(self.x, dtype=np.int32)
        self.y = np.ascontiguousarray(self.y, dtype=np.int32)
        self.p = np.ascontiguousarray(self.p, dtype=np.int8)
        m = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == m):
            raise EventFormatError("event field lengths differ")
        if m:
            if np.any(np.diff(self.t.astype(np.int64)) < 0):
                raise EventFormatError("timestamps must be non-decreasing")
            if self.x.min() < 0 or self.x.max() >= self.width:
                raise EventFormatError("x coordinate out of sensor bounds")
            if self.y.min() < 0 or self.y.max() >= self.height:
                raise EventFormatError("y coordinate out of sensor bounds")
            if not np.isin(self.p, (-1, 1)).all():
                raise EventFormatError("polarity must be -1 or +1")

    @classmethod
    def empty(cls, width: int, height: int) -> "EventStream":
        z = np.empty(0)
        return cls(z, z, z, z, width, height)

    @classmethod
    def concatenate(cls, streams) -> "EventStream":
        streams = list(streams)
        if not streams:
            raise EventFormatError("nothing to concatenate")
        w, h = streams[0].width, streams[0].height
        return cls(
            np.concatenate([s.t for s in streams]),
            np.concatenate([s.x for s in streams]),
            np.concatenate([s.y for s in streams]),
            np.concatenate([s.p for s in streams]),
            w, h,
        )

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.t[i]), int(self.x[i]), int(self.y[i]), int(self.p[i]))


@dataclass
class EventFrame:
    """Normalized accumulation of a window of events, values in [-1, 1]."""

    values: np.ndarray  # (H, W)
    t_first: int
    t_last: int
    count: int

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


@dataclass
class ThresholdParams:
    """Smooth threshold constants on the same intensity scale as the images."""

    c: float     # contrast sensitivity
    w: float     # smoothness weight
    eps: float   # tolerance keeping the sign factor bounded

    def __post_init__(self):
        if self.c <= 0 or self.w <= 0 or self.eps <= 0:
            raise ValueError("threshold parameters must be positive")


# ---------------------------------------------------------------------------
# accumulation and thresholding


def accumulate(stream: EventStream, start_index: int, count: int) -> EventFrame:
    """Consolidate ``count`` events starting at ``start_index`` into a frame.

    Per-pixel polarity sums are divided by the maximum absolute sum (when
    nonzero), so every value is (integer sum) / (max abs integer sum).
    """
    if count < 1:
        raise ValueError("window must contain at least one event")
    if start_index < 0 or start_index + count > len(stream):
        raise ValueError("window exceeds the stream")
    sl = slice(start_index, start_index + count)
    sums = np.zeros((stream.height, stream.width), dtype=np.int64)
    np.add.at(sums, (stream.y[sl], stream.x[sl]), stream.p[sl])
    peak = np.abs(sums).max()
    values = sums / peak if peak > 0 else np.zeros_like(sums, dtype=np.float64)
    return EventFrame(values=values.astype(np.float64),
                      t_first=int(stream.t[sl][0]), t_last=int(stream.t[sl][-1]),
                      count=count)


def frame_windows(stream: EventStream, count: int, max_frames: int | None = None):
    """Consecutive non-overlapping event-count windows; the tail remainder is dropped."""
    n = len(stream) // count
    if max_frames is not None:
        n = min(n, max_frames)
    return [accumulate(stream, k * count, count) for k in range(n)]


def smooth_threshold(x, params: ThresholdParams):
    """Differentiable trade-off between tanh and the event staircase.

    g(x) = ((x + eps) / (|x| + eps)) * 1 / (1 + exp(-w |x| + w c)); the range
    is (-1, 1) and g(c) = 1/2 exactly for positive inputs.
    """
    is_tensor = torch.is_tensor(x)
    xp = torch if is_tensor else np
    ax = abs(x)
    expo = -params.w * ax + params.w * params.c
    expo = xp.clip(expo, -700.0, 700.0) if not is_tensor else expo.clamp(-700.0, 700.0)
    return ((x + params.eps) / (ax + params.eps)) * (1.0 / (1.0 + xp.exp(expo)))


def generated_frame_t(img_cur: torch.Tensor, img_prev: torch.Tensor,
                      params: ThresholdParams) -> torch.Tensor:
    return smooth_threshold(img_cur - img_prev, params)


def generate_event_frame(theta_prev: ParamSet, theta: ParamSet, model,
                         camera: Camera, settings: RasterSettings,
                         params: ThresholdParams) -> np.ndarray:
    """Simulated event frame: g(render(theta) - render(theta_prev)).

    Values lie in (-1, 1); the same computation runs under autograd inside
    the objective so frames stay differentiable with respect to theta.
    """
    if theta_prev.is_parametric != theta.is_parametric or theta_prev.dim != theta.dim:
        raise EventFormatError("parameter sets must share variant and dimension")
    faces = model_faces(model)
    with torch.no_grad():
        prev = soft_render_t(torch.from_numpy(posed_vertices(model, theta_prev)), faces,
                             camera, settings)
        cur = soft_render_t(torch.from_numpy(posed_vertices(model, theta)), faces,
                            camera, settings)
        gen = generated_frame_t(cur, prev, params)
    return gen.numpy()


def filter_noise(frame: EventFrame, min_count: int, window: int = 5) -> np.ndarray:
    """Relevant event pixels: nonzero pixels whose window x window neighborhood
    (clipped at borders, the pixel itself included) holds >= min_count nonzeros.

    Returns an (K, 2) array of (x, y) pixel coordinates in row-major order.
    """
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    nz = (frame.values != 0).astype(np.int64)
    counts = convolve2d(nz, np.ones((window, window), dtype=np.int64), mode="same")
    keep = nz.astype(bool) & (counts >= min_count)
    rows, cols = np.nonzero(keep)
    return np.stack([cols, rows], axis=1).astype(np.int64)


# ---------------------------------------------------------------------------
# synthetic event generation


def synth_events_from_images(prev, cur, c: float, t_prev: int, t_cur: int) -> EventStream:
    """Events from differencing two images: one event per pixel with
    |cur - prev| >= c, polarity the sign of the change, timestamp t_cur.
    """
    a = prev.pixels if isinstance(prev, GrayImage) else np.asarray(prev, dtype=np.float64)
    b = cur.pixels if isinstance(cur, GrayImage) else np.asarray(cur, dtype=np.float64)
    if a.shape != b.shape:
        raise EventFormatError("image dimensions differ")
    if c >= 1.0:
        raise EventFormatError(
            f"threshold {c} is not on the image intensity scale [0, 1]")
    diff = b - a
    rows, cols = np.nonzero(np.abs(diff) >= c)  # row-major batch order
    pol = np.where(diff[rows, cols] > 0, 1, -1).astype(np.int8)
    t = np.full(len(rows), t_cur, dtype=np.uint64)
    h, w = a.shape
    return EventStream(t, cols, rows, pol, width=w, height=h)


def adaptive_next_timestamp(diff_image, t_k: int, t_km1: int, c: float,
                            lam: float = 2.0) -> int:
    """Next render timestamp so that roughly lam * c of intensity change
    accrues at the fastest pixel, assuming the current rate persists.

    The rate is the difference image divided by the previous interval. An
    all-zero difference falls back to doubling the interval (logged).
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    if t_k <= t_km1:
        raise ValueError("timestamps must be strictly increasing")
    d = diff_image.pixels if isinstance(diff_image, GrayImage) else np.asarray(diff_image)
    peak = float(np.abs(d).max())
    if peak == 0.0:
        logger.warning("adaptive sampling: zero difference image, doubling the interval")
        return t_k + 2 * (t_k - t_km1)
    rate = peak / (t_k - t_km1)
    return t_k + max(1, int(round(lam * c / rate)))


# ---------------------------------------------------------------------------
# event file input/output
#
# Text: one `t x y p` line per event after a `# width height` header.
# Binary: the same header line followed by little-endian (u64, u16, u16, i8)
# records.


def _parse_header(line: str):
    parts = line.split()
    if len(parts) != 3 or parts[0] != "#":
        raise EventFormatError(f"bad header line: {line!r}")
    return int(parts[1]), int(parts[2])


def save_events_text(stream: EventStream, path) -> None:
    with open(path, "w") as f:
        f.write(f"# {stream.width} {stream.height}\n")
        np.savetxt(f, np.column_stack([stream.t.astype(np.int64), stream.x,
                                       stream.y, stream.p.astype(np.int32)]), fmt="%d")


def load_events_text(path) -> EventStream:
    with open(path) as f:
        header = f.readline()
        w, h = _parse_header(header)
        data = np.loadtxt(f, dtype=np.int64, ndmin=2)
    if data.size == 0:
        return EventStream.empty(w, h)
    if data.shape[1] != 4:
        raise EventFormatError(f"{path}: expected 4 columns")
    return EventStream(data[:, 0].astype(np.uint64), data[:, 1], data[:, 2],
                       data[:, 3].astype(np.int8), w, h)


def save_events_binary(stream: EventStream, path) -> None:
    rec = np.empty(len(stream), dtype=_REC_DTYPE)
    rec["t"] = stream.t
    rec["x"] = stream.x.astype(np.uint16)
    rec["y"] = stream.y.astype(np.uint16)
    rec["p"] = stream.p
    with open(path, "wb") as f:
        f.write(f"# {stream.width} {stream.height}\n".encode("ascii"))
        f.write(rec.tobytes())


def load_events_binary(path) -> EventStream:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise EventFormatError(f"{path}: missing header")
    w, h = _parse_header(raw[:nl].decode("ascii"))
    body = raw[nl + 1:]
    if len(body) % _REC_DTYPE.itemsize:
        raise EventFormatError(f"{path}: truncated record data")
    rec = np.frombuffer(body, dtype=_REC_DTYPE)
    return EventStream(rec["t"], rec["x"].astype(np.int32), rec["y"].astype(np.int32),
                       rec["p"], w, h)


def load_events(path) -> EventStream:
    """Sniff text vs binary by extension (.txt/.events text, else binary)."""
    p = Path(path)
    if p.suffix in (".txt", ".events"):
        return load_events_text(p)
    return load_events_binary(p)
