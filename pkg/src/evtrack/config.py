"""Run configuration: a flat `key = value` text format and its dataclass.

The contrast sensitivity ``C`` is stored on the [0, 255] scale and converted
to the internal [0, 1] intensity scale on use; `w = 0` selects the automatic
smoothness weight 5 / (C / 255).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .events import ThresholdParams
from .objective import ObjectiveWeights
from .optim import FitSchedule
from .render import Camera, RasterSettings

INTENSITY_SCALE = 255.0


@dataclass
class RunConfig:
    # pipeline
    branch: str = "mesh"              # mesh | parametric
    scene: str = "sheet"              # sheet | sphere | chain | slide
    template: str = ""                # template OBJ path (mesh branch)
    model: str = ""                   # articulated model JSON path (parametric)
    events: str = ""                  # event file path
    out_dir: str = "out"
    event_format: str = "text"        # text | binary
    seed: int = 0
    frames: int = 0                   # 0 = all available event frames
    log_every: int = 50

    # camera
    width: int = 64
    height: int = 64
    fx: float = 96.0
    fy: float = 96.0
    cx: float = -1.0                  # -1 = image center
    cy: float = -1.0

    # events / thresholding
    T: int = 1200                     # events per frame (window size)
    C: float = 10.0                   # contrast sensitivity on [0, 255]
    w: float = 0.0                    # 0 = auto (5 / internal C)
    eps: float = 1e-3
    min_count: int = 3

    # energy weights
    lam: float = 10.0
    lam1: float = 0.1
    lam_sil: float = 0.01
    lam_top: float = 1.0
    lam_iso: float = 1.0
    lam_geo: float = 1.0
    lam_reg: float = 10.0
    stride: int = 10
    sil_vis_tol: float = 0.05

    # rasterizer
    sigma: float = 0.7
    gamma: float = 1e-2
    albedo: float = 0.9
    light_x: float = 0.0
    light_y: float = 0.0
    light_z: float = 1.0
    background: float = 0.0

    # optimizer
    lr: float = 5e-4
    rigid_iters: int = 50
    full_iters: int = 200
    tol: float = 1e-6
    patience: int = 10

    # simulation
    n_steps: int = 50
    dt_us: int = 20000
    adaptive: bool = False
    adaptive_lam: float = 2.0
    noise_rate: float = 0.0           # expected stray events per step
    amplitude: float = 0.5            # scene deformation magnitude
    cycles: float = 1.0               # deformation cycles over the sequence
    speed: float = 0.15               # slide scene: total translation, scene units
    dump_images: bool = True
    sheet_nx: int = 10
    sheet_ny: int = 10
    sphere_rings: int = 9
    sphere_segments: int = 12
    chain_joints: int = 4
    chain_ring: int = 8

    def __post_init__(self):
        if self.branch not in ("mesh", "parametric"):
            raise ConfigError(f"unknown branch {self.branch!r}")
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if self.C <= 0:
            raise ConfigError("C must be positive")
        for name in ("lam", "lam1", "lam_sil", "lam_top", "lam_iso", "lam_geo", "lam_reg"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")

    # -- derived objects ----------------------------------------------------

    @property
    def c_internal(self) -> float:
        return self.C / INTENSITY_SCALE

    def camera(self) -> Camera:
        cx = (self.width - 1) / 2.0 if self.cx < 0 else self.cx
        cy = (self.height - 1) / 2.0 if self.cy < 0 else self.cy
        return Camera(fx=self.fx, fy=self.fy, cx=cx, cy=cy,
                      width=self.width, height=self.height)

    def raster_settings(self) -> RasterSettings:
        return RasterSettings(sigma=self.sigma, gamma=self.gamma, albedo=self.albedo,
                              light=(self.light_x, self.light_y, self.light_z),
                              background=self.background)

    def threshold_params(self) -> ThresholdParams:
        w = self.w if self.w > 0 else 5.0 / self.c_internal
        return ThresholdParams(c=self.c_internal, w=w, eps=self.eps)

    def weights(self) -> ObjectiveWeights:
        return ObjectiveWeights(lam=self.lam, lam1=self.lam1, lam_sil=self.lam_sil,
                                lam_top=self.lam_top, lam_iso=self.lam_iso,
                                lam_geo=self.lam_geo, lam_reg=self.lam_reg)

    def schedule(self) -> FitSchedule:
        return FitSchedule(rigid_iters=self.rigid_iters, full_iters=self.full_iters,
                           tol=self.tol, patience=self.patience)

    # -- text round trip ------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = int(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_text(p.read_text())

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        casts = {"str": str, "int": int, "float": float, "bool": _parse_bool}
        kwargs = {}
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {line_no}: expected `key = value`")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {line_no}: unknown key {key!r}")
            try:
                kwargs[key] = casts[types[key]](value)
            except ValueError as exc:
                raise ConfigError(f"line {line_no}: bad value for {key}: {exc}") from exc
        return cls(**kwargs)


def _parse_bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes"):
        return True
    if low in ("0", "false", "no"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def write_manifest(path, cfg: RunConfig, derived: dict | None = None) -> None:
    """Echo every config value plus derived run facts (reproducibility record)."""
    text = cfg.to_text()
    if derived:
        text += "".join(f"{k} = {v}\n" for k, v in derived.items())
    Path(path).write_text(text)
