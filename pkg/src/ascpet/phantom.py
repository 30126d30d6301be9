"""Parametric ellipse phantoms: activity maps, 511-keV attenuation maps, subject metadata.

Geometry conventions used throughout the package:
  * ellipse centers are given in field-of-view fractions, [-1, 1] spanning the FOV;
  * ellipse semi-axes are FOV fractions in (0, 1], where 1.0 reaches from the
    center to the FOV edge (i.e. semi_axis_mm = frac * fov_mm / 2);
  * pixel centers sit at (col - (W-1)/2) * pixel_mm, y increasing with row index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from math import cos, sin

import numpy as np

from .errors import DomainError

UNITS_KBQ_ML = "kBq/mL"
UNITS_BQ_ML = "Bq/mL"
UNITS_PER_CM = "1/cm"
UNITS_NONE = "unitless"

VALID_UNITS = (UNITS_KBQ_ML, UNITS_BQ_ML, UNITS_PER_CM, UNITS_NONE)

# Per-slice jitter applied to "add"-composed ellipses, as a fraction of the FOV.
SLICE_JITTER_FOV_FRAC = 0.02

_JITTER_TAG = 0xA5  # seed-stream tag for per-slice jitter


@dataclass
class AttenuationConstants:
    """511-keV linear attenuation coefficients [1/cm]; defaults, overridable in tests."""

    soft_tissue: float = 0.096
    bone: float = 0.17
    couch: float = 0.12


DEFAULT_ATTENUATION = AttenuationConstants()


@dataclass
class Ellipse:
    center_xy: tuple[float, float]
    semi_axes_xy: tuple[float, float]
    angle: float = 0.0          # radians, CCW
    activity: float = 0.0       # kBq/mL
    mu: float = 0.0             # 1/cm
    compose: str = "add"        # "add" sums onto the scene, "replace" overwrites it

    def validate(self) -> None:
        if not (self.semi_axes_xy[0] > 0 and self.semi_axes_xy[1] > 0):
            raise DomainError(f"semi axes must be strictly positive, got {self.semi_axes_xy}")
        for name, v in (("activity", self.activity), ("mu", self.mu)):
            if not np.isfinite(v) or v < 0:
                raise DomainError(f"{name} must be finite and nonnegative, got {v}")
        if self.compose not in ("add", "replace"):
            raise DomainError(f"compose must be 'add' or 'replace', got {self.compose!r}")


@dataclass
class Couch:
    """Patient-table slab: attenuates photons, emits nothing (contributes to mu only)."""

    x_range: tuple[float, float]  # FOV fractions in [-1, 1]
    y_range: tuple[float, float]
    mu: float = 0.12


@dataclass
class SubjectMeta:
    dose_MBq: float
    weight_g: float
    duration_s: float
    seed: int

    def validate(self) -> None:
        for name, v in (("dose_MBq", self.dose_MBq), ("weight_g", self.weight_g),
                        ("duration_s", self.duration_s)):
            if not (v > 0):
                raise DomainError(f"{name} must be strictly positive, got {v}")


@dataclass
class Phantom:
    ellipses: list[Ellipse]
    subject_meta: SubjectMeta
    couch: Couch | None = None

    def validate(self) -> None:
        for e in self.ellipses:
            e.validate()
        self.subject_meta.validate()

    def to_dict(self) -> dict:
        d = {
            "ellipses": [asdict(e) for e in self.ellipses],
            "subject_meta": asdict(self.subject_meta),
            "couch": asdict(self.couch) if self.couch is not None else None,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Phantom":
        ellipses = [Ellipse(center_xy=tuple(e["center_xy"]),
                            semi_axes_xy=tuple(e["semi_axes_xy"]),
                            angle=e["angle"], activity=e["activity"],
                            mu=e["mu"], compose=e["compose"])
                    for e in d["ellipses"]]
        meta = SubjectMeta(**d["subject_meta"])
        couch = None
        if d.get("couch") is not None:
            c = d["couch"]
            couch = Couch(x_range=tuple(c["x_range"]), y_range=tuple(c["y_range"]), mu=c["mu"])
        return cls(ellipses=ellipses, subject_meta=meta, couch=couch)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "Phantom":
        return cls.from_dict(json.loads(s))


@dataclass
class ImageVolume:
    data: np.ndarray                 # (S, H, W) float
    voxel_size_mm: tuple[float, float, float]  # (z, y, x)
    units: str = UNITS_NONE

    def validate(self) -> None:
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise DomainError(f"volume must be (S,H,W) with dims >= 1, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise DomainError("volume contains non-finite values")
        if any(v <= 0 for v in self.voxel_size_mm):
            raise DomainError(f"voxel sizes must be positive, got {self.voxel_size_mm}")
        if self.units not in VALID_UNITS:
            raise DomainError(f"unknown units {self.units!r}")

    @property
    def n_slices(self) -> int:
        return self.data.shape[0]


@dataclass
class Grid:
    h: int
    w: int
    fov_mm: float

    def validate(self) -> None:
        if self.h < 8 or self.w < 8:
            raise DomainError(f"grid must be at least 8x8, got {self.h}x{self.w}")
        if not (self.fov_mm > 0):
            raise DomainError(f"fov_mm must be positive, got {self.fov_mm}")

    @property
    def pixel_mm(self) -> float:
        return self.fov_mm / self.w


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *tags]))


def _jittered(base: float, rng: np.random.Generator, variability: float, amp: float) -> float:
    # Draw is always consumed so the stream stays aligned; collapses to base at variability 0.
    return base + variability * amp * rng.uniform(-1.0, 1.0)


def make_phantom(preset: str, seed: int, variability: float,
                 constants: AttenuationConstants = DEFAULT_ATTENUATION) -> Phantom:
    """Build a randomized subject phantom.

    ``variability`` in [0, 1] scales every randomized deviation from the preset
    baseline; at 0 the geometry and metadata are seed-independent constants
    (only the recorded seed differs between subjects).
    """
    if not (0.0 <= variability <= 1.0):
        raise DomainError(f"variability must be in [0, 1], got {variability}")
    if preset not in ("brain", "abdomen"):
        raise DomainError(f"unknown preset {preset!r}")

    rng = _rng(seed, 0x01)
    v = float(variability)
    ellipses: list[Ellipse] = []

    if preset == "brain":
        # Skull: high-mu outer shell with low activity, realized as replace-inside-replace.
        skull_a = _jittered(0.74, rng, v, 0.05)
        skull_b = _jittered(0.86, rng, v, 0.05)
        tilt = _jittered(0.0, rng, v, 0.15)
        ellipses.append(Ellipse((0.0, 0.0), (skull_a, skull_b), tilt,
                                activity=0.5, mu=constants.bone, compose="replace"))
        thickness = 0.09
        ellipses.append(Ellipse((0.0, 0.0), (skull_a - thickness, skull_b - thickness), tilt,
                                activity=4.0, mu=constants.soft_tissue, compose="replace"))
        # Hot uptake regions (same tissue, so no extra mu).
        n_hot = 2 if v == 0.0 else int(rng.integers(1, 4))
        anchors = [(-0.22, 0.18), (0.24, -0.14), (-0.05, -0.3)]
        for k in range(n_hot):
            cx = _jittered(anchors[k][0], rng, v, 0.1)
            cy = _jittered(anchors[k][1], rng, v, 0.1)
            sa = _jittered(0.16, rng, v, 0.05)
            sb = _jittered(0.12, rng, v, 0.05)
            act = _jittered(16.0, rng, v, 5.0)
            ellipses.append(Ellipse((cx, cy), (sa, sb), _jittered(0.0, rng, v, 0.6),
                                    activity=act, mu=0.0, compose="add"))
        # Occasional small hot lesion.
        if rng.random() < 0.4 * v:
            ellipses.append(Ellipse((_jittered(0.1, rng, v, 0.2), _jittered(0.1, rng, v, 0.2)),
                                    (0.05, 0.05), 0.0,
                                    activity=_jittered(30.0, rng, v, 8.0), mu=0.0, compose="add"))
    else:  # abdomen
        # Larger body with visibly more inter-seed shape variance than the brain preset.
        # Organ anchors/extents are budgeted so that even rotated, jittered organs
        # stay strictly inside the smallest body ellipse the ranges allow.
        body_a = _jittered(0.85, rng, v, 0.1)
        body_b = _jittered(0.62, rng, v, 0.08)
        tilt = _jittered(0.0, rng, v, 0.25)
        ellipses.append(Ellipse((0.0, 0.0), (body_a, body_b), tilt,
                                activity=2.5, mu=constants.soft_tissue, compose="replace"))
        # Spine analog: dense, cold.
        ellipses.append(Ellipse((0.0, _jittered(-0.34, rng, v, 0.03)),
                                (_jittered(0.1, rng, v, 0.015), _jittered(0.1, rng, v, 0.015)),
                                0.0, activity=0.3, mu=constants.bone, compose="replace"))
        n_organ = 3 if v == 0.0 else int(rng.integers(2, 5))
        anchors = [(-0.3, 0.1), (0.3, 0.05), (0.0, 0.18), (-0.12, -0.1)]
        for k in range(n_organ):
            cx = _jittered(anchors[k][0], rng, v, 0.12)
            cy = _jittered(anchors[k][1], rng, v, 0.08)
            sa = _jittered(0.17, rng, v, 0.04)
            sb = _jittered(0.12, rng, v, 0.03)
            act = _jittered(9.0, rng, v, 4.0)
            ellipses.append(Ellipse((cx, cy), (sa, sb), _jittered(0.0, rng, v, 0.8),
                                    activity=act, mu=0.0, compose="add"))
        if rng.random() < 0.5 * v:
            ellipses.append(Ellipse((_jittered(-0.2, rng, v, 0.25), _jittered(0.0, rng, v, 0.2)),
                                    (0.06, 0.06), 0.0,
                                    activity=_jittered(24.0, rng, v, 6.0), mu=0.0, compose="add"))

    meta = SubjectMeta(
        dose_MBq=_jittered(350.0, rng, v, 150.0),
        weight_g=_jittered(75000.0, rng, v, 25000.0),
        duration_s=_jittered(517.5, rng, v, 382.5),
        seed=int(seed),
    )
    phantom = Phantom(ellipses=ellipses, subject_meta=meta, couch=None)
    phantom.validate()
    return phantom


def default_couch(constants: AttenuationConstants = DEFAULT_ATTENUATION) -> Couch:
    """Flat table slab below the subject, spanning most of the FOV width."""
    return Couch(x_range=(-0.8, 0.8), y_range=(-0.98, -0.86), mu=constants.couch)


def _pixel_coords(grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    px = grid.fov_mm / grid.w
    py = grid.fov_mm / grid.h
    xs = (np.arange(grid.w) - (grid.w - 1) / 2.0) * px
    ys = (np.arange(grid.h) - (grid.h - 1) / 2.0) * py
    return np.meshgrid(xs, ys)  # (X, Y) each (H, W)


def _ellipse_mask(e: Ellipse, grid: Grid, X: np.ndarray, Y: np.ndarray,
                  shift_xy: tuple[float, float] = (0.0, 0.0)) -> np.ndarray:
    half = grid.fov_mm / 2.0
    cx = (e.center_xy[0] + shift_xy[0]) * half
    cy = (e.center_xy[1] + shift_xy[1]) * half
    a = e.semi_axes_xy[0] * half
    b = e.semi_axes_xy[1] * half
    dx = X - cx
    dy = Y - cy
    ca, sa = cos(e.angle), sin(e.angle)
    u = dx * ca + dy * sa
    w = -dx * sa + dy * ca
    return (u / a) ** 2 + (w / b) ** 2 <= 1.0


def rasterize(phantom: Phantom, grid: Grid, n_slices: int,
              with_couch: bool = False) -> tuple[ImageVolume, ImageVolume]:
    """Rasterize a phantom onto a pixel grid as paired activity / mu volumes.

    Slices are near-copies: each slice applies an independent small jitter
    (2% of FOV) to the positions of "add"-composed ellipses, so a volume
    resembles a stack of neighboring anatomical sections. The couch, when
    enabled, contributes to mu only.
    """
    grid.validate()
    if n_slices < 1:
        raise DomainError(f"n_slices must be >= 1, got {n_slices}")
    phantom.validate()

    X, Y = _pixel_coords(grid)
    act = np.zeros((n_slices, grid.h, grid.w), dtype=np.float32)
    mu = np.zeros((n_slices, grid.h, grid.w), dtype=np.float32)

    for s in range(n_slices):
        jr = _rng(phantom.subject_meta.seed, _JITTER_TAG, s)
        a2d = act[s]
        m2d = mu[s]
        for e in phantom.ellipses:
            if e.compose == "add":
                # center_xy spans [-1, 1] over the FOV, so 2% of FOV is 0.04 in those units
                shift = (jr.uniform(-2 * SLICE_JITTER_FOV_FRAC, 2 * SLICE_JITTER_FOV_FRAC),
                         jr.uniform(-2 * SLICE_JITTER_FOV_FRAC, 2 * SLICE_JITTER_FOV_FRAC))
            else:
                shift = (0.0, 0.0)
            mask = _ellipse_mask(e, grid, X, Y, shift)
            if e.compose == "replace":
                a2d[mask] = e.activity
                m2d[mask] = e.mu
            else:
                a2d[mask] += e.activity
                m2d[mask] += e.mu

    if with_couch and phantom.couch is not None:
        c = phantom.couch
        half = grid.fov_mm / 2.0
        cmask = ((X >= c.x_range[0] * half) & (X <= c.x_range[1] * half)
                 & (Y >= c.y_range[0] * half) & (Y <= c.y_range[1] * half))
        mu += np.where(cmask, np.float32(c.mu), np.float32(0.0))

    px = grid.pixel_mm
    vox = (2.0 * px, grid.fov_mm / grid.h, px)
    act_vol = ImageVolume(act, vox, UNITS_KBQ_ML)
    mu_vol = ImageVolume(mu, vox, UNITS_PER_CM)
    act_vol.validate()
    mu_vol.validate()
    return act_vol, mu_vol
