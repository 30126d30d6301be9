"""Parallel-beam forward model: line integrals, attenuation factors, scatter, count noise.

The projector is realized as an explicit sparse system matrix built from
bilinear ray sampling at uniform steps. Back-projection applies the exact
transpose of that matrix, so the forward/adjoint pair is matched by
construction rather than by geometric approximation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage, sparse

from .errors import DomainError, ShapeError

KIND_LINE_INTEGRAL = "line_integral"
KIND_COUNTS = "counts"
KIND_ACF = "acf"
KIND_SCATTER = "scatter"

_POISSON_TAG = 0x50

# System matrices keyed by (geometry fields, image shape); built once, reused.
_MATRIX_CACHE: dict[tuple, sparse.csr_matrix] = {}


@dataclass(frozen=True)
class Geometry:
    """Uniform angles over [0, pi); radial bins symmetric about the FOV center,
    spanning the FOV diagonal."""

    n_angles: int = 48
    n_bins: int = 96
    fov_mm: float = 256.0
    step_mm: float = 2.0  # ray-sampling step; default half of a 4 mm pixel

    def validate(self) -> None:
        if self.n_angles < 4:
            raise DomainError(f"n_angles must be >= 4, got {self.n_angles}")
        if self.n_bins < 8:
            raise DomainError(f"n_bins must be >= 8, got {self.n_bins}")
        if not (self.fov_mm > 0 and self.step_mm > 0):
            raise DomainError("fov_mm and step_mm must be positive")

    @property
    def angles_rad(self) -> np.ndarray:
        return np.arange(self.n_angles) * np.pi / self.n_angles

    @property
    def bin_centers_mm(self) -> np.ndarray:
        diag = self.fov_mm * np.sqrt(2.0)
        spacing = diag / self.n_bins
        return (np.arange(self.n_bins) - (self.n_bins - 1) / 2.0) * spacing


@dataclass
class Sinogram:
    data: np.ndarray  # (n_angles, n_bins)
    kind: str = KIND_LINE_INTEGRAL

    def validate(self) -> None:
        if self.data.ndim != 2:
            raise ShapeError(f"sinogram must be 2-D, got shape {self.data.shape}")
        if self.kind in (KIND_COUNTS, KIND_SCATTER) and np.any(self.data < 0):
            raise DomainError(f"{self.kind} sinogram must be nonnegative")
        if self.kind == KIND_ACF and (np.any(self.data <= 0) or np.any(self.data > 1)):
            raise DomainError("acf values must lie in (0, 1]")


@dataclass
class ScatterConfig:
    scatter_fraction: float = 0.3
    kernel_sigma_bins: float = 6.0

    def validate(self) -> None:
        if not (0.0 <= self.scatter_fraction < 0.9):
            raise DomainError(
                f"scatter fraction must be in [0, 0.9), got {self.scatter_fraction}")
        if not (self.kernel_sigma_bins > 0):
            raise DomainError("kernel_sigma_bins must be positive")


def default_geometry(fov_mm: float, image_width: int,
                     n_angles: int = 48, n_bins: int = 96) -> Geometry:
    return Geometry(n_angles=n_angles, n_bins=n_bins, fov_mm=fov_mm,
                    step_mm=0.5 * fov_mm / image_width)


def system_matrix(geom: Geometry, shape: tuple[int, int]) -> sparse.csr_matrix:
    """Sparse (n_angles*n_bins) x (H*W) line-integral operator.

    Row (a, b) integrates the bilinearly-interpolated image along the ray at
    angle a, radial offset b; samples outside the grid contribute zero.
    """
    geom.validate()
    key = (geom.n_angles, geom.n_bins, geom.fov_mm, geom.step_mm, tuple(shape))
    cached = _MATRIX_CACHE.get(key)
    if cached is not None:
        return cached

    h, w = shape
    px = geom.fov_mm / w
    py = geom.fov_mm / h
    s = geom.bin_centers_mm
    half_len = geom.fov_mm * np.sqrt(2.0) / 2.0
    n_steps = int(np.ceil(2.0 * half_len / geom.step_mm)) + 1
    t = -half_len + np.arange(n_steps) * geom.step_mm

    rows_parts, cols_parts, vals_parts = [], [], []
    for a, theta in enumerate(geom.angles_rad):
        nx, ny = np.cos(theta), np.sin(theta)
        dx, dy = -np.sin(theta), np.cos(theta)
        # (n_bins, n_steps) physical sample coordinates along each ray
        x = s[:, None] * nx + t[None, :] * dx
        y = s[:, None] * ny + t[None, :] * dy
        cf = x / px + (w - 1) / 2.0
        rf = y / py + (h - 1) / 2.0
        c0 = np.floor(cf).astype(np.int64)
        r0 = np.floor(rf).astype(np.int64)
        fc = cf - c0
        fr = rf - r0
        row_idx = (a * geom.n_bins + np.arange(geom.n_bins))[:, None]
        row_idx = np.broadcast_to(row_idx, cf.shape)
        for dr, dc, wgt in ((0, 0, (1 - fr) * (1 - fc)), (0, 1, (1 - fr) * fc),
                            (1, 0, fr * (1 - fc)), (1, 1, fr * fc)):
            rr = r0 + dr
            cc = c0 + dc
            ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w) & (wgt > 0)
            rows_parts.append(row_idx[ok])
            cols_parts.append((rr[ok] * w + cc[ok]))
            vals_parts.append(wgt[ok] * geom.step_mm)

    mat = sparse.coo_matrix(
        (np.concatenate(vals_parts),
         (np.concatenate(rows_parts), np.concatenate(cols_parts))),
        shape=(geom.n_angles * geom.n_bins, h * w), dtype=np.float64).tocsr()
    mat.sum_duplicates()
    _MATRIX_CACHE[key] = mat
    return mat


def forward_project(image: np.ndarray, geom: Geometry) -> Sinogram:
    """Line integrals of a 2-D slice: entry (angle, bin) in units of mm * image value."""
    if image.ndim != 2:
        raise ShapeError(f"expected a 2-D slice, got shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise DomainError("image contains non-finite values")
    mat = system_matrix(geom, image.shape)
    data = (mat @ image.ravel().astype(np.float64)).reshape(geom.n_angles, geom.n_bins)
    return Sinogram(data, KIND_LINE_INTEGRAL)


def back_project(sino: Sinogram, geom: Geometry, shape: tuple[int, int]) -> np.ndarray:
    """Exact adjoint of :func:`forward_project` under the same sampling scheme."""
    if sino.data.shape != (geom.n_angles, geom.n_bins):
        raise ShapeError(
            f"sinogram shape {sino.data.shape} does not match geometry "
            f"({geom.n_angles}, {geom.n_bins})")
    mat = system_matrix(geom, shape)
    return (mat.T @ sino.data.ravel().astype(np.float64)).reshape(shape)


def attenuation_factors(mu: np.ndarray, geom: Geometry) -> Sinogram:
    """Attenuation correction factors exp(-integral of mu) per line of response.

    ``mu`` is in 1/cm while line integrals are in mm, hence the /10 conversion.
    """
    if np.any(mu < 0):
        raise DomainError("mu map must be nonnegative")
    li = forward_project(mu, geom)
    acf = Sinogram(np.exp(-li.data / 10.0), KIND_ACF)
    acf.validate()
    return acf


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Discrete Gaussian on offsets |k| <= 4*sigma, renormalized to unit sum."""
    radius = int(np.floor(4.0 * sigma))
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    kern = np.exp(-0.5 * (k / sigma) ** 2)
    return kern / kern.sum()


def scatter_estimate(trues_att: Sinogram, cfg: ScatterConfig) -> Sinogram:
    """Convolution scatter model: radial Gaussian blur of the attenuated trues,
    rescaled so total scatter = SF/(1-SF) * total trues."""
    cfg.validate()
    if np.any(trues_att.data < 0):
        raise DomainError("trues sinogram must be nonnegative")
    total_trues = float(trues_att.data.sum())
    target = cfg.scatter_fraction / (1.0 - cfg.scatter_fraction) * total_trues
    if target <= 0.0:
        return Sinogram(np.zeros_like(trues_att.data, dtype=np.float64), KIND_SCATTER)
    kern = gaussian_kernel_1d(cfg.kernel_sigma_bins)
    blurred = ndimage.convolve1d(trues_att.data.astype(np.float64), kern,
                                 axis=1, mode="constant", cval=0.0)
    blur_sum = float(blurred.sum())
    if blur_sum <= 0.0:
        return Sinogram(np.zeros_like(blurred), KIND_SCATTER)
    return Sinogram(blurred * (target / blur_sum), KIND_SCATTER)


def add_poisson(sino: Sinogram, total_counts: float, seed: int) -> Sinogram:
    """Scale the sinogram to the requested total expected counts, then draw
    independent Poisson samples per bin (counter-based generator, so the result
    is a pure function of the seed regardless of evaluation order)."""
    if not (total_counts > 0):
        raise DomainError(f"total_counts must be positive, got {total_counts}")
    if np.any(sino.data < 0):
        raise DomainError("sinogram must be nonnegative")
    total = float(sino.data.sum())
    if total == 0.0:
        return Sinogram(np.zeros_like(sino.data, dtype=np.float64), KIND_COUNTS)
    lam = sino.data * (total_counts / total)
    rng = np.random.Generator(np.random.Philox(
        np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, _POISSON_TAG])))
    counts = rng.poisson(lam).astype(np.float64)
    return Sinogram(counts, KIND_COUNTS)
