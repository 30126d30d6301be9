"""OSEM reconstruction and the paired NC / ASC subject simulator.

NC reconstructions leave attenuation and scatter out of the system model while
reconstructing the same measured counts; ASC reconstructions include both.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy import ndimage

from .errors import ConfigError, DomainError, ShapeError
from .phantom import Grid, ImageVolume, Phantom, UNITS_KBQ_ML, rasterize
from .projector import (Geometry, KIND_COUNTS, KIND_SCATTER, ScatterConfig, Sinogram,
                        attenuation_factors, forward_project, scatter_estimate,
                        add_poisson, system_matrix)

MODE_NC = "NC"
MODE_ASC = "ASC"

_SLICE_NOISE_TAG = 0x51

_SUBSET_CACHE: dict[tuple, list] = {}


@dataclass
class ReconConfig:
    iterations: int = 4
    subsets: int = 8
    mode: str = MODE_ASC
    post_filter_fwhm_mm: float = 4.0
    epsilon: float = 1e-8

    def validate(self, n_angles: int) -> None:
        if self.iterations < 1 or self.subsets < 1:
            raise ConfigError("iterations and subsets must be >= 1")
        if n_angles % self.subsets != 0:
            raise ConfigError(
                f"subsets ({self.subsets}) must divide n_angles ({n_angles})")
        if self.mode not in (MODE_NC, MODE_ASC):
            raise ConfigError(f"mode must be NC or ASC, got {self.mode!r}")
        if not (0.0 < self.epsilon <= 1e-3):
            raise ConfigError(f"epsilon must be in (0, 1e-3], got {self.epsilon}")
        if self.post_filter_fwhm_mm < 0:
            raise ConfigError("post_filter_fwhm_mm must be >= 0")


def gaussian_filter(image: np.ndarray, fwhm_mm: float,
                    voxel_size_mm: tuple[float, float]) -> np.ndarray:
    """Separable in-plane Gaussian, sigma = fwhm/2.3548 per axis in pixels,
    kernel truncated at 4*sigma and renormalized; fwhm = 0 is the identity."""
    if fwhm_mm < 0:
        raise DomainError(f"fwhm must be >= 0, got {fwhm_mm}")
    if fwhm_mm == 0.0:
        return image.copy()
    out = image.astype(np.float64, copy=True)
    for axis, vox in ((0, voxel_size_mm[0]), (1, voxel_size_mm[1])):
        sigma_px = fwhm_mm / 2.3548 / vox
        radius = int(np.floor(4.0 * sigma_px))
        if radius < 1:
            continue
        k = np.arange(-radius, radius + 1, dtype=np.float64)
        kern = np.exp(-0.5 * (k / sigma_px) ** 2)
        kern /= kern.sum()
        # reflect padding keeps constants exactly constant at the borders
        out = ndimage.convolve1d(out, kern, axis=axis, mode="reflect")
    return out.astype(image.dtype, copy=False)


def _subset_rows(geom: Geometry, subsets: int) -> list[np.ndarray]:
    """Angle-interleaved partition: subset k takes angles congruent to k mod subsets."""
    bins = np.arange(geom.n_bins)
    out = []
    for k in range(subsets):
        angles = np.arange(k, geom.n_angles, subsets)
        out.append((angles[:, None] * geom.n_bins + bins[None, :]).ravel())
    return out


def _subset_matrices(geom: Geometry, shape: tuple[int, int], subsets: int) -> list:
    key = (geom.n_angles, geom.n_bins, geom.fov_mm, geom.step_mm, tuple(shape), subsets)
    cached = _SUBSET_CACHE.get(key)
    if cached is not None:
        return cached
    mat = system_matrix(geom, shape)
    entries = [(mat[rows], rows) for rows in _subset_rows(geom, subsets)]
    _SUBSET_CACHE[key] = entries
    return entries


def osem(prompts: Sinogram, acf: Sinogram, scatter: Sinogram, geom: Geometry,
         cfg: ReconConfig, shape: tuple[int, int],
         iter_callback: Callable[[int, np.ndarray], None] | None = None) -> np.ndarray:
    """Ordered-subsets EM reconstruction.

    Update per subset S:
        x <- x / (P_S^T a_S + eps) * P_S^T( a_S * y_S / (a_S * P_S x + s_S + eps) )
    Mode NC replaces a with 1 and s with 0 in the model; the data are unchanged.
    The in-plane Gaussian post-filter is applied once at the end.
    """
    cfg.validate(geom.n_angles)
    if prompts.data.shape != (geom.n_angles, geom.n_bins):
        raise ShapeError("prompts do not match geometry")
    if np.any(prompts.data < 0):
        raise DomainError("prompts must be nonnegative")

    y = prompts.data.ravel().astype(np.float64)
    if cfg.mode == MODE_NC:
        a = np.ones_like(y)
        s = np.zeros_like(y)
    else:
        if acf.data.shape != prompts.data.shape or scatter.data.shape != prompts.data.shape:
            raise ShapeError("acf/scatter shapes do not match prompts")
        a = acf.data.ravel().astype(np.float64)
        s = scatter.data.ravel().astype(np.float64)

    eps = cfg.epsilon
    subsets = _subset_matrices(geom, shape, cfg.subsets)
    sens = [m.T @ a[rows] for m, rows in subsets]

    x = np.ones(shape[0] * shape[1], dtype=np.float64)
    for it in range(cfg.iterations):
        for (m, rows), sens_k in zip(subsets, sens):
            fp = m @ x
            expected = a[rows] * fp + s[rows] + eps
            ratio = a[rows] * y[rows] / expected
            x = x / (sens_k + eps) * (m.T @ ratio)
        if iter_callback is not None:
            iter_callback(it, x.reshape(shape).copy())

    img = x.reshape(shape)
    if cfg.post_filter_fwhm_mm > 0:
        vox = (geom.fov_mm / shape[0], geom.fov_mm / shape[1])
        img = gaussian_filter(img, cfg.post_filter_fwhm_mm, vox)
    return img


def _slice_seed(subject_seed: int, slice_index: int) -> int:
    ss = np.random.SeedSequence([int(subject_seed) & 0xFFFFFFFFFFFFFFFF,
                                 _SLICE_NOISE_TAG, slice_index])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def simulate_subject(phantom: Phantom, grid: Grid, n_slices: int, geom: Geometry,
                     recon_cfg: ReconConfig, scatter_cfg: ScatterConfig,
                     total_counts: float | None, seed: int,
                     with_couch: bool = False) -> tuple[ImageVolume, ImageVolume]:
    """Simulate one subject: rasterize, project with attenuation and scatter,
    add count noise, and reconstruct the NC / ASC pair.

    ``total_counts`` is the expected count budget for a 300 s reference scan;
    each slice receives total_counts * duration_s / 300. ``None`` disables
    noise entirely. Both volumes come back in kBq/mL-scaled units (the count
    scale applied before the Poisson draw is divided back out).
    """
    activity, mu = rasterize(phantom, grid, n_slices, with_couch=with_couch)
    shape = (grid.h, grid.w)
    duration = phantom.subject_meta.duration_s

    pet_nc = np.empty_like(activity.data, dtype=np.float32)
    pet_asc = np.empty_like(activity.data, dtype=np.float32)

    for si in range(n_slices):
        acf = attenuation_factors(mu.data[si].astype(np.float64), geom)
        li = forward_project(activity.data[si].astype(np.float64), geom)
        trues = Sinogram(acf.data * li.data, KIND_COUNTS)
        scat = scatter_estimate(trues, scatter_cfg)
        expected = trues.data + scat.data

        if total_counts is None or expected.sum() <= 0:
            count_scale = 1.0
            prompts = Sinogram(expected.copy(), KIND_COUNTS)
            model_scatter = scat
        else:
            eff_counts = float(total_counts) * duration / 300.0
            count_scale = eff_counts / float(expected.sum())
            prompts = add_poisson(Sinogram(expected, KIND_COUNTS), eff_counts,
                                  _slice_seed(seed, si))
            model_scatter = Sinogram(scat.data * count_scale, KIND_SCATTER)

        asc = osem(prompts, acf, model_scatter, geom,
                   replace(recon_cfg, mode=MODE_ASC), shape)
        nc = osem(prompts, acf, model_scatter, geom,
                  replace(recon_cfg, mode=MODE_NC), shape)
        pet_asc[si] = (asc / count_scale).astype(np.float32)
        pet_nc[si] = (nc / count_scale).astype(np.float32)

    vox = activity.voxel_size_mm
    return (ImageVolume(pet_nc, vox, UNITS_KBQ_ML),
            ImageVolume(pet_asc, vox, UNITS_KBQ_ML))
