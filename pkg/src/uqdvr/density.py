"""Per-voxel probability model estimation from noise samples.

Covers Gaussian-kernel KDE reduced to quantile representations, moment-fit
parametric models, EM-fit Gaussian mixtures, and hixel-style downsampling of
high-resolution volumes.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .volcore import (
    DistributionVolume,
    EnsembleVolume,
    GaussianModel,
    GmmVolumeModel,
    MeanFieldModel,
    QuantileModel,
    QuantilePdf,
    SamplesModel,
    ScalarGrid,
    UniformModel,
    VolumeError,
    _quantile_masses,
)

# Above this many samples per voxel the KDE switches to a binned evaluation.
_BINNED_KDE_THRESHOLD = 4096
# Sigma floor for EM fits, relative to the sample range.
_GMM_SIGMA_FLOOR_REL = 1e-6
_CHUNK_VOXELS = 4096


@dataclass(frozen=True)
class KdeConfig:
    """Gaussian-kernel KDE settings.

    The density is evaluated on a uniform value lattice spanning the sample
    range padded by 3 bandwidths.  bandwidth "auto" is Silverman's rule.
    """

    bandwidth: float | str = "auto"
    lattice: int = 512

    def __post_init__(self):
        if self.bandwidth != "auto":
            if not (float(self.bandwidth) > 0):
                raise VolumeError("explicit bandwidth must be positive")
        if int(self.lattice) < 64:
            raise VolumeError("lattice resolution must be at least 64")


def silverman_bandwidth(samples: np.ndarray) -> float:
    """1.06 * sigma-hat * n^(-1/5)."""
    s = np.asarray(samples, dtype=np.float64)
    n = s.size
    sd = float(np.std(s, ddof=1)) if n > 1 else 0.0
    return 1.06 * sd * n ** (-0.2)


def _bandwidths(samples: np.ndarray, config: KdeConfig) -> np.ndarray:
    """Per-row bandwidths for (V, M) sample sets."""
    v, m = samples.shape
    if config.bandwidth != "auto":
        return np.full(v, float(config.bandwidth))
    sd = np.std(samples, axis=1, ddof=1)
    return 1.06 * sd * m ** (-0.2)


def _kde_lattice_cdf(samples: np.ndarray, h: np.ndarray, lattice: int):
    """KDE CDF by trapezoid accumulation for each row of (V, M) samples.

    Returns (x, cdf) with shape (V, lattice); rows with zero bandwidth get a
    degenerate lattice at the constant value and a unit-step CDF.
    """
    v, m = samples.shape
    lo = samples.min(axis=1) - 3.0 * h
    hi = samples.max(axis=1) + 3.0 * h
    flat = hi <= lo  # zero spread and zero bandwidth
    span = np.where(flat, 1.0, hi - lo)
    du = span / (lattice - 1)
    x = lo[:, None] + du[:, None] * np.arange(lattice)[None, :]

    pdf = np.zeros((v, lattice))
    live = ~flat
    if np.any(live):
        if m > _BINNED_KDE_THRESHOLD:
            # Binned KDE: histogram on the lattice then Gaussian smoothing.
            for row in np.nonzero(live)[0]:
                edges = np.linspace(lo[row] - 0.5 * du[row], hi[row] + 0.5 * du[row], lattice + 1)
                counts, _ = np.histogram(samples[row], bins=edges)
                sm = gaussian_filter1d(counts.astype(np.float64), sigma=h[row] / du[row],
                                       mode="constant", truncate=6.0)
                pdf[row] = sm / (m * du[row])
        else:
            xl = x[live]
            hl = h[live, None]
            acc = np.zeros_like(xl)
            for col in range(m):
                z = (xl - samples[live, col][:, None]) / hl
                acc += np.exp(-0.5 * z * z)
            pdf[live] = acc / (m * hl * np.sqrt(2.0 * np.pi))

    inc = 0.5 * (pdf[:, :-1] + pdf[:, 1:]) * du[:, None]
    cdf = np.concatenate([np.zeros((v, 1)), np.cumsum(inc, axis=1)], axis=1)
    total = cdf[:, -1].copy()
    total[total <= 0] = 1.0
    cdf /= total[:, None]
    np.maximum.accumulate(cdf, axis=1, out=cdf)
    if np.any(flat):
        cdf[flat] = np.linspace(0.0, 1.0, lattice)[None, :]
        x[flat] = samples[flat, 0][:, None]
    return x, cdf


def _invert_cdf_rows(x: np.ndarray, cdf: np.ndarray, masses: np.ndarray) -> np.ndarray:
    out = np.empty((x.shape[0], masses.size))
    for row in range(x.shape[0]):
        b = np.interp(masses, cdf[row], x[row])
        np.maximum.accumulate(b, out=b)
        out[row] = b
    return out


def _batch_quantiles(samples: np.ndarray, qval: float, config: KdeConfig) -> np.ndarray:
    """Quantile boundaries (V, q+1) for (V, M) sample sets via the KDE path."""
    masses = _quantile_masses(qval)
    v = samples.shape[0]
    out = np.empty((v, masses.size))
    for start in range(0, v, _CHUNK_VOXELS):
        chunk = samples[start:start + _CHUNK_VOXELS]
        h = _bandwidths(chunk, config)
        const = (h <= 0) | (chunk.max(axis=1) == chunk.min(axis=1))
        if np.any(const):
            out[start:start + chunk.shape[0]][const] = chunk[const, 0][:, None]
        live = ~const
        if np.any(live):
            x, cdf = _kde_lattice_cdf(chunk[live], h[live], config.lattice)
            out_rows = np.nonzero(live)[0] + start
            out[out_rows] = _invert_cdf_rows(x, cdf, masses)
    return out


def estimate_quantiles(samples, qval: float, config: KdeConfig = KdeConfig()) -> QuantilePdf:
    """KDE-based quantile boundaries for one sample set.

    The KDE CDF is formed on the eval lattice by trapezoid accumulation and
    inverted at masses {0, qval, ..., 1} by monotone linear interpolation.
    """
    s = np.asarray(samples, dtype=np.float64).ravel()
    if s.size < 2:
        raise VolumeError("estimate_quantiles needs at least 2 samples")
    boundaries = _batch_quantiles(s[None, :], qval, config)[0]
    return QuantilePdf(qval, boundaries)


def kde_cdf(samples, config: KdeConfig = KdeConfig()):
    """The (lattice, cdf) pair behind estimate_quantiles, for inspection/tests."""
    s = np.asarray(samples, dtype=np.float64).ravel()
    h = _bandwidths(s[None, :], config)
    x, cdf = _kde_lattice_cdf(s[None, :], h, config.lattice)
    return x[0], cdf[0]


def fit_mean(samples) -> float:
    s = np.asarray(samples, dtype=np.float64).ravel()
    if s.size < 1:
        raise VolumeError("fit_mean needs at least 1 sample")
    return float(s.mean())


def fit_uniform(samples) -> tuple[float, float]:
    """Midrange and range."""
    s = np.asarray(samples, dtype=np.float64).ravel()
    if s.size < 1:
        raise VolumeError("fit_uniform needs at least 1 sample")
    lo, hi = float(s.min()), float(s.max())
    return 0.5 * (lo + hi), hi - lo


def fit_gaussian(samples) -> tuple[float, float]:
    """Sample mean and unbiased sample sigma."""
    s = np.asarray(samples, dtype=np.float64).ravel()
    if s.size < 2:
        raise VolumeError("fit_gaussian needs at least 2 samples")
    return float(s.mean()), float(np.std(s, ddof=1))


@dataclass(frozen=True)
class GmmModel:
    """One Gaussian mixture: k components of (weight, mean, sigma)."""

    weights: np.ndarray
    means: np.ndarray
    sigmas: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64).ravel()
        m = np.ascontiguousarray(self.means, dtype=np.float64).ravel()
        s = np.ascontiguousarray(self.sigmas, dtype=np.float64).ravel()
        if not (w.size == m.size == s.size >= 1):
            raise VolumeError("gmm arrays must be congruent and nonempty")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-6:
            raise VolumeError("gmm weights must be nonnegative and sum to 1")
        if np.any(s < 0):
            raise VolumeError("gmm sigmas must be nonnegative")
        for name, arr in (("weights", w), ("means", m), ("sigmas", s)):
            if not np.all(np.isfinite(arr)):
                raise VolumeError(f"gmm {name} must be finite")
            object.__setattr__(self, name, arr)

    @property
    def k(self) -> int:
        return self.weights.size

    def sorted_by_mean(self) -> "GmmModel":
        order = np.argsort(self.means, kind="stable")
        return GmmModel(self.weights[order], self.means[order], self.sigmas[order])

    def log_likelihood(self, samples: np.ndarray) -> float:
        return float(np.sum(_gmm_log_pdf(samples, self.weights, self.means, self.sigmas)))


def _gmm_log_pdf(x, w, mu, sg):
    safe = np.maximum(sg, 1e-300)
    z = (x[:, None] - mu[None, :]) / safe[None, :]
    logc = np.log(np.maximum(w, 1e-300)) - np.log(safe) - 0.5 * np.log(2.0 * np.pi)
    logp = logc[None, :] - 0.5 * z * z
    peak = logp.max(axis=1, keepdims=True)
    return peak[:, 0] + np.log(np.exp(logp - peak).sum(axis=1))


def fit_gmm_em(samples, k: int, seed: int = 0, max_iter: int = 100,
               trace: list | None = None) -> GmmModel:
    """Standard EM with deterministic initialization.

    Means start at the midpoints of k equal-mass empirical quantile pieces,
    sigmas at the pooled sigma / k, weights equal.  Stops when the mean
    log-likelihood moves by less than 1e-8.  The seed argument is accepted for
    interface stability; the deterministic initialization never consumes it.
    A list passed as trace collects the per-iteration mean log-likelihood.
    """
    del seed
    s = np.asarray(samples, dtype=np.float64).ravel()
    if k < 1:
        raise VolumeError("fit_gmm_em needs k >= 1")
    if s.size < k:
        raise VolumeError(f"need at least k={k} samples, got {s.size}")
    if k == 1:
        # One component: the EM fixed point is the moment fit.
        mu, sg = (s.mean(), np.std(s, ddof=1)) if s.size > 1 else (s.mean(), 0.0)
        rng_width = float(s.max() - s.min())
        floor = max(_GMM_SIGMA_FLOOR_REL * rng_width, 1e-12)
        return GmmModel(np.ones(1), np.array([mu]), np.array([max(sg, floor)]))

    rng_width = float(s.max() - s.min())
    floor = max(_GMM_SIGMA_FLOOR_REL * rng_width, 1e-12)
    edges = np.quantile(s, np.linspace(0, 1, k + 1))
    mu = 0.5 * (edges[:-1] + edges[1:])
    pooled = np.std(s, ddof=1) if s.size > 1 else 0.0
    sg = np.full(k, max(pooled / k, floor))
    w = np.full(k, 1.0 / k)

    prev_ll = -np.inf
    for _ in range(max_iter):
        safe = np.maximum(sg, 1e-300)
        z = (s[:, None] - mu[None, :]) / safe[None, :]
        logp = (np.log(np.maximum(w, 1e-300)) - np.log(safe))[None, :] - 0.5 * z * z
        peak = logp.max(axis=1, keepdims=True)
        p = np.exp(logp - peak)
        norm = p.sum(axis=1, keepdims=True)
        ll = float(np.mean(np.log(norm[:, 0]) + peak[:, 0]) - 0.5 * np.log(2.0 * np.pi))
        if trace is not None:
            trace.append(ll)
        resp = p / norm
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-300)
        w = nk / s.size
        mu = (resp * s[:, None]).sum(axis=0) / nk
        var = (resp * (s[:, None] - mu[None, :]) ** 2).sum(axis=0) / nk
        sg = np.maximum(np.sqrt(var), floor)
        if ll - prev_ll < 1e-8 and np.isfinite(prev_ll):
            break
        prev_ll = ll
    w = w / w.sum()
    return GmmModel(w, mu, sg)


def _fit_voxel_models(samples: np.ndarray, kind: str, *, qval=None, k=None, seed=0,
                      max_iter=100, config: KdeConfig = KdeConfig(), threads: int = 1):
    """Shared per-voxel fitting over (V, M) sample sets."""
    v, m = samples.shape
    if kind == "mean":
        return MeanFieldModel(samples.mean(axis=1))
    if kind == "uniform":
        lo, hi = samples.min(axis=1), samples.max(axis=1)
        return UniformModel(0.5 * (lo + hi), hi - lo)
    if kind == "gaussian":
        if m < 2:
            raise VolumeError("gaussian model needs M >= 2")
        return GaussianModel(samples.mean(axis=1), np.std(samples, axis=1, ddof=1))
    if kind == "samples":
        return SamplesModel(m, samples)
    if kind == "quantile":
        if qval is None:
            raise VolumeError("quantile model needs qval")
        if m < 2:
            raise VolumeError("quantile model needs M >= 2")
        if threads > 1:
            starts = list(range(0, v, _CHUNK_VOXELS))
            parts = [None] * len(starts)

            def work(slot):
                lo = starts[slot]
                parts[slot] = _batch_quantiles(samples[lo:lo + _CHUNK_VOXELS], qval, config)

            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(work, range(len(starts))))
            boundaries = np.concatenate(parts, axis=0)
        else:
            boundaries = _batch_quantiles(samples, qval, config)
        return QuantileModel(qval, boundaries)
    if kind == "gmm":
        if k is None:
            raise VolumeError("gmm model needs k")
        weights = np.empty((v, k))
        means = np.empty((v, k))
        sigmas = np.empty((v, k))

        def fit_range(lo, hi):
            for row in range(lo, hi):
                try:
                    g = fit_gmm_em(samples[row], k, seed=seed, max_iter=max_iter)
                except VolumeError as e:
                    raise VolumeError(f"voxel {row}: {e}") from e
                weights[row], means[row], sigmas[row] = g.weights, g.means, g.sigmas

        if threads > 1:
            bounds = list(range(0, v, _CHUNK_VOXELS)) + [v]
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(lambda i: fit_range(bounds[i], bounds[i + 1]),
                              range(len(bounds) - 1)))
        else:
            fit_range(0, v)
        return GmmVolumeModel(k, weights, means, sigmas)
    raise VolumeError(f"unknown model kind {kind!r}")


def build_distribution_volume(ensemble: EnsembleVolume, kind: str, *, qval=None, k=None,
                              seed: int = 0, max_iter: int = 100,
                              config: KdeConfig = KdeConfig(), threads: int = 1) -> DistributionVolume:
    """Fit the chosen model independently at every voxel of an ensemble."""
    if kind != "mean" and ensemble.member_count < 2:
        raise VolumeError("non-mean models need an ensemble with M >= 2")
    samples = ensemble.stacked()
    model = _fit_voxel_models(samples, kind, qval=qval, k=k, seed=seed,
                              max_iter=max_iter, config=config, threads=threads)
    return DistributionVolume(ensemble.dims, ensemble.spacing, ensemble.origin, model)


def quantile_volumes_multi(ensemble: EnsembleVolume, qvals, config: KdeConfig = KdeConfig(),
                           threads: int = 1) -> dict[float, DistributionVolume]:
    """Quantile volumes for several qvals from a single KDE pass."""
    samples = ensemble.stacked()
    v = samples.shape[0]
    masses = {qv: _quantile_masses(qv) for qv in qvals}
    outs = {qv: np.empty((v, m.size)) for qv, m in masses.items()}

    def do_chunk(start):
        chunk = samples[start:start + _CHUNK_VOXELS]
        h = _bandwidths(chunk, config)
        const = (h <= 0) | (chunk.max(axis=1) == chunk.min(axis=1))
        live = ~const
        if np.any(live):
            x, cdf = _kde_lattice_cdf(chunk[live], h[live], config.lattice)
        rows_live = np.nonzero(live)[0]
        for qv, mass in masses.items():
            out = outs[qv]
            if np.any(const):
                out[start:start + chunk.shape[0]][const] = chunk[const, 0][:, None]
            if rows_live.size:
                out[rows_live + start] = _invert_cdf_rows(x, cdf, mass)

    starts = list(range(0, v, _CHUNK_VOXELS))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(do_chunk, starts))
    else:
        for s0 in starts:
            do_chunk(s0)
    geo = (ensemble.dims, ensemble.spacing, ensemble.origin)
    return {qv: DistributionVolume(*geo, QuantileModel(qv, outs[qv])) for qv in qvals}


def downsample_hixel(hi: ScalarGrid, brick, kind: str, *, qval=None, k=None, seed: int = 0,
                     max_iter: int = 100, config: KdeConfig = KdeConfig(),
                     threads: int = 1) -> tuple[DistributionVolume, ScalarGrid]:
    """Brick a high-resolution grid into per-brick sample sets and fit models.

    Returns the fitted distribution volume plus the companion per-brick mean
    grid.  The low-res grid point sits at the brick center.
    """
    bx, by, bz = (int(b) for b in brick)
    nx, ny, nz = hi.dims
    if nx % bx or ny % by or nz % bz:
        raise VolumeError(f"dims {hi.dims} not divisible by brick {(bx, by, bz)}")
    vx, vy, vz = nx // bx, ny // by, nz // bz
    blocks = hi.values3d.reshape(vz, bz, vy, by, vx, bx)
    samples = blocks.transpose(0, 2, 4, 1, 3, 5).reshape(vz * vy * vx, bz * by * bx)
    samples = np.ascontiguousarray(samples)

    spacing = (hi.spacing[0] * bx, hi.spacing[1] * by, hi.spacing[2] * bz)
    origin = (
        hi.origin[0] + 0.5 * (bx - 1) * hi.spacing[0],
        hi.origin[1] + 0.5 * (by - 1) * hi.spacing[1],
        hi.origin[2] + 0.5 * (bz - 1) * hi.spacing[2],
    )
    mean_grid = ScalarGrid((vx, vy, vz), spacing, origin, samples.mean(axis=1))
    model = _fit_voxel_models(samples, kind, qval=qval, k=k, seed=seed,
                              max_iter=max_iter, config=config, threads=threads)
    vol = DistributionVolume((vx, vy, vz), spacing, origin, model)
    return vol, mean_grid
