"""Latent export, aggregate-density grids and the multimodality score."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.stats import gaussian_kde

from .data import MnistSet
from .nets import VaeModel, forward_latents


@dataclass
class LatentTable:
    idx: np.ndarray
    labels: np.ndarray
    z0: np.ndarray
    zK: np.ndarray
    sum_logdet: np.ndarray

    def __len__(self):
        return self.idx.shape[0]


def select_per_class(labels: np.ndarray, n_per_class: int) -> np.ndarray:
    """Indices of the first ``n_per_class`` examples of every digit, in dataset order."""
    chosen = [np.flatnonzero(labels == d)[:n_per_class] for d in range(10)]
    return np.sort(np.concatenate(chosen))


def compute_latents(model: VaeModel, dataset: MnistSet, n_per_class: int, seed: int) -> LatentTable:
    """Encode, draw a fresh seeded eps per example, apply ``mu + eps * sigma`` and then the flows."""
    idx = select_per_class(dataset.labels, n_per_class)
    eps = np.random.default_rng(seed).standard_normal((idx.size, model.config.latent_dim))
    _, _, z0, zK, sld = forward_latents(model, dataset.images[idx], eps)
    return LatentTable(idx, dataset.labels[idx], z0, zK, sld)


def latent_header(dim: int) -> list[str]:
    return (["idx", "label"] + [f"z0_{i}" for i in range(dim)]
            + [f"zK_{i}" for i in range(dim)] + ["sum_logdet"])


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def write_latents(path, table: LatentTable) -> None:
    dim = table.z0.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(latent_header(dim))
        for i in range(len(table)):
            w.writerow([int(table.idx[i]), int(table.labels[i]),
                        *map(_fmt, table.z0[i]), *map(_fmt, table.zK[i]), _fmt(table.sum_logdet[i])])


def read_latents(path) -> LatentTable:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    dim = (len(header) - 3) // 2
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return LatentTable(rows[:, 0].astype(int), rows[:, 1].astype(int),
                       rows[:, 2:2 + dim], rows[:, 2 + dim:2 + 2 * dim], rows[:, -1])


def class_means(table: LatentTable) -> dict[int, np.ndarray]:
    return {int(d): table.zK[table.labels == d].mean(axis=0) for d in np.unique(table.labels)}


def write_class_means(path, table: LatentTable) -> None:
    dim = table.zK.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "count"] + [f"zK_{i}" for i in range(dim)])
        for d, mean in class_means(table).items():
            w.writerow([d, int(np.sum(table.labels == d)), *map(_fmt, mean)])


# ------------------------------------------------------------------ density


@dataclass
class DensityGrid:
    xs: np.ndarray
    ys: np.ndarray
    density: np.ndarray  # shape (len(ys), len(xs))

    @property
    def cell_area(self) -> float:
        return float((self.xs[1] - self.xs[0]) * (self.ys[1] - self.ys[0]))

    def mass(self) -> float:
        return float(self.density.sum() * self.cell_area)


def auto_bounds(samples: np.ndarray, pad: float = 3.0) -> tuple[float, float, float, float]:
    """Sample range padded by ``pad`` KDE bandwidths per axis."""
    kde = gaussian_kde(samples.T)
    bw = np.sqrt(np.diag(kde.covariance))
    lo, hi = samples.min(axis=0) - pad * bw, samples.max(axis=0) + pad * bw
    return float(lo[0]), float(hi[0]), float(lo[1]), float(hi[1])


def kde_grid(samples: np.ndarray, bounds=None, resolution: int = 100) -> DensityGrid:
    """Gaussian KDE (Scott's rule) of 2-D samples, evaluated at grid cell centres."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[1] != 2:
        raise ValueError(f"density grids need 2-D latents, got shape {samples.shape}")
    if bounds is None:
        bounds = auto_bounds(samples)
    x0, x1, y0, y1 = bounds
    dx, dy = (x1 - x0) / resolution, (y1 - y0) / resolution
    xs = x0 + dx * (np.arange(resolution) + 0.5)
    ys = y0 + dy * (np.arange(resolution) + 0.5)
    gx, gy = np.meshgrid(xs, ys)
    kde = gaussian_kde(samples.T, bw_method="scott")
    dens = kde(np.vstack([gx.ravel(), gy.ravel()])).reshape(gy.shape)
    return DensityGrid(xs, ys, dens)


def write_density(path, grid: DensityGrid) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "density"])
        for j, y in enumerate(grid.ys):
            for i, x in enumerate(grid.xs):
                w.writerow([_fmt(x), _fmt(y), _fmt(grid.density[j, i])])


def pgm_bytes(grid: DensityGrid) -> bytes:
    """8-bit binary PGM, max-normalized, top row = largest y."""
    d = grid.density[::-1]
    peak = d.max()
    pix = np.zeros_like(d) if peak <= 0 else np.rint(255.0 * d / peak)
    h, w = d.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pix.astype(np.uint8).tobytes()


def high_density_regions(grid: DensityGrid, fraction: float = 0.25) -> int:
    """Number of 8-connected grid regions with density >= ``fraction`` of the peak."""
    mask = grid.density >= fraction * grid.density.max()
    _, count = ndimage.label(mask, structure=np.ones((3, 3)))
    return int(count)


# ------------------------------------------------------------- mixture / BIC


@dataclass
class GmmFit:
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    loglik: float
    iterations: int


def _component_logpdf(X: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    n, d = X.shape
    chol = np.linalg.cholesky(covs)
    out = np.empty((n, means.shape[0]))
    for k in range(means.shape[0]):
        sol = np.linalg.solve(chol[k], (X - means[k]).T)
        out[:, k] = (-0.5 * np.sum(sol * sol, axis=0) - np.sum(np.log(np.diag(chol[k])))
                     - 0.5 * d * np.log(2.0 * np.pi))
    return out


def _em(X, means, covs, weights, max_iter, tol, reg):
    n, d = X.shape
    prev = -np.inf
    eye = reg * np.eye(d)
    it = 0
    for it in range(1, max_iter + 1):
        logp = _component_logpdf(X, means, covs) + np.log(weights)
        norm = np.logaddexp.reduce(logp, axis=1)
        ll = float(norm.sum())
        resp = np.exp(logp - norm[:, None])
        nk = resp.sum(axis=0) + 1e-12
        weights = nk / n
        means = (resp.T @ X) / nk[:, None]
        diff = X[None, :, :] - means[:, None, :]
        covs = np.einsum("kn,kni,knj->kij", resp.T, diff, diff) / nk[:, None, None] + eye
        if ll - prev <= tol * abs(ll):
            break
        prev = ll
    logp = _component_logpdf(X, means, covs) + np.log(weights)
    ll = float(np.logaddexp.reduce(logp, axis=1).sum())
    return GmmFit(weights, means, covs, ll, it)


def fit_gmm(X: np.ndarray, k: int, restarts: int = 50, max_iter: int = 200, seed: int = 0,
            tol: float = 1e-10, reg: float = 1e-6) -> GmmFit:
    """Full-covariance Gaussian mixture by EM, best log-likelihood over seeded restarts.

    Each restart places the means on ``k`` distinct random data points with
    the pooled data covariance and equal weights.
    """
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if n < k:
        raise ValueError(f"need at least {k} samples, got {n}")
    rng = np.random.default_rng(seed)
    pooled = np.cov(X.T).reshape(d, d) + reg * np.eye(d)
    best = None
    for _ in range(restarts if k > 1 else 1):
        means = X[rng.choice(n, size=k, replace=False)]
        covs = np.repeat(pooled[None], k, axis=0)
        fit = _em(X, means, covs, np.full(k, 1.0 / k), max_iter, tol, reg)
        if best is None or fit.loglik > best.loglik:
            best = fit
    return best


def gmm_parameter_count(k: int, d: int) -> int:
    return k * d + k * d * (d + 1) // 2 + (k - 1)


def bic(loglik: float, k: int, n: int, d: int) -> float:
    return -2.0 * loglik + gmm_parameter_count(k, d) * np.log(n)


def multimodality_score(X: np.ndarray, k: int = 10, restarts: int = 50, max_iter: int = 200,
                        seed: int = 0) -> float:
    """BIC(1 component) - BIC(k components).  Positive means the mixture is preferred."""
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    one = fit_gmm(X, 1, 1, max_iter, seed)
    many = fit_gmm(X, k, restarts, max_iter, seed)
    return bic(one.loglik, 1, n, d) - bic(many.loglik, k, n, d)
