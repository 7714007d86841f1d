"""Flow-augmented ELBO: squared-error reconstruction, analytic Gaussian KL and
the flow correction.

The loss to minimize is the single-sample negative ELBO

    total = recon + kl + flow_correction
    kl              = KL(q0(z | x) || N(0, I))              (closed form)
    flow_correction = -sum_k log|det J_k| + log p(z0) - log p(zK)

so that the prior is scored at ``zK``, the point that is actually decoded.
With ``prior_at="z0"`` the prior swap is dropped and ``flow_correction`` is
just ``-sum_k log|det J_k|``; that objective is unbounded below in the flow
parameters and is kept only for comparison runs.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import gradcore as gc
from .flows import FlowStack, stack_forward
from .gradcore import Node
from .nets import GaussianLatent, VaeModel, decode, encode, reparameterize


@dataclass
class ElboBreakdown:
    recon: Node
    kl: Node
    flow_correction: Node
    total: Node

    def values(self) -> tuple[float, float, float, float]:
        return (float(self.recon.value), float(self.kl.value),
                float(self.flow_correction.value), float(self.total.value))


def gaussian_kl(latent: GaussianLatent) -> Node:
    """KL(N(mu, exp(logvar)) || N(0, I)) summed over latent dimensions."""
    mu, logvar = latent.mu, latent.logvar
    return 0.5 * gc.sum(gc.square(mu) + gc.exp(logvar) - 1.0 - logvar)


def reconstruction_loss(x, x_hat) -> Node:
    x, x_hat = gc.constant(x), gc.constant(x_hat)
    if x.shape != x_hat.shape:
        raise gc.ShapeError(f"reconstruction_loss: shape mismatch {x.shape} vs {x_hat.shape}")
    return gc.sum(gc.square(x - x_hat))


PRIOR_AT = ("zK", "z0")


def flow_elbo(model: VaeModel, x, eps, prior_at: str = "zK") -> ElboBreakdown:
    """Single-sample estimate of the flow-VAE loss for one datum."""
    if prior_at not in PRIOR_AT:
        raise ValueError(f"prior_at must be one of {PRIOR_AT}, got {prior_at!r}")
    x = gc.constant(np.asarray(x, dtype=np.float64).reshape(1, -1))
    latent = encode(model, x)
    z0 = reparameterize(latent, eps)
    flowed = stack_forward(model.flows, z0)
    x_hat = decode(model, flowed.zK)
    recon = reconstruction_loss(x, x_hat)
    kl = gaussian_kl(latent)
    flow_correction = -flowed.sum_logdet
    if prior_at == "zK" and len(model.flows):
        # log N(z0; 0, I) - log N(zK; 0, I)
        flow_correction = flow_correction + 0.5 * (gc.sum(gc.square(flowed.zK)) - gc.sum(gc.square(z0)))
    return ElboBreakdown(recon, kl, flow_correction, recon + kl + flow_correction)


def vanilla_vae_loss(model: VaeModel, x, eps) -> ElboBreakdown:
    """Plain VAE loss that skips the flow stack entirely (reference for the K = 0 case)."""
    x = gc.constant(np.asarray(x, dtype=np.float64).reshape(1, -1))
    latent = encode(model, x)
    z0 = reparameterize(latent, eps)
    recon = reconstruction_loss(x, decode(model, z0))
    kl = gaussian_kl(latent)
    zero = gc.constant(0.0)
    return ElboBreakdown(recon, kl, zero, recon + kl + zero)


def mc_expectation(
    g: Callable[[np.ndarray], np.ndarray],
    sample_q0: Callable[[int], np.ndarray],
    stack: FlowStack,
    n: int,
) -> tuple[float, float]:
    """Estimate E_{q_K}[g(z)] as E_{q_0}[g(f_K o ... o f_1(z0))].

    ``sample_q0(n)`` returns an ``(n, D)`` array and ``g`` maps ``(n, D)`` to ``(n,)``.
    Returns the sample mean and its standard error.
    """
    if n < 2:
        raise ValueError("need at least two samples")
    zK, _ = stack.transform(sample_q0(n))
    vals = np.asarray(g(zK), dtype=np.float64).reshape(n)
    return float(np.mean(vals)), float(np.std(vals, ddof=1) / np.sqrt(n))
