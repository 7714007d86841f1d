"""Planar normalizing flows.

A planar flow maps ``z -> z + u_hat * tanh(w.z + b)``.  The raw parameter ``u``
is unconstrained; ``u_hat`` is a reparametrization that guarantees
``w.u_hat > -1`` so the map stays invertible and its Jacobian determinant
``1 + u_hat.psi(z)`` stays positive.

Two evaluation routes are provided.  The module-level functions build
differentiable graphs (one latent vector of shape ``(1, D)`` at a time) and
are used for training.  :meth:`PlanarFlow.transform` and
:meth:`FlowStack.transform` evaluate batches of shape ``(N, D)`` in plain
numpy for sampling, density grids and export.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gradcore as gc
from .gradcore import Node, Parameter

LOGDET_FLOOR = 1e-7
MIN_W_NORM = 1e-12
# margin that keeps w.u_hat >= -1 + DELTA after rounding
DELTA = 1e-7
# m(IDENTITY_DOT) == 0
IDENTITY_DOT = float(np.log(np.expm1(1.0 - DELTA)))


class ZeroWError(ValueError):
    pass


class PlanarFlow:
    """One planar transformation with trainable ``u``, ``w`` (shape ``(1, D)``) and ``b``."""

    def __init__(self, u, w, b=0.0, name: str = "flow"):
        u = np.asarray(u, dtype=np.float64).reshape(1, -1)
        w = np.asarray(w, dtype=np.float64).reshape(1, -1)
        if u.shape != w.shape:
            raise gc.ShapeError(f"u and w must match, got {u.shape} vs {w.shape}")
        self.u = Parameter(f"{name}.u", u)
        self.w = Parameter(f"{name}.w", w)
        self.b = Parameter(f"{name}.b", np.asarray(b, dtype=np.float64).reshape(()))

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator, scale: float = 0.01, name: str = "flow"):
        """Near-identity start: ``w`` and ``u`` uniform in [-scale, scale], ``b = 0``.

        ``u`` is then shifted along ``w`` so that ``w.u_hat == 0``.  That makes
        ``u_hat`` the (tiny) part of the drawn ``u`` orthogonal to ``w`` and the
        initial log-determinant exactly zero.
        """
        w = rng.uniform(-scale, scale, size=(1, dim))
        u = rng.uniform(-scale, scale, size=(1, dim))
        ww = float(np.sum(w * w))
        u = u + (IDENTITY_DOT - float(np.sum(w * u))) * w / ww
        return cls(u, w, 0.0, name=name)

    @property
    def dim(self) -> int:
        return self.u.value.shape[1]

    def parameters(self) -> list[Parameter]:
        return [self.u, self.w, self.b]

    def u_hat(self) -> np.ndarray:
        return constrain_u_array(self.u.value, self.w.value)

    def transform(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Batch forward pass. Returns ``(z', log_det)`` with shapes ``(N, D)``, ``(N,)``."""
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if z.shape[1] != self.dim:
            raise gc.ShapeError(f"expected latent dimension {self.dim}, got {z.shape[1]}")
        w = self.w.value[0]
        u_hat = self.u_hat()[0]
        h = np.tanh(z @ w + float(self.b.value))
        out = z + np.outer(h, u_hat)
        # u_hat . psi(z) == h'(.) * (w . u_hat)
        arg = 1.0 + (1.0 - h * h) * float(w @ u_hat)
        return out, np.log(np.maximum(np.abs(arg), LOGDET_FLOOR))


@dataclass
class FlowStack:
    flows: list[PlanarFlow] = field(default_factory=list)

    @classmethod
    def init(cls, dim: int, length: int, rng: np.random.Generator, scale: float = 0.01,
             prefix: str = "flows"):
        return cls([PlanarFlow.init(dim, rng, scale, name=f"{prefix}.{k}") for k in range(length)])

    def __len__(self):
        return len(self.flows)

    def __iter__(self):
        return iter(self.flows)

    def parameters(self) -> list[Parameter]:
        return [p for f in self.flows for p in f.parameters()]

    def transform(self, z0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Batch composite map. Returns ``(zK, sum_logdet)``."""
        z = np.atleast_2d(np.asarray(z0, dtype=np.float64))
        total = np.zeros(z.shape[0])
        for f in self.flows:
            z, ld = f.transform(z)
            total = total + ld
        return z, total


@dataclass
class FlowResult:
    zK: Node
    sum_logdet: Node
    trajectory: list[Node] | None = None


def _m(a):
    """Map R -> (-1 + DELTA, inf): m(a) = -1 + DELTA + softplus(a)."""
    return (DELTA - 1.0) + np.logaddexp(0.0, a)


def constrain_u_array(u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Row-wise ``u_hat`` for arrays of shape ``(N, D)`` (or ``(D,)``)."""
    u = np.asarray(u, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if u.shape != w.shape:
        raise gc.ShapeError(f"u and w must match, got {u.shape} vs {w.shape}")
    wu = np.sum(w * u, axis=-1, keepdims=True)
    ww = np.sum(w * w, axis=-1, keepdims=True)
    if np.any(np.sqrt(ww) < MIN_W_NORM):
        raise ZeroWError("w has (near) zero norm; u_hat is undefined")
    return u + (_m(wu) - wu) * w / ww


def constrain_u(u, w) -> Node:
    """Differentiable ``u_hat = u + (m(w.u) - w.u) w / |w|^2`` with ``m(a) = -1 + DELTA + softplus(a)``."""
    u, w = gc.constant(u), gc.constant(w)
    if u.shape != w.shape:
        raise gc.ShapeError(f"u and w must match, got {u.shape} vs {w.shape}")
    ww = gc.sum(gc.square(w))
    if np.sqrt(ww.value) < MIN_W_NORM:
        raise ZeroWError("w has (near) zero norm; u_hat is undefined")
    wu = gc.sum(w * u)
    m = gc.softplus(wu) + (DELTA - 1.0)
    return u + (m - wu) / ww * w


def _check_dim(flow: PlanarFlow, z: Node):
    if z.shape != flow.w.shape:
        raise gc.ShapeError(f"latent shape {z.shape} does not match flow shape {flow.w.shape}")


def _preactivation(flow: PlanarFlow, z: Node) -> Node:
    return gc.sum(flow.w * z) + flow.b


def psi(flow: PlanarFlow, z) -> Node:
    """``h'(w.z + b) * w`` with ``h = tanh``."""
    z = gc.constant(z)
    _check_dim(flow, z)
    h = gc.tanh(_preactivation(flow, z))
    return (1.0 - gc.square(h)) * flow.w


def forward(flow: PlanarFlow, z, u_hat: Node | None = None) -> Node:
    z = gc.constant(z)
    _check_dim(flow, z)
    if u_hat is None:
        u_hat = constrain_u(flow.u, flow.w)
    return z + u_hat * gc.tanh(_preactivation(flow, z))


def log_det(flow: PlanarFlow, z, u_hat: Node | None = None) -> Node:
    """``log |1 + u_hat.psi(z)|`` with a small floor inside the log."""
    z = gc.constant(z)
    if u_hat is None:
        u_hat = constrain_u(flow.u, flow.w)
    arg = 1.0 + gc.sum(u_hat * psi(flow, z))
    # arg > 0 analytically because w.u_hat > -1 and 0 < h' <= 1
    return gc.log(gc.clip(arg, lo=LOGDET_FLOOR))


def stack_forward(stack: FlowStack, z0, record_trajectory: bool = False) -> FlowResult:
    z = gc.constant(z0)
    total = gc.constant(0.0)
    trajectory = [z] if record_trajectory else None
    for flow in stack.flows:
        u_hat = constrain_u(flow.u, flow.w)
        total = total + log_det(flow, z, u_hat)
        z = forward(flow, z, u_hat)
        if record_trajectory:
            trajectory.append(z)
    return FlowResult(z, total, trajectory)


def log_density_after_flows(base_log_q0, result: FlowResult | float):
    """``log q_K(z_K) = log q_0(z_0) - sum_k log|det J_k|``.

    Works on graph nodes or plain floats/arrays.
    """
    sld = result.sum_logdet if isinstance(result, FlowResult) else result
    if isinstance(base_log_q0, Node) or isinstance(sld, Node):
        return gc.sub(base_log_q0, sld)
    return np.asarray(base_log_q0) - np.asarray(sld)


def standard_normal_logpdf(z: np.ndarray) -> np.ndarray:
    z = np.atleast_2d(z)
    return -0.5 * np.sum(z * z, axis=1) - 0.5 * z.shape[1] * np.log(2.0 * np.pi)
