"""Adam with bias correction over named parameters."""
from __future__ import annotations

from typing import Mapping

import numpy as np

from .gradcore import NonFiniteError, Parameter, ShapeError


class Adam:
    def __init__(self, lr: float = 0.002, beta1: float = 0.9, beta2: float = 0.999,
                 eps_hat: float = 1e-8, clip_norm: float = 0.0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps_hat = eps_hat
        # global-norm clipping, 0 disables
        self.clip_norm = clip_norm
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: Mapping[str, Parameter], grads: Mapping[str, np.ndarray]) -> None:
        """One Adam update; replaces each ``params[name].value`` with a new array."""
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.value.shape:
                raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {p.value.shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for {name}")

        scale = 1.0
        if self.clip_norm > 0:
            norm = np.sqrt(sum(float(np.sum(grads[n] ** 2)) for n in params))
            if norm > self.clip_norm:
                scale = self.clip_norm / norm

        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name] * scale
            m = self.m.get(name, np.zeros_like(p.value))
            v = self.v.get(name, np.zeros_like(p.value))
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            self.m[name], self.v[name] = m, v
            m_hat = m / bc1
            v_hat = v / bc2
            p.value = p.value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps_hat)

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {
            "adam.lr": np.array(self.lr), "adam.beta1": np.array(self.beta1),
            "adam.beta2": np.array(self.beta2), "adam.eps_hat": np.array(self.eps_hat),
            "adam.clip_norm": np.array(self.clip_norm), "adam.t": np.array(float(self.t)),
        }
        for name in sorted(self.m):
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    @classmethod
    def from_state_tensors(cls, tensors: Mapping[str, np.ndarray]) -> "Adam":
        opt = cls(float(tensors["adam.lr"]), float(tensors["adam.beta1"]), float(tensors["adam.beta2"]),
                  float(tensors["adam.eps_hat"]), float(tensors["adam.clip_norm"]))
        opt.t = int(tensors["adam.t"])
        for key, val in tensors.items():
            if key.startswith("adam.m."):
                opt.m[key[len("adam.m."):]] = np.array(val)
            elif key.startswith("adam.v."):
                opt.v[key[len("adam.v."):]] = np.array(val)
        return opt
