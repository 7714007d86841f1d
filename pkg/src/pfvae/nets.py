"""Dense encoder/decoder networks, the Gaussian latent head and the reparametrization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gradcore as gc
from .flows import FlowStack
from .gradcore import Node, Parameter

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    hidden_activation: str = "tanh"

    def __post_init__(self):
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(d <= 0 for d in dims):
            raise ValueError(f"layer sizes must be positive, got {dims}")
        if self.hidden_activation != "tanh":
            raise ValueError(f"unsupported hidden activation {self.hidden_activation!r}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        return list(zip(dims[:-1], dims[1:]))


def init_weights(config: MlpConfig, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Glorot-uniform weights and zero biases, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    out = []
    for fan_in, fan_out in config.layer_dims:
        a = np.sqrt(6.0 / (fan_in + fan_out))
        out.append((rng.uniform(-a, a, size=(fan_in, fan_out)), np.zeros((1, fan_out))))
    return out


class Mlp:
    """Stack of dense layers; tanh on hidden layers, the output activation is left to the caller."""

    def __init__(self, config: MlpConfig, seed: int, name: str):
        self.config = config
        self.layers = [
            (Parameter(f"{name}.{i}.W", W), Parameter(f"{name}.{i}.b", b))
            for i, (W, b) in enumerate(init_weights(config, seed))
        ]

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer]

    def __call__(self, x: Node) -> Node:
        last = len(self.layers) - 1
        for i, (W, b) in enumerate(self.layers):
            x = gc.matmul(x, W) + b
            if i < last:
                x = gc.tanh(x)
        return x

    def apply_array(self, x: np.ndarray) -> np.ndarray:
        last = len(self.layers) - 1
        for i, (W, b) in enumerate(self.layers):
            x = x @ W.value + b.value
            if i < last:
                x = np.tanh(x)
        return x


@dataclass
class GaussianLatent:
    mu: Node
    logvar: Node


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 784
    hidden_dims: tuple[int, ...] = (10, 10, 10, 10)
    latent_dim: int = 2
    flow_length: int = 4


class VaeModel:
    """Encoder -> (mu, logvar) -> z0 -> planar flows -> zK -> decoder.

    The mean and log-variance heads each take the last encoder hidden layer
    (or the raw input when there are no hidden layers).
    """

    def __init__(self, config: ModelConfig, seed: int = 0, flow_init_scale: float = 0.01):
        self.config = config
        seeds = np.random.SeedSequence(seed).generate_state(5)
        hidden = tuple(config.hidden_dims)
        feat = hidden[-1] if hidden else config.input_dim
        if hidden:
            self.encoder = Mlp(MlpConfig(config.input_dim, hidden[:-1], hidden[-1]), int(seeds[0]), "encoder")
        else:
            self.encoder = None
        self.mu_head = Mlp(MlpConfig(feat, (), config.latent_dim), int(seeds[1]), "mu_head")
        self.logvar_head = Mlp(MlpConfig(feat, (), config.latent_dim), int(seeds[2]), "logvar_head")
        self.flows = FlowStack.init(config.latent_dim, config.flow_length,
                                    np.random.default_rng(int(seeds[3])), flow_init_scale)
        self.decoder = Mlp(MlpConfig(config.latent_dim, hidden[::-1], config.input_dim), int(seeds[4]), "decoder")

    def parameters(self) -> list[Parameter]:
        params = self.encoder.parameters() if self.encoder else []
        params += self.mu_head.parameters() + self.logvar_head.parameters()
        params += self.flows.parameters() + self.decoder.parameters()
        return params

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def _features(self, x: Node) -> Node:
        # encoder output layer is a hidden layer of the full network, hence tanh
        return gc.tanh(self.encoder(x)) if self.encoder else x

    def _features_array(self, x: np.ndarray) -> np.ndarray:
        return np.tanh(self.encoder.apply_array(x)) if self.encoder else x

    # -- array route (batched, no gradients)

    def encode_array(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        h = self._features_array(np.atleast_2d(x))
        mu = self.mu_head.apply_array(h)
        logvar = np.clip(self.logvar_head.apply_array(h), LOGVAR_MIN, LOGVAR_MAX)
        return mu, logvar

    def decode_array(self, z: np.ndarray) -> np.ndarray:
        return 0.5 * (1.0 + np.tanh(0.5 * self.decoder.apply_array(np.atleast_2d(z))))


def _row(x, dim: int, what: str) -> Node:
    if not isinstance(x, Node):
        x = gc.constant(np.asarray(x, dtype=np.float64).reshape(1, -1))
    if x.shape != (1, dim):
        raise gc.ShapeError(f"{what}: expected shape (1, {dim}), got {x.shape}")
    return x


def encode(model: VaeModel, x) -> GaussianLatent:
    x = _row(x, model.config.input_dim, "encode")
    h = model._features(x)
    mu = model.mu_head(h)
    logvar = gc.clip(model.logvar_head(h), LOGVAR_MIN, LOGVAR_MAX)
    return GaussianLatent(mu, logvar)


def reparameterize(latent: GaussianLatent, eps) -> Node:
    """``z0 = mu + eps * exp(logvar / 2)`` with ``eps`` held constant."""
    eps = gc.constant(np.asarray(eps, dtype=np.float64).reshape(latent.mu.shape))
    return latent.mu + eps * gc.exp(0.5 * latent.logvar)


def decode(model: VaeModel, zK) -> Node:
    zK = _row(zK, model.config.latent_dim, "decode")
    return gc.sigmoid(model.decoder(zK))


def forward_latents(model: VaeModel, x: np.ndarray, eps: np.ndarray):
    """Batched encode -> reparameterize -> flows. Returns ``(mu, logvar, z0, zK, sum_logdet)``."""
    mu, logvar = model.encode_array(x)
    z0 = mu + eps * np.exp(0.5 * logvar)
    zK, sld = model.flows.transform(z0)
    return mu, logvar, z0, zK, sld

