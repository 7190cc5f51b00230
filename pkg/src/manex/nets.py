"""Minimal dense-network substrate with reverse-mode gradients.

Float64 everywhere; single-threaded per instance. A DenseNet is a stack of
affine layers with ReLU on hidden layers and identity on the output. Forward
passes cache the per-layer activations needed for the matching backward pass.
"""

from __future__ import annotations

import json
import math
import os

import numpy as np

from .errors import DomainError, NumericError, ShapeError, StateError
from .rng import RngStream

SIGMA_LOG_FLOOR = 1e-6


class DenseNet:
    """Fully connected network: hidden layers ReLU, output identity.

    Parameters are float64 arrays. `forward` accepts a single vector (n,) or a
    batch (B, n) and returns the matching rank. `backward` consumes the
    upstream gradient of the most recent forward and returns
    (param_grads, input_grad).
    """

    def __init__(self, widths: list[int], rng: RngStream | None = None, name: str = "net"):
        if len(widths) < 2 or any(w <= 0 for w in widths):
            raise ShapeError(f"{name}: widths must be >=2 positive ints, got {widths}")
        self.name = name
        self.widths = list(widths)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for i in range(len(widths) - 1):
            fan_in, fan_out = widths[i], widths[i + 1]
            if rng is None:
                w = np.zeros((fan_in, fan_out))
            else:
                bound = math.sqrt(6.0 / fan_in)
                w = rng.uniform(-bound, bound, (fan_in, fan_out))
            self.weights.append(np.asarray(w, dtype=np.float64))
            self.biases.append(np.zeros(fan_out, dtype=np.float64))
        self._cache = None

    @property
    def in_width(self) -> int:
        return self.widths[0]

    @property
    def out_width(self) -> int:
        return self.widths[-1]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def parameter_names(self) -> list[str]:
        out = []
        for i in range(len(self.weights)):
            out.append(f"{self.name}/W{i}")
            out.append(f"{self.name}/b{i}")
        return out

    def zero_grads(self) -> list[np.ndarray]:
        return [np.zeros_like(p) for p in self.parameters()]

    def copy(self) -> "DenseNet":
        dup = DenseNet(self.widths, name=self.name)
        dup.weights = [w.copy() for w in self.weights]
        dup.biases = [b.copy() for b in self.biases]
        return dup

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_width:
            raise ShapeError(f"{self.name}: expected input width {self.in_width}, got {x.shape}")
        acts = [x]
        h = x
        masks = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i < last:
                mask = z > 0.0
                h = np.where(mask, z, 0.0)
                masks.append(mask)
            else:
                h = z
            acts.append(h)
        self._cache = (acts, masks, single)
        return h[0] if single else h

    def backward(self, upstream: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients of a scalar loss given dL/d(output) of the last forward."""
        if self._cache is None:
            raise StateError(f"{self.name}: backward called before forward")
        acts, masks, single = self._cache
        g = np.asarray(upstream, dtype=np.float64)
        if single:
            g = g[None, :]
        if g.shape != acts[-1].shape:
            raise ShapeError(
                f"{self.name}: upstream shape {g.shape} != output shape {acts[-1].shape}"
            )
        grads: list[np.ndarray | None] = [None] * (2 * len(self.weights))
        delta = g
        for i in range(len(self.weights) - 1, -1, -1):
            if i < len(self.weights) - 1:
                delta = delta * masks[i]
            grads[2 * i] = acts[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            delta = delta @ self.weights[i].T
        dx = delta[0] if single else delta
        return grads, dx  # type: ignore[return-value]


class AdamW:
    """Adam with decoupled weight decay and bias-corrected moments.

    The decay is applied multiplicatively (param *= 1 - lr*wd) before the
    adaptive update, so a zero-gradient step shrinks parameters and nothing
    else.
    """

    def __init__(
        self,
        params: list[np.ndarray],
        lr: float = 3e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 1e-6,
        names: list[str] | None = None,
    ):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.names = names or [f"param{i}" for i in range(len(params))]
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ShapeError(f"expected {len(self.params)} grads, got {len(grads)}")
        for name, p, g in zip(self.names, self.params, grads):
            if g.shape != p.shape:
                raise ShapeError(f"{name}: grad shape {g.shape} != param shape {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {name}")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            p *= 1.0 - self.lr * self.weight_decay
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def kl_diag_gaussian_to_standard(mu: np.ndarray, sigma: np.ndarray) -> float:
    """KL(N(mu, diag sigma^2) || N(0, I)) = 0.5 sum(mu^2 + sigma^2 - 1 - ln sigma^2).

    Sigma must be strictly positive; values below 1e-6 are clamped inside the
    log only, to keep the result finite under collapse.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if mu.shape != sigma.shape:
        raise ShapeError(f"mu shape {mu.shape} != sigma shape {sigma.shape}")
    if np.any(sigma <= 0.0):
        raise DomainError("sigma must be strictly positive")
    logsig = np.log(np.maximum(sigma, SIGMA_LOG_FLOOR))
    return float(0.5 * np.sum(mu * mu + sigma * sigma - 1.0 - 2.0 * logsig))


def reparam_sample(
    mu: np.ndarray, sigma: np.ndarray, alpha: float, rng: RngStream
) -> np.ndarray:
    """Draw z = mu + alpha * sigma * eps with eps standard normal from `rng`."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if mu.shape != sigma.shape:
        raise ShapeError(f"mu shape {mu.shape} != sigma shape {sigma.shape}")
    if alpha < 0.0:
        raise DomainError("alpha must be >= 0")
    eps = rng.normal(mu.shape)
    return mu + alpha * sigma * eps


CHECKPOINT_FORMAT_VERSION = 1


def save_param_container(path: str, params: dict[str, np.ndarray], meta: dict) -> None:
    """JSON container of named float64 arrays with shape headers and a version field."""
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "meta": meta,
        "params": {
            name: {"shape": list(arr.shape), "data": np.asarray(arr, dtype=np.float64).ravel().tolist()}
            for name, arr in params.items()
        },
    }
    tmp = f"{path}.tmp"
    with open(tmp, "w") as f:
        json.dump(doc, f, sort_keys=True, separators=(",", ":"))
    os.replace(tmp, path)


def load_param_container(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with open(path) as f:
        doc = json.load(f)
    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise StateError(f"unsupported checkpoint format_version {version!r}")
    params = {}
    for name, entry in doc["params"].items():
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        params[name] = arr
    return params, doc.get("meta", {})
