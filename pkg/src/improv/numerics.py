"""Dense MLPs with exact reverse-mode gradients, Adam, and a splittable RNG.

Everything runs in 64-bit floats. Networks here are tiny (a few tens of
thousands of parameters), so exactness and reproducibility are worth far more
than throughput. All functions are pure; optimizer state is owned by the
caller and returned updated.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

# A Matrix is a 2-d row-major float64 ndarray; vectors are 1-d float64.
Matrix = np.ndarray

_U64 = 0xFFFFFFFFFFFFFFFF


# ---------------------------------------------------------------------------
# Splittable random source
# ---------------------------------------------------------------------------

def _label_words(label) -> tuple[int, int]:
    """Map an int or str stream label to two 32-bit words."""
    if isinstance(label, (int, np.integer)) and not isinstance(label, bool):
        v = int(label) & _U64
    elif isinstance(label, str):
        v = int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:8], "little")
    else:
        raise TypeError(f"rng labels must be int or str, got {type(label)}")
    return (v & 0xFFFFFFFF, (v >> 32) & 0xFFFFFFFF)


@dataclass(frozen=True)
class RngKey:
    """Deterministic random stream identified by (seed, label path).

    Identical (seed, path) pairs produce identical draws no matter where or
    in what order they are consumed, which makes parallel rollouts
    reproducible independent of scheduling.
    """

    seed: int
    path: tuple[int, ...] = ()

    def child(self, *labels) -> "RngKey":
        words: list[int] = []
        for lab in labels:
            words.extend(_label_words(lab))
        return RngKey(self.seed, self.path + tuple(words))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed) & _U64, spawn_key=self.path)
        return np.random.Generator(np.random.PCG64(ss))

    def normal(self, shape=None) -> np.ndarray:
        return self.generator().standard_normal(shape)

    def uniform(self, low=0.0, high=1.0, shape=None) -> np.ndarray:
        return self.generator().uniform(low, high, shape)

    def integers(self, low, high, shape=None) -> np.ndarray:
        return self.generator().integers(low, high, shape)


def gaussian(key: RngKey, shape=None) -> np.ndarray:
    """Standard-normal samples; same key -> same samples."""
    return key.normal(shape)


def stable_hash64(*parts) -> int:
    """63-bit non-negative hash of a label tuple, stable across runs."""
    text = "\x1f".join(repr(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFFFFFFFFFFFFFF


# ---------------------------------------------------------------------------
# MLP
# ---------------------------------------------------------------------------

_ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass
class MlpParams:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]  # weights[i]: (layer_sizes[i+1], layer_sizes[i])
    biases: list[np.ndarray]   # biases[i]: (layer_sizes[i+1],)
    hidden_activation: str = "relu"
    output_activation: str = "identity"


def init_mlp(layer_sizes, key: RngKey, hidden_activation="relu",
             output_activation="identity") -> MlpParams:
    """Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2:
        raise ValueError(f"need at least input and output sizes, got {sizes}")
    for act in (hidden_activation, output_activation):
        if act not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {act!r}")
    weights, biases = [], []
    for i in range(len(sizes) - 1):
        fan_in, fan_out = sizes[i], sizes[i + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = key.child("w", i).uniform(-bound, bound, (fan_out, fan_in))
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return MlpParams(sizes, weights, biases, hidden_activation, output_activation)


def _apply_act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_deriv(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return np.ones_like(z)


def _check_input(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != params.layer_sizes[0]:
        raise ValueError(
            f"input shape {x.shape} does not match first layer size "
            f"{params.layer_sizes[0]} (layer_sizes={params.layer_sizes})")
    return x


def _forward_cached(params: MlpParams, x: np.ndarray):
    """Forward pass keeping inputs and pre-activations of every layer."""
    inputs, preacts = [], []
    a = x
    n = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(a)
        z = a @ w.T + b
        preacts.append(z)
        act = params.output_activation if i == n - 1 else params.hidden_activation
        a = _apply_act(act, z)
    return a, (inputs, preacts)


def mlp_forward(params: MlpParams, x) -> np.ndarray:
    """Evaluate the network; x may be one vector or a (batch, dim) matrix."""
    x = _check_input(params, x)
    y, _ = _forward_cached(params, x)
    return y


def _backward_from_cache(params: MlpParams, cache, upstream: np.ndarray):
    """Gradients of <upstream, output>; batched upstream rows are summed."""
    inputs, preacts = cache
    n = len(params.weights)
    grads_w = [None] * n
    grads_b = [None] * n
    da = upstream
    for i in range(n - 1, -1, -1):
        act = params.output_activation if i == n - 1 else params.hidden_activation
        dz = da * _act_deriv(act, preacts[i])
        a_prev = inputs[i]
        if dz.ndim == 1:
            grads_w[i] = np.outer(dz, a_prev)
            grads_b[i] = dz
        else:
            grads_w[i] = dz.T @ a_prev
            grads_b[i] = dz.sum(axis=0)
        da = dz @ params.weights[i]
    grads: list[np.ndarray] = []
    for gw, gb in zip(grads_w, grads_b):
        grads.extend((gw, gb))
    return grads, da


def mlp_backward(params: MlpParams, x, upstream_grad):
    """Exact gradients of <upstream_grad, mlp_forward(params, x)>.

    Returns (param_grads, input_grad) where param_grads is the flat list
    [W0, b0, W1, b1, ...] matching ``mlp_param_arrays``.
    """
    x = _check_input(params, x)
    upstream = np.asarray(upstream_grad, dtype=np.float64)
    y, cache = _forward_cached(params, x)
    if upstream.shape != y.shape:
        raise ValueError(f"upstream shape {upstream.shape} does not match output {y.shape}")
    return _backward_from_cache(params, cache, upstream)


def mlp_param_arrays(params: MlpParams) -> list[np.ndarray]:
    arrays: list[np.ndarray] = []
    for w, b in zip(params.weights, params.biases):
        arrays.extend((w, b))
    return arrays


def mlp_with_arrays(params: MlpParams, arrays) -> MlpParams:
    n = len(params.weights)
    if len(arrays) != 2 * n:
        raise ValueError(f"expected {2 * n} arrays, got {len(arrays)}")
    weights = [np.asarray(arrays[2 * i]) for i in range(n)]
    biases = [np.asarray(arrays[2 * i + 1]) for i in range(n)]
    for i, (w, b) in enumerate(zip(weights, biases)):
        if w.shape != params.weights[i].shape or b.shape != params.biases[i].shape:
            raise ValueError(f"layer {i} shape mismatch: {w.shape}/{b.shape}")
    return MlpParams(params.layer_sizes, weights, biases,
                     params.hidden_activation, params.output_activation)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    step: int
    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(param_arrays, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    m = [np.zeros_like(p) for p in param_arrays]
    v = [np.zeros_like(p) for p in param_arrays]
    return AdamState(0, m, v, lr, beta1, beta2, eps)


def adam_step(state: AdamState, param_arrays, grads):
    """One bias-corrected Adam update; returns (new state, new params)."""
    if len(param_arrays) != len(state.m) or len(grads) != len(state.m):
        raise ValueError(
            f"parameter count mismatch: {len(param_arrays)} params, "
            f"{len(grads)} grads, {len(state.m)} accumulators")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_m, new_v, new_p = [], [], []
    for i, (p, g) in enumerate(zip(param_arrays, grads)):
        # cheap screen first; g.sum() is non-finite whenever any entry is
        if not np.isfinite(g.sum()) and not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient in parameter block {i}")
        m = b1 * state.m[i] + (1.0 - b1) * g
        v = b2 * state.v[i] + (1.0 - b2) * (g * g)
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        new_m.append(m)
        new_v.append(v)
        new_p.append(p - update)
    new_state = AdamState(t, new_m, new_v, state.lr, b1, b2, state.eps)
    return new_state, new_p
