"""Small fixed-topology ReLU MLPs with hand-written backprop and Adam.

Everything is plain numpy in float64. Inputs may be a single vector of shape
``(n_in,)`` or a batch of shape ``(batch, n_in)``; gradients of a batch are
summed over the batch (the cotangent carries any averaging).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericalError

MAGIC = b"MRFILNN1"


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths ``(input, hidden..., output)``; ReLU hidden, identity output."""

    layer_widths: tuple[int, ...]

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2:
            raise ConfigError(f"need at least input and output widths, got {widths}")
        if any(w < 1 for w in widths):
            raise ConfigError(f"layer widths must be >= 1, got {widths}")
        object.__setattr__(self, "layer_widths", widths)

    @classmethod
    def build(cls, n_in: int, n_out: int, hidden: int = 64, depth: int = 2) -> "MlpSpec":
        return cls((n_in, *([hidden] * depth), n_out))

    @property
    def n_in(self) -> int:
        return self.layer_widths[0]

    @property
    def n_out(self) -> int:
        return self.layer_widths[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1


@dataclass
class MlpParams:
    weights: list[np.ndarray]  # layer l: (out_l, in_l)
    biases: list[np.ndarray]

    @property
    def spec(self) -> MlpSpec:
        return MlpSpec((self.weights[0].shape[1], *(w.shape[0] for w in self.weights)))

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    @classmethod
    def from_arrays(cls, arrays: list[np.ndarray]) -> "MlpParams":
        n = len(arrays) // 2
        return cls(list(arrays[:n]), list(arrays[n:]))

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> "MlpParams":
        return MlpParams([np.zeros_like(w) for w in self.weights],
                         [np.zeros_like(b) for b in self.biases])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec: np.ndarray) -> "MlpParams":
        out, i = [], 0
        for a in self.arrays():
            out.append(np.asarray(vec[i:i + a.size], dtype=float).reshape(a.shape).copy())
            i += a.size
        if i != len(vec):
            raise ConfigError(f"flat vector has {len(vec)} entries, expected {i}")
        return MlpParams.from_arrays(out)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())

    def __eq__(self, other) -> bool:
        if not isinstance(other, MlpParams) or len(self.weights) != len(other.weights):
            return NotImplemented
        return all(a.shape == b.shape and np.array_equal(a, b)
                   for a, b in zip(self.arrays(), other.arrays()))


def mlp_init(spec: MlpSpec, seed: int) -> MlpParams:
    """Scaled-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases."""
    if not isinstance(spec, MlpSpec):
        spec = MlpSpec(tuple(spec))
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        bound = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return MlpParams(weights, biases)


def _as_batch(x: np.ndarray, width: int, what: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != width:
        raise ConfigError(f"{what} has shape {x.shape}, expected last dimension {width}")
    return x, single


def mlp_forward(params: MlpParams, x: np.ndarray, return_cache: bool = False):
    """Evaluate the network. With ``return_cache`` also return the hidden activations."""
    h, single = _as_batch(x, params.weights[0].shape[1], "input")
    acts = [h]
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    out = h[0] if single else h
    return (out, acts) if return_cache else out


def mlp_backward(params: MlpParams, x: np.ndarray, output_cotangent: np.ndarray, cache=None):
    """Reverse-mode gradients of ``sum(output * cotangent)``.

    Returns ``(param_grads, input_grad)``. ReLU'(0) is taken as 0.
    """
    n_out = params.weights[-1].shape[0]
    g, single = _as_batch(output_cotangent, n_out, "cotangent")
    if cache is None:
        _, cache = mlp_forward(params, x, return_cache=True)
    if cache[0].shape[0] != g.shape[0]:
        raise ConfigError("cotangent batch size does not match input batch size")
    n = len(params.weights)
    dws, dbs = [None] * n, [None] * n
    for i in range(n - 1, -1, -1):
        if i < n - 1:
            g = g * (cache[i + 1] > 0.0)
        dws[i] = g.T @ cache[i]
        dbs[i] = g.sum(axis=0)
        g = g @ params.weights[i]
    input_grad = g[0] if single else g
    return MlpParams(dws, dbs), input_grad


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step_count: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_arrays(cls, arrays, lr: float = 3e-4, **kw) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], lr=lr, **kw)

    @classmethod
    def for_params(cls, params: MlpParams, lr: float = 3e-4, **kw) -> "AdamState":
        return cls.for_arrays(params.arrays(), lr=lr, **kw)

    def copy(self) -> "AdamState":
        return AdamState([m.copy() for m in self.first_moment], [v.copy() for v in self.second_moment],
                         self.step_count, self.lr, self.beta1, self.beta2, self.eps)


def adam_update(arrays: list[np.ndarray], grads: list[np.ndarray], state: AdamState):
    """Bias-corrected Adam on a list of arrays; returns new arrays and a new state."""
    if len(arrays) != len(grads) or len(arrays) != len(state.first_moment):
        raise ConfigError("parameter, gradient and moment lists differ in length")
    for a, g, m in zip(arrays, grads, state.first_moment):
        if a.shape != g.shape or a.shape != m.shape:
            raise ConfigError(f"shape mismatch in adam step: {a.shape} vs {g.shape} vs {m.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError("non-finite gradient; Adam update rejected")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    new_a, new_m, new_v = [], [], []
    for a, g, m, v in zip(arrays, grads, state.first_moment, state.second_moment):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        new_a.append(a - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_a, AdamState(new_m, new_v, t, state.lr, b1, b2, state.eps)


def adam_step(params: MlpParams, grads: MlpParams, state: AdamState) -> tuple[MlpParams, AdamState]:
    arrays, state = adam_update(params.arrays(), grads.arrays(), state)
    return MlpParams.from_arrays(arrays), state


def save_params(params: MlpParams, path) -> None:
    """Flat little-endian binary: magic, layer count, widths, then W/b per layer."""
    widths = params.spec.layer_widths
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<i", len(widths)))
        fh.write(struct.pack(f"<{len(widths)}i", *widths))
        for w, b in zip(params.weights, params.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_params(path) -> MlpParams:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ConfigError(f"{path}: not an MLP parameter file")
    (n,) = struct.unpack_from("<i", data, 8)
    widths = struct.unpack_from(f"<{n}i", data, 12)
    spec = MlpSpec(widths)
    off = 12 + 4 * n
    weights, biases = [], []
    for n_in, n_out in zip(widths[:-1], widths[1:]):
        w = np.frombuffer(data, dtype="<f8", count=n_in * n_out, offset=off).reshape(n_out, n_in)
        off += 8 * n_in * n_out
        b = np.frombuffer(data, dtype="<f8", count=n_out, offset=off)
        off += 8 * n_out
        weights.append(w.astype(float))
        biases.append(b.astype(float))
    if off != len(data):
        raise ConfigError(f"{path}: {len(data) - off} trailing bytes after {spec.layer_widths}")
    return MlpParams(weights, biases)
