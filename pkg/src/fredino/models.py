"""MLP surrogates for kernels, nonlinearities and PDE corrections."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import FormatVersionMismatch, InvalidWidths, ShapeMismatch

ACTIVATIONS = ("tanh", "relu", "silu")
MODEL_MAGIC = b"FRDNMLP\x00"
MODEL_FORMAT_VERSION = 1


@dataclass
class MlpModel:
    """Feedforward network ``x -> W_L(...act(x W_1 + b_1)...) + b_L``.

    Weights are stored ``fan_in x fan_out`` so a batch of row inputs is
    multiplied on the right; biases are ``1 x fan_out`` rows.
    """

    widths: list[int]
    activation: str
    init_seed: int
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.widths) - 1 or len(self.biases) != len(self.weights):
            raise InvalidWidths("number of layers does not match widths")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.widths[k], self.widths[k + 1]) or b.shape != (1, self.widths[k + 1]):
                raise InvalidWidths(f"layer {k} has shapes {w.shape}, {b.shape}")

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def parameters(self) -> list[np.ndarray]:
        """Parameter arrays in ``[W0, b0, W1, b1, ...]`` order (live references)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def n_params(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def copy(self) -> "MlpModel":
        return MlpModel(list(self.widths), self.activation, self.init_seed,
                        [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def tensors(self, tape: ad.Tape | None = None) -> list[Tensor]:
        """Parameter tensors, watched on ``tape`` when given."""
        if tape is None:
            return [Tensor(p, check=False) for p in self.parameters()]
        return [tape.watch(p) for p in self.parameters()]


def mlp_init(widths, activation: str = "tanh", seed: int = 0, first_layer_scale: float | None = None,
             last_layer_gain: float = 1.0) -> MlpModel:
    """Glorot-uniform weights, zero biases; reproducible from ``seed``.

    ``first_layer_scale`` replaces the first layer (weights and biases) by
    ``U(-s, s)`` draws, which spreads the initial ridge frequencies of a tanh
    network; ``last_layer_gain`` shrinks the output layer so the initial
    surrogate stays small.
    """
    widths = [int(w) for w in widths]
    if len(widths) < 2 or any(w <= 0 for w in widths):
        raise InvalidWidths(f"invalid widths {widths}")
    if activation not in ACTIVATIONS:
        raise ValueError(f"activation must be one of {ACTIVATIONS}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros((1, fan_out)))
    if first_layer_scale:
        weights[0] = rng.uniform(-first_layer_scale, first_layer_scale, size=weights[0].shape)
        biases[0] = rng.uniform(-first_layer_scale, first_layer_scale, size=biases[0].shape)
    weights[-1] *= last_layer_gain
    return MlpModel(widths, activation, int(seed), weights, biases)


def _activate(name: str, z: Tensor) -> Tensor:
    return ad.POINTWISE[name](z)


def _activation_slope(name: str, z: Tensor, h: Tensor) -> Tensor:
    # d act / dz written with tape ops so that it is itself differentiable
    if name == "tanh":
        return 1.0 - ad.square(h)
    if name == "relu":
        return Tensor((z.data > 0.0).astype(np.float64), check=False)
    s = ad.sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


def mlp_forward(model: MlpModel, inputs, params: list[Tensor] | None = None) -> Tensor:
    """Evaluate on a batch of rows; the final layer is linear."""
    x = ad.as_tensor(inputs)
    if x.shape[1] != model.in_dim:
        raise ShapeMismatch(f"model expects {model.in_dim} input columns, got {x.shape[1]}")
    if params is None:
        params = model.tensors()
    n_layers = len(model.weights)
    for k in range(n_layers):
        x = ad.matmul(x, params[2 * k]) + params[2 * k + 1]
        if k < n_layers - 1:
            x = _activate(model.activation, x)
    return x


def mlp_forward_jvp(model: MlpModel, inputs, tangents, params: list[Tensor] | None = None
                    ) -> tuple[Tensor, Tensor]:
    """Forward value and directional derivative ``J(x) . dx`` for each row.

    The tangent is pushed through the network with ordinary tape operations,
    so the returned derivative can be differentiated w.r.t. the parameters.
    """
    x = ad.as_tensor(inputs)
    dx = ad.as_tensor(tangents)
    if x.shape != dx.shape or x.shape[1] != model.in_dim:
        raise ShapeMismatch(f"inputs {x.shape} / tangents {dx.shape} do not fit the model")
    if params is None:
        params = model.tensors()
    n_layers = len(model.weights)
    for k in range(n_layers):
        w, b = params[2 * k], params[2 * k + 1]
        z = ad.matmul(x, w) + b
        dz = ad.matmul(dx, w)
        if k < n_layers - 1:
            x = _activate(model.activation, z)
            dx = _activation_slope(model.activation, z, x) * dz
        else:
            x, dx = z, dz
    return x, dx


def pair_inputs(X: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Rows ``(x_i, z_j)`` in row-major ``(i, j)`` order."""
    X = np.asarray(X, dtype=np.float64).reshape(len(X), -1)
    Z = np.asarray(Z, dtype=np.float64).reshape(len(Z), -1)
    m, n = len(X), len(Z)
    return np.concatenate([np.repeat(X, n, axis=0), np.tile(Z, (m, 1))], axis=1)


@dataclass
class KernelSurrogate:
    """``K_theta(x, z)`` on ``D x D`` with ``D`` of dimension ``dim``."""

    mlp: MlpModel
    dim: int = field(default=0)

    def __post_init__(self):
        if self.dim == 0:
            self.dim = self.mlp.in_dim // 2
        if self.mlp.in_dim != 2 * self.dim or self.mlp.out_dim != 1:
            raise InvalidWidths("kernel surrogate needs input width 2*dim and output width 1")

    @classmethod
    def create(cls, dim: int, hidden, activation: str = "tanh", seed: int = 0) -> "KernelSurrogate":
        return cls(mlp_init([2 * dim, *hidden, 1], activation, seed), dim)

    def eval_grid(self, X, Z, params: list[Tensor] | None = None) -> Tensor:
        return kernel_eval_grid(self, X, Z, params)


def kernel_eval_grid(kernel: KernelSurrogate, X, Z, params: list[Tensor] | None = None) -> Tensor:
    """``m x n`` matrix of ``K(x_i, z_j)`` from one batched forward pass."""
    X = np.asarray(X, dtype=np.float64).reshape(len(X), -1)
    Z = np.asarray(Z, dtype=np.float64).reshape(len(Z), -1)
    if X.shape[1] != kernel.dim or Z.shape[1] != kernel.dim:
        raise ShapeMismatch(f"kernel of dimension {kernel.dim} got nodes {X.shape}, {Z.shape}")
    out = mlp_forward(kernel.mlp, pair_inputs(X, Z), params)
    return ad.reshape(out, (len(X), len(Z)))


@dataclass
class NonlinearitySurrogate:
    """Pointwise ``G_theta: R -> R`` applied entrywise to any matrix."""

    mlp: MlpModel

    def __post_init__(self):
        if self.mlp.in_dim != 1 or self.mlp.out_dim != 1:
            raise InvalidWidths("nonlinearity surrogate maps R -> R")

    @classmethod
    def create(cls, hidden, activation: str = "tanh", seed: int = 0) -> "NonlinearitySurrogate":
        return cls(mlp_init([1, *hidden, 1], activation, seed))

    def __call__(self, u, params: list[Tensor] | None = None) -> Tensor:
        u = ad.as_tensor(u)
        flat = ad.reshape(u, (u.shape[0] * u.shape[1], 1))
        return ad.reshape(mlp_forward(self.mlp, flat, params), u.shape)


# -- serialization ---------------------------------------------------------

def save_model(path, model: MlpModel, meta: dict | None = None) -> None:
    """Magic bytes, a length-prefixed JSON header, then little-endian float64 parameters."""
    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "widths": model.widths,
        "activation": model.activation,
        "init_seed": model.init_seed,
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    params = np.concatenate([p.ravel() for p in model.parameters()]).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(params.tobytes())


def load_model(path) -> tuple[MlpModel, dict]:
    """Inverse of :func:`save_model`; returns the model and its ``meta`` dict."""
    raw = Path(path).read_bytes()
    if raw[:len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise FormatVersionMismatch(f"{path}: not a model file (bad magic bytes)")
    pos = len(MODEL_MAGIC)
    (n,) = struct.unpack("<I", raw[pos:pos + 4])
    pos += 4
    header = json.loads(raw[pos:pos + n].decode("utf-8"))
    pos += n
    if header.get("format_version") != MODEL_FORMAT_VERSION:
        raise FormatVersionMismatch(f"{path}: unsupported format version {header.get('format_version')}")
    widths = header["widths"]
    flat = np.frombuffer(raw[pos:], dtype="<f8").astype(np.float64)
    expected = sum(a * b + b for a, b in zip(widths[:-1], widths[1:]))
    if flat.size != expected:
        raise FormatVersionMismatch(f"{path}: expected {expected} parameters, found {flat.size}")
    weights, biases, k = [], [], 0
    for a, b in zip(widths[:-1], widths[1:]):
        weights.append(flat[k:k + a * b].reshape(a, b).copy())
        k += a * b
        biases.append(flat[k:k + b].reshape(1, b).copy())
        k += b
    return MlpModel(widths, header["activation"], header["init_seed"], weights, biases), header["meta"]
