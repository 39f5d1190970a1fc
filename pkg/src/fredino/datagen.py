"""Synthetic input functions, ground-truth kernels and (g, f) training pairs."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import fredholm
from .errors import DegenerateConstantInput, FormatVersionMismatch, ShapeMismatch, UnknownKind
from .quadrature import Grid

N_GAUSS = 200
N_SINES = 10
DATASET_FORMAT_VERSION = 1

G_PEAKS = {"a": (0.25, 0.25), "m": (0.40, -0.40), "s": (0.25, 0.15)}


def sample_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """Independent generator per (seed, sample index, stream)."""
    return np.random.default_rng([int(seed), int(index), int(stream)])


@dataclass
class GFunctionParams:
    """Parameters of a Gaussian-mixture + cubic + sinusoid input function in ``d`` dimensions."""

    w: np.ndarray      # (n_gauss, d)
    s: np.ndarray      # (n_gauss, d)
    c: np.ndarray      # (n_gauss, d)
    a: np.ndarray      # (4, d): a0..a3 per coordinate
    amp: np.ndarray    # (n_sines, d)
    freq: np.ndarray   # (n_sines, d)
    phase: np.ndarray  # (n_sines, d)
    seed: tuple = ()

    @classmethod
    def draw(cls, rng: np.random.Generator, d: int, n_gauss: int = N_GAUSS, n_sines: int = N_SINES,
             seed: tuple = ()) -> "GFunctionParams":
        return cls(
            w=rng.uniform(-1.0, 1.0, (n_gauss, d)),
            s=rng.uniform(0.0, 50.0, (n_gauss, d)),
            c=rng.uniform(0.0, 1.0, (n_gauss, d)),
            a=rng.uniform(-1.0, 1.0, (4, d)),
            amp=rng.uniform(-0.5, 0.5, (n_sines, d)),
            freq=rng.uniform(0.5, 8.0, (n_sines, d)),
            phase=rng.uniform(0.0, 2.0 * np.pi, (n_sines, d)),
            seed=seed,
        )

    @property
    def dim(self) -> int:
        return self.w.shape[1]


def sample_g(params: GFunctionParams, nodes) -> np.ndarray:
    """Evaluate the input function at ``nodes`` (``n x d``).

    Gaussian bumps are anisotropic, ``exp(-sum_k s_k (x_k - c_k)^2)``, with the
    amplitude taken as the mean of the per-coordinate ``w``; the cubic and
    sinusoid parts act per coordinate and are summed.
    """
    x = np.asarray(nodes, dtype=np.float64).reshape(len(nodes), -1)
    if x.shape[1] != params.dim:
        raise ShapeMismatch(f"parameters are {params.dim}-dimensional, nodes are {x.shape[1]}-dimensional")
    expo = np.zeros((x.shape[0], params.w.shape[0]))
    for k in range(params.dim):
        expo += params.s[:, k] * (x[:, k:k + 1] - params.c[:, k]) ** 2
    out = np.exp(-expo) @ params.w.mean(axis=1)
    a0, a1, a2, a3 = params.a
    out += (a0 + x * (a1 + x * (a2 + x * a3))).sum(axis=1)
    for k in range(params.dim):
        arg = 2.0 * np.pi * params.freq[:, k] * x[:, k:k + 1] + params.phase[:, k]
        out += np.sin(arg) @ params.amp[:, k]
    return out


def center_normalize(g_values, weights) -> np.ndarray:
    """Remove the weighted mean and scale to unit weighted L2 norm."""
    g = np.asarray(g_values, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    centred = g - (w @ g) / w.sum()
    norm = np.sqrt(w @ (centred * centred))
    if norm <= 1e-13 * max(1.0, np.abs(g).max()):
        raise DegenerateConstantInput("input function is constant on the grid")
    return centred / norm


def affine_scale(g_prime, seed: int, index: int = 0) -> tuple[np.ndarray, float, float]:
    """``alpha * g' + beta`` with ``alpha, beta ~ U(-1, 1)`` drawn from the sample stream."""
    rng = sample_rng(seed, index, stream=1)
    alpha, beta = rng.uniform(-1.0, 1.0, 2)
    return alpha * np.asarray(g_prime) + beta, float(alpha), float(beta)


def boundary_scale(g_prime, seed: int, index: int = 0, low: float = 0.05, high: float = 2.0
                   ) -> tuple[np.ndarray, float]:
    """Zero-mean input rescaled to ``||g||_inf = a`` with ``log a ~ U(log low, log high)``."""
    rng = sample_rng(seed, index, stream=1)
    amp = float(np.exp(rng.uniform(np.log(low), np.log(high))))
    g = np.asarray(g_prime)
    return amp * g / np.abs(g).max(), amp


# -- ground-truth kernels ---------------------------------------------------

KERNEL_KINDS = ("ex1_cosines", "hd_gauss_cosine", "gauss_rbf", "constant")


@dataclass
class TrueKernelSpec:
    kind: str
    dim: int = 1
    scale: float = 1.0
    gamma: float = 0.5
    length: float = 0.2
    omega_seed: int = 0
    calibration: tuple | None = None  # (target_norm, norm_kind)

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise UnknownKind(f"unknown kernel kind {self.kind!r}")

    @property
    def alphas(self) -> np.ndarray:
        return np.linspace(1.5, 3.5, self.dim)

    @property
    def omega(self) -> np.ndarray:
        v = np.random.default_rng(self.omega_seed).standard_normal(self.dim)
        return v / np.linalg.norm(v) * 6.0 / np.sqrt(self.dim)

    def matrix(self, X, Z) -> np.ndarray:
        return true_kernel_matrix(self, X, Z)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["calibration"] = list(self.calibration) if self.calibration else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrueKernelSpec":
        d = dict(d)
        if d.get("calibration"):
            d["calibration"] = tuple(d["calibration"])
        return cls(**d)


def true_kernel_matrix(spec: TrueKernelSpec, X, Z) -> np.ndarray:
    """``K(x_i, z_j)`` for all pairs, accumulated one coordinate at a time."""
    X = np.asarray(X, dtype=np.float64).reshape(len(X), -1)
    Z = np.asarray(Z, dtype=np.float64).reshape(len(Z), -1)
    if X.shape[1] != spec.dim or Z.shape[1] != spec.dim:
        raise ShapeMismatch(f"kernel is {spec.dim}-dimensional, got nodes {X.shape}, {Z.shape}")
    if spec.kind == "constant":
        return np.full((len(X), len(Z)), spec.scale)
    if spec.kind == "ex1_cosines":
        diff = X[:, :1] - Z[:, 0]
        return spec.scale * (np.cos(25.0 * diff) + np.cos(7.0 * diff))
    if spec.kind == "gauss_rbf":
        sq = np.zeros((len(X), len(Z)))
        for k in range(spec.dim):
            sq += (X[:, k:k + 1] - Z[:, k]) ** 2
        return spec.scale * np.exp(-sq / (2.0 * spec.length ** 2))
    if spec.kind == "hd_gauss_cosine":
        expo = np.zeros((len(X), len(Z)))
        phase = np.zeros((len(X), len(Z)))
        for k, (alpha, om) in enumerate(zip(spec.alphas, spec.omega)):
            diff = X[:, k:k + 1] - Z[:, k]
            expo += alpha * diff * diff
            phase += om * diff
        return spec.scale * np.exp(-expo) * (1.0 + spec.gamma * np.cos(phase))
    raise UnknownKind(spec.kind)


def true_kernel_eval(spec: TrueKernelSpec, x, z) -> float:
    return float(true_kernel_matrix(spec, np.reshape(x, (1, -1)), np.reshape(z, (1, -1)))[0, 0])


def calibrate_kernel(spec: TrueKernelSpec, grid: Grid) -> TrueKernelSpec:
    """Copy of ``spec`` whose scale puts the discretized operator at the target norm."""
    if spec.calibration is None:
        return spec
    target, norm_kind = spec.calibration
    unit = replace(spec, scale=1.0)
    lam = fredholm.calibrate_scale(unit.matrix, grid, target, norm_kind)
    return replace(spec, scale=lam)


def true_G_eval(u, squared: bool = True, a=G_PEAKS["a"], m=G_PEAKS["m"], s=G_PEAKS["s"]):
    """Two-peak Gaussian nonlinearity.

    ``squared=False`` evaluates the exponent without squaring the standardized
    argument, for comparison only (it is not a bump).
    """
    u = np.asarray(u, dtype=np.float64)
    out = np.zeros_like(u)
    for ai, mi, si in zip(a, m, s):
        z = (u - mi) / si
        out = out + ai * np.exp(-0.5 * (z * z if squared else z))
    return out


def true_G_tensor(u):
    """Tape-compatible version of :func:`true_G_eval` (squared form)."""
    from . import autodiff as ad

    u = ad.as_tensor(u)
    out = None
    for ai, mi, si in zip(G_PEAKS["a"], G_PEAKS["m"], G_PEAKS["s"]):
        term = ai * ad.exp(-0.5 * ad.square((u - mi) / si))
        out = term if out is None else out + term
    return out


# -- datasets ----------------------------------------------------------------

@dataclass
class FunctionPairDataset:
    """Rows are samples: ``g`` and ``f`` are ``M x N`` over the grid nodes."""

    grid: Grid
    g: np.ndarray
    f: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.g.shape != self.f.shape or self.g.shape[1] != self.grid.n:
            raise ShapeMismatch(f"g {self.g.shape}, f {self.f.shape} vs grid of {self.grid.n} nodes")

    @property
    def n_samples(self) -> int:
        return self.g.shape[0]


@dataclass
class DatasetConfig:
    grid: Grid
    kernel: TrueKernelSpec
    n_samples: int
    seed: int
    transform: str = "center_normalize"   # none | center_normalize | affine | boundary_scale
    nonlinear: bool = False
    first_index: int = 0
    solver_depth: int = 60
    residual_tol: float = 1e-12
    max_iterations: int = 20000
    n_gauss: int = N_GAUSS
    n_sines: int = N_SINES


TRANSFORMS = ("none", "center_normalize", "affine", "boundary_scale")


def make_inputs(grid: Grid, n_samples: int, seed: int, transform: str, first_index: int = 0,
                n_gauss: int = N_GAUSS, n_sines: int = N_SINES) -> tuple[np.ndarray, list]:
    """Sampled and transformed input functions (``M x N``) plus a per-sample transform log."""
    if transform not in TRANSFORMS:
        raise UnknownKind(f"unknown transform {transform!r}")
    rows, log = [], []
    for i in range(first_index, first_index + n_samples):
        params = GFunctionParams.draw(sample_rng(seed, i), grid.dim, n_gauss, n_sines, seed=(seed, i))
        g = sample_g(params, grid.nodes)
        entry = {"index": i}
        if transform in ("center_normalize", "affine"):
            g = center_normalize(g, grid.weights)
        if transform == "affine":
            g, alpha, beta = affine_scale(g, seed, i)
            entry.update(alpha=alpha, beta=beta)
        if transform == "boundary_scale":
            g = g - (grid.weights @ g) / grid.weights.sum()
            g, amp = boundary_scale(g, seed, i)
            entry.update(amplitude=amp)
        rows.append(g)
        log.append(entry)
    return np.array(rows), log


def solve_nonlinear(W: np.ndarray, g: np.ndarray, tol: float = 1e-12, max_iterations: int = 20000,
                    G=true_G_eval) -> np.ndarray:
    """Picard iteration ``f <- g + W G(f)`` to a residual below ``tol`` (columns of ``g``)."""
    f = g.copy()
    for _ in range(max_iterations):
        f_new = g + W @ G(f)
        if np.abs(f_new - f).max() <= tol:
            f = f_new
            break
        f = f_new
    else:
        raise fredholm.DivergedForward("nonlinear data generation did not converge")
    residual = np.abs(f - g - W @ G(f)).max()
    if residual > 1e-9:
        raise fredholm.DivergedForward(f"nonlinear data generation residual {residual:.2e}")
    return f


def generate_dataset(config: DatasetConfig) -> FunctionPairDataset:
    """Input functions from the configured family and their exact solutions on the grid."""
    grid = config.grid
    g, log = make_inputs(grid, config.n_samples, config.seed, config.transform, config.first_index,
                         config.n_gauss, config.n_sines)
    K = config.kernel.matrix(grid.nodes, grid.nodes)
    if config.nonlinear:
        W = K * grid.weights.reshape(1, -1)
        f = solve_nonlinear(W, g.T, config.residual_tol, config.max_iterations).T
        solver = "picard_to_tolerance"
    else:
        f = fredholm.direct_solve_oracle(K, grid, g.T).T
        solver = "direct_lu"
    provenance = {
        "seed": config.seed,
        "first_index": config.first_index,
        "n_samples": config.n_samples,
        "kernel": config.kernel.to_dict(),
        "nonlinearity": "two_peak_gaussian" if config.nonlinear else None,
        "transform": config.transform,
        "transform_log": log,
        "solver": solver,
        "grid": grid.describe(),
        "n_gauss": config.n_gauss,
        "n_sines": config.n_sines,
    }
    return FunctionPairDataset(grid, g, f, provenance)


# -- file format -------------------------------------------------------------

def save_arrays(directory, arrays: dict[str, np.ndarray], manifest: dict) -> None:
    """JSON manifest plus one little-endian float64 row-major blob per array."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        (directory / f"{name}.f64").write_bytes(arr.tobytes())
        entries[name] = {"file": f"{name}.f64", "shape": list(arr.shape), "dtype": "<f8"}
    body = dict(manifest)
    body["format_version"] = DATASET_FORMAT_VERSION
    body["arrays"] = entries
    (directory / "manifest.json").write_text(json.dumps(body, sort_keys=True, indent=2) + "\n")


def load_arrays(directory) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("format_version") != DATASET_FORMAT_VERSION:
        raise FormatVersionMismatch(f"{directory}: unsupported dataset version {manifest.get('format_version')}")
    arrays = {}
    for name, entry in manifest["arrays"].items():
        raw = np.frombuffer((directory / entry["file"]).read_bytes(), dtype=entry["dtype"])
        arrays[name] = raw.astype(np.float64).reshape(entry["shape"])
    return arrays, manifest


def save_dataset(directory, dataset: FunctionPairDataset) -> None:
    grid = dataset.grid
    arrays = {"nodes": grid.nodes, "weights": grid.weights, "g": dataset.g, "f": dataset.f}
    save_arrays(directory, arrays, {"kind": "function_pairs", "grid": grid.describe(),
                                    "provenance": dataset.provenance})


def load_dataset(directory) -> FunctionPairDataset:
    arrays, manifest = load_arrays(directory)
    info = manifest["grid"]
    grid = Grid(arrays["nodes"], arrays["weights"], info["kind"], info["domain"],
                {k: info[k] for k in ("scramble_seed", "n_r", "n_phi") if k in info})
    return FunctionPairDataset(grid, arrays["g"], arrays["f"], manifest["provenance"])
