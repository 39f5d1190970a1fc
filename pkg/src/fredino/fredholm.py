"""Forward Fredholm networks: assembled fixed-point layers, oracles and diagnostics.

A batch of input functions is a ``N x B`` matrix whose columns are sampled on
the ``N`` grid nodes; every pass below works column-wise on such batches.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from . import autodiff as ad
from .autodiff import Tensor
from .errors import (
    DivergedForward,
    InsufficientLayers,
    KappaOutOfRange,
    ShapeMismatch,
    SingularSystem,
    ZeroNorm,
)
from .quadrature import Grid

LINEAR_KM = "linear_km"
RECURRENT_PICARD = "recurrent_picard"
DIVERGENCE_FACTOR = 1e6
POWER_ITERATIONS = 200
# successive differences below this multiple of eps * |f| are rounding noise
ROUNDOFF_FACTOR = 1e3


@dataclass(frozen=True)
class FredholmNetConfig:
    depth: int
    kappa: float = 1.0
    mode: str = LINEAR_KM

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be a positive integer")
        if not 0.0 < self.kappa <= 1.0:
            raise KappaOutOfRange(f"kappa must lie in (0, 1], got {self.kappa}")
        if self.mode not in (LINEAR_KM, RECURRENT_PICARD):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == RECURRENT_PICARD and self.kappa != 1.0:
            raise KappaOutOfRange("the recurrent network uses plain Picard steps (kappa = 1)")


@dataclass
class AssembledOperator:
    """Hidden-layer weight matrix of the network on a fixed grid."""

    W: Tensor
    kappa: float
    grid: Grid
    mode: str

    @property
    def n(self) -> int:
        return self.W.shape[0]

    def integral_part(self) -> np.ndarray:
        """The kappa-free discrete operator ``K(z_i, z_j) dz_j``."""
        W = self.W.data
        if self.kappa == 1.0:
            return W
        return (W - (1.0 - self.kappa) * np.eye(self.n)) / self.kappa


@dataclass
class ForwardResult:
    values: Tensor
    layers: list[np.ndarray] | None = None


def assemble(kernel_values, grid: Grid, config: FredholmNetConfig) -> AssembledOperator:
    """Weights ``K dz kappa`` off the diagonal and ``K dz kappa + (1 - kappa)`` on it.

    Differentiable w.r.t. ``kernel_values`` when it lives on a tape.
    """
    K = ad.as_tensor(kernel_values)
    n = grid.n
    if K.shape != (n, n):
        raise ShapeMismatch(f"kernel matrix {K.shape} does not match a grid of {n} nodes")
    if config.mode == RECURRENT_PICARD:
        W = K * grid.weights.reshape(1, -1)
    else:
        kappa = config.kappa
        W = K * (kappa * grid.weights.reshape(1, -1))
        if kappa != 1.0:
            W = W + (1.0 - kappa) * np.eye(n)
    return AssembledOperator(W, config.kappa, grid, config.mode)


def _as_batch(g, n: int) -> Tensor:
    g = ad.as_tensor(g)
    if g.shape[0] != n:
        raise ShapeMismatch(f"input functions have {g.shape[0]} rows, grid has {n} nodes")
    return g


def _guard(f: Tensor, bound: float, layer: int) -> None:
    if np.abs(f.data).max(initial=0.0) > bound:
        raise DivergedForward(f"fixed-point pass diverged at layer {layer}; operator is not contractive")


def forward_linear(g_values, operator: AssembledOperator, config: FredholmNetConfig,
                   query_kernel=None, query_g=None, record: bool = False) -> ForwardResult:
    """``depth`` KM steps ``f <- W f + kappa g`` starting from ``f = kappa g``.

    With ``query_kernel`` (rows ``K(x_q, z_j)``) and ``query_g`` (``g(x_q)``)
    the output is read out at off-grid points by Nystrom interpolation of the
    final iterate, which for ``kappa = 1`` is exactly one more Picard layer.
    """
    g = _as_batch(g_values, operator.n)
    kg = g if config.kappa == 1.0 else config.kappa * g
    bound = DIVERGENCE_FACTOR * max(np.abs(g.data).max(initial=0.0), 1e-300)
    f = kg
    layers = [f.data] if record else None
    for k in range(1, config.depth + 1):
        f = ad.matmul(operator.W, f) + kg
        _guard(f, bound, k)
        if record:
            layers.append(f.data)
    if query_kernel is not None:
        Kq = ad.as_tensor(query_kernel)
        f = ad.matmul(Kq * operator.grid.weights.reshape(1, -1), f) + ad.as_tensor(query_g)
    return ForwardResult(f, layers)


def forward_recurrent(g_values, G: Callable[[Tensor], Tensor], operator: AssembledOperator,
                      config: FredholmNetConfig, record: bool = False) -> ForwardResult:
    """``depth`` Picard steps ``f <- W G(f) + g`` starting from ``f = g``."""
    if config.kappa != 1.0:
        raise KappaOutOfRange("recurrent pass requires kappa = 1")
    g = _as_batch(g_values, operator.n)
    bound = DIVERGENCE_FACTOR * max(np.abs(g.data).max(initial=0.0), 1e-300)
    f = g
    layers = [f.data] if record else None
    for k in range(1, config.depth + 1):
        f = ad.matmul(operator.W, G(f)) + g
        _guard(f, bound, k)
        if record:
            layers.append(f.data)
    return ForwardResult(f, layers)


def direct_solve_oracle(kernel_values, grid: Grid, g_values) -> np.ndarray:
    """Solve ``(I - K dz) f = g`` by LU with partial pivoting."""
    K = np.asarray(kernel_values.data if isinstance(kernel_values, Tensor) else kernel_values, dtype=float)
    n = grid.n
    if K.shape != (n, n):
        raise ShapeMismatch(f"kernel matrix {K.shape} does not match a grid of {n} nodes")
    A = np.eye(n) - K * grid.weights.reshape(1, -1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)  # reported below as SingularSystem
        lu, piv = scipy.linalg.lu_factor(A, check_finite=True)
    diag = np.abs(np.diag(lu))
    if diag.min() <= np.finfo(float).eps * max(diag.max(), 1.0) * n:
        raise SingularSystem("I - K dz is numerically singular")
    g = np.asarray(g_values.data if isinstance(g_values, Tensor) else g_values, dtype=float)
    return scipy.linalg.lu_solve((lu, piv), g)


def inf_norm(W: np.ndarray) -> float:
    """Maximum absolute row sum."""
    return float(np.abs(W).sum(axis=1).max())


def spectral_norm(W: np.ndarray, iterations: int = POWER_ITERATIONS, seed: int = 0) -> float:
    """Largest singular value by power iteration on ``W^T W``."""
    v = np.random.default_rng(seed).standard_normal(W.shape[1])
    v /= np.linalg.norm(v)
    sigma2 = 0.0
    for _ in range(iterations):
        w = W.T @ (W @ v)
        sigma2 = float(np.linalg.norm(w))
        if sigma2 == 0.0:
            return 0.0
        v = w / sigma2
    return float(np.sqrt(sigma2))


@dataclass
class ContractionReport:
    successive_sup: list[float]
    successive_l2: list[float]
    ratios: list[float | None]
    inf_norm_W: float
    spectral_norm_W: float
    contractive: bool = field(default=False)

    def ratios_from(self, k: int) -> list[float]:
        """Defined ratio estimates for layers ``>= k`` (layer numbering starts at 1)."""
        return [r for i, r in enumerate(self.ratios, start=2) if i >= k and r is not None]

    def to_rows(self) -> list[dict]:
        rows = []
        for k, (s, l2) in enumerate(zip(self.successive_sup, self.successive_l2), start=1):
            ratio = self.ratios[k - 2] if k >= 2 else None
            rows.append({"k": k, "rho_sup": s, "rho_l2": l2, "ratio": "" if ratio is None else ratio})
        return rows

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["k", "rho_sup", "rho_l2", "ratio"])
            writer.writeheader()
            for row in self.to_rows():
                writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def successive_norms(layers: list[np.ndarray], weights: np.ndarray) -> tuple[list[float], list[float]]:
    """Sup and weighted-L2 norms of consecutive layer differences (worst column)."""
    sup, l2 = [], []
    w = weights.reshape(-1, 1)
    for prev, cur in zip(layers[:-1], layers[1:]):
        diff = cur - prev
        sup.append(float(np.abs(diff).max(axis=0).max()))
        l2.append(float(np.sqrt((w * diff * diff).sum(axis=0)).max()))
    return sup, l2


def contraction_report(layers: list[np.ndarray], operator: AssembledOperator) -> ContractionReport:
    """Successive-layer norms and ratios plus norms of the kernel part of the operator.

    Ratios whose denominator is already at rounding level are left undefined.
    """
    if layers is None or len(layers) < 2:
        raise InsufficientLayers("need at least two recorded layers")
    sup, l2 = successive_norms(layers, operator.grid.weights)
    floor = ROUNDOFF_FACTOR * np.finfo(float).eps * max(np.abs(layers[-1]).max(initial=0.0), 1e-300)
    ratios = [b / a if a > floor else None for a, b in zip(sup[:-1], sup[1:])]
    Wt = operator.integral_part()
    report = ContractionReport(sup, l2, ratios, inf_norm(Wt), spectral_norm(Wt))
    late = report.ratios_from(3)
    report.contractive = (report.inf_norm_W < 1.0 or report.spectral_norm_W < 1.0) and all(r < 1.0 for r in late)
    return report


def discrete_operator(kernel_closure: Callable[[np.ndarray, np.ndarray], np.ndarray], grid: Grid) -> np.ndarray:
    return np.asarray(kernel_closure(grid.nodes, grid.nodes)) * grid.weights.reshape(1, -1)


def operator_norm(W: np.ndarray, norm_kind: str) -> float:
    if norm_kind == "inf_row_sum":
        return inf_norm(W)
    if norm_kind == "spectral":
        return spectral_norm(W)
    raise ValueError(f"unknown norm kind {norm_kind!r}")


def calibrate_scale(kernel_closure, grid: Grid, target_norm: float, norm_kind: str = "inf_row_sum") -> float:
    """Factor that rescales the discretized kernel to the requested operator norm."""
    if not 0.0 < target_norm < 1.0:
        raise ValueError("target norm must lie in (0, 1)")
    norm = operator_norm(discrete_operator(kernel_closure, grid), norm_kind)
    if norm == 0.0:
        raise ZeroNorm("kernel vanishes on the grid")
    return target_norm / norm
