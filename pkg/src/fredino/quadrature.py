"""Node sets and quadrature weights for the domains used in the experiments."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .errors import DimensionTooLarge, InvalidRange

SOBOL_MAX_DIM = 32
_SOBOL_BITS = 32


@dataclass
class Grid:
    """Quadrature nodes (``n x d``) with one weight per node.

    ``domain`` describes the region (box bounds or disk) and ``extra`` carries
    kind-specific per-node data such as polar coordinates or outward normals.
    """

    nodes: np.ndarray
    weights: np.ndarray
    kind: str
    domain: dict
    extra: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.nodes.shape[0]

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    def integrate(self, values) -> np.ndarray:
        """Quadrature of one or more sampled functions (columns)."""
        return self.weights @ np.asarray(values)

    def describe(self) -> dict:
        """JSON-friendly summary used in dataset manifests."""
        out = {"kind": self.kind, "n": self.n, "dim": self.dim, "domain": self.domain}
        for key in ("scramble_seed", "n_r", "n_phi"):
            if key in self.extra:
                out[key] = self.extra[key]
        return out


def uniform_grid(a: float, b: float, n: int) -> Grid:
    """Midpoint rule on ``[a, b]``."""
    if not a < b or n < 2:
        raise InvalidRange(f"need a < b and n >= 2, got ({a}, {b}, {n})")
    h = (b - a) / n
    nodes = a + (np.arange(n) + 0.5) * h
    return Grid(nodes.reshape(-1, 1), np.full(n, h), "uniform1d", {"lower": [a], "upper": [b]})


def sobol_integers(d: int, n: int) -> np.ndarray:
    """First ``n`` unscrambled Sobol points as 32-bit integers (``n x d``)."""
    sampler = qmc.Sobol(d, scramble=False, bits=_SOBOL_BITS)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # balance warning for n != 2^k
        pts = sampler.random(n)
    return np.rint(pts * 2.0 ** _SOBOL_BITS).astype(np.uint64)


def sobol_points(d: int, n: int, scramble_seed: int | None = None) -> Grid:
    """Sobol nodes in ``[0, 1]^d`` with equal weights ``1/n``.

    With a seed, every coordinate is XOR-ed with a random 32-bit digital shift,
    which keeps the (t, m, s)-net stratification of the unscrambled sequence.
    """
    if not 1 <= d <= SOBOL_MAX_DIM:
        raise DimensionTooLarge(f"Sobol dimension must be in [1, {SOBOL_MAX_DIM}], got {d}")
    if n < 1:
        raise InvalidRange("need at least one point")
    ints = sobol_integers(d, n)
    if scramble_seed is not None:
        rng = np.random.default_rng(scramble_seed)
        shift = rng.integers(0, 2 ** _SOBOL_BITS, size=d, dtype=np.uint64)
        ints = ints ^ shift
    nodes = ints.astype(np.float64) / 2.0 ** _SOBOL_BITS
    extra = {"scramble_seed": scramble_seed}
    return Grid(nodes, np.full(n, 1.0 / n), "sobol", {"lower": [0.0] * d, "upper": [1.0] * d}, extra)


def disk_polar_grid(n_r: int, n_phi: int) -> Grid:
    """Gauss-Legendre in ``r`` on (0, 1) times uniform angles on the unit disk.

    Nodes are ordered radius-major: index ``i * n_phi + k`` holds ``(r_i, phi_k)``.
    ``extra`` holds ``r``, ``phi`` and the radial/angular cell widths used for
    the singular self-cell correction.
    """
    if n_r < 2 or n_phi < 2:
        raise InvalidRange("need n_r, n_phi >= 2")
    t, w = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * (t + 1.0)
    wr = 0.5 * w
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    dphi = 2.0 * np.pi / n_phi
    R = np.repeat(r, n_phi)
    P = np.tile(phi, n_r)
    nodes = np.column_stack([R * np.cos(P), R * np.sin(P)])
    weights = np.repeat(wr * r * dphi, n_phi)
    extra = {
        "r": R,
        "phi": P,
        "cell_dr": np.repeat(wr, n_phi),
        "cell_arc": R * dphi,
        "n_r": n_r,
        "n_phi": n_phi,
    }
    return Grid(nodes, weights, "disk_polar", {"center": [0.0, 0.0], "radius": 1.0}, extra)


def circle_boundary_grid(n: int) -> Grid:
    """Equispaced periodic trapezoid rule on the unit circle."""
    if n < 4:
        raise InvalidRange("need at least 4 boundary nodes")
    theta = 2.0 * np.pi * np.arange(n) / n
    nodes = np.column_stack([np.cos(theta), np.sin(theta)])
    extra = {"theta": theta, "normals": nodes.copy()}
    return Grid(nodes, np.full(n, 2.0 * np.pi / n), "circle_boundary",
                {"center": [0.0, 0.0], "radius": 1.0}, extra)
