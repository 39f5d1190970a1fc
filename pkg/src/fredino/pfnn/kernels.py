"""Modified Bessel functions K0/K1, the smoothed K0 surrogate, and the potential model.

The potential of the shifted operator ``(Delta - lam)`` in 2-D is
``-(1/2pi) K0(sqrt(lam) |x - y|)``.  The trainable model replaces ``K0`` with a
smooth blend of its small- and large-argument forms and adds a learned
correction ``alpha * C(x, y)`` with ``alpha = sigmoid(alpha_raw)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..errors import CoincidentPoints, NonPositiveRadius, ShapeMismatch
from ..models import MlpModel, mlp_forward, mlp_forward_jvp, mlp_init, pair_inputs

EULER_GAMMA = 0.5772156649015329
SERIES_CUTOFF = 2.0
_SERIES_TERMS = 30
_TRAP_STEP = 0.05
SIGMOID_SLOPE = 5.0
SIGMOID_CENTER = 1.5
COINCIDENT_TOL = 1e-14


def _check_radius(r) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if np.any(~(r > 0.0)):
        raise NonPositiveRadius("radius must be strictly positive")
    return r


def _digamma_table(n: int) -> np.ndarray:
    # psi(k + 1) = -gamma + H_k
    return -EULER_GAMMA + np.concatenate([[0.0], np.cumsum(1.0 / np.arange(1, n))])


_PSI = _digamma_table(_SERIES_TERMS + 2)


def _series(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    t = 0.25 * z * z
    log_half = np.log(0.5 * z)
    i0 = np.zeros_like(z)
    i1 = np.zeros_like(z)
    s0 = np.zeros_like(z)
    s1 = np.zeros_like(z)
    term0 = np.ones_like(z)   # t^k / (k!)^2
    term1 = np.ones_like(z)   # t^k / (k! (k+1)!)
    for k in range(_SERIES_TERMS):
        i0 += term0
        i1 += term1
        s0 += _PSI[k] * term0
        s1 += (_PSI[k] + _PSI[k + 1]) * term1
        term0 = term0 * t / ((k + 1) ** 2)
        term1 = term1 * t / ((k + 1) * (k + 2))
        if term0.max(initial=0.0) < 1e-18:
            break
    k0 = -log_half * i0 + s0
    k1 = 1.0 / z + log_half * 0.5 * z * i1 - 0.25 * z * s1
    return k0, k1


def _integral(z: np.ndarray, order: int) -> np.ndarray:
    """Trapezoid rule on ``K_nu(z) = int_0^inf exp(-z cosh t) cosh(nu t) dt``, scaled by ``e^z``."""
    t_max = np.arccosh(1.0 + 40.0 / z.min())
    t = np.arange(0.0, t_max + _TRAP_STEP, _TRAP_STEP)
    w = np.full(t.shape, _TRAP_STEP)
    w[0] *= 0.5
    vals = np.exp(-np.outer(z, np.cosh(t) - 1.0)) * np.cosh(order * t)
    return vals @ w


def _bessel(r, order: int) -> np.ndarray:
    z = _check_radius(r)
    flat = z.ravel()
    out = np.empty_like(flat)
    small = flat <= SERIES_CUTOFF
    if small.any():
        out[small] = _series(flat[small])[order]
    big = ~small
    if big.any():
        zb = flat[big]
        out[big] = np.exp(-zb) * _integral(zb, order)
    return out.reshape(z.shape)


def k0_reference(r) -> np.ndarray:
    """Modified Bessel function of the second kind, order 0."""
    return _bessel(r, 0)


def k1_reference(r) -> np.ndarray:
    """Modified Bessel function of the second kind, order 1 (``K0' = -K1``)."""
    return _bessel(r, 1)


def _blend(r: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-SIGMOID_SLOPE * (r - SIGMOID_CENTER)))


def smoothed_k0(r) -> np.ndarray:
    """Sigmoid blend of ``-ln(r/2) - gamma`` and ``sqrt(pi/(2r)) e^-r``."""
    r = _check_radius(r)
    s = _blend(r)
    near = -np.log(0.5 * r) - EULER_GAMMA
    far = np.sqrt(np.pi / (2.0 * r)) * np.exp(-r)
    return (1.0 - s) * near + s * far


def smoothed_k0_derivative(r) -> np.ndarray:
    r = _check_radius(r)
    s = _blend(r)
    ds = SIGMOID_SLOPE * s * (1.0 - s)
    near = -np.log(0.5 * r) - EULER_GAMMA
    far = np.sqrt(np.pi / (2.0 * r)) * np.exp(-r)
    return (1.0 - s) * (-1.0 / r) + s * far * (-1.0 - 0.5 / r) + ds * (far - near)


# -- potential model -----------------------------------------------------------

BASES = ("smoothed", "exact")


@dataclass
class PhiModel:
    """``Phi_theta(x, y) = -(1/2pi) K(sqrt(lam) |x-y|) + sigmoid(alpha_raw) C(x, y)``.

    ``base`` selects the true ``K0`` or its smoothed surrogate; ``correction``
    may be ``None`` for the bare potential.
    """

    helmholtz_lambda: float = 1.0
    base: str = "smoothed"
    correction: MlpModel | None = None
    alpha_raw: np.ndarray | None = None

    def __post_init__(self):
        if self.base not in BASES:
            raise ValueError(f"base must be one of {BASES}")
        if self.helmholtz_lambda <= 0:
            raise ValueError("the shift lambda must be positive")
        if self.correction is not None:
            if self.correction.in_dim != 4 or self.correction.out_dim != 1:
                raise ShapeMismatch("correction network maps (x, y) in R^4 to R")
            if self.alpha_raw is None:
                self.alpha_raw = np.zeros((1, 1))

    @classmethod
    def create(cls, hidden=(64, 64), activation: str = "tanh", seed: int = 0, helmholtz_lambda: float = 1.0,
               alpha_raw: float = 0.0, base: str = "smoothed") -> "PhiModel":
        mlp = mlp_init([4, *hidden, 1], activation, seed)
        return cls(helmholtz_lambda, base, mlp, np.full((1, 1), float(alpha_raw)))

    @property
    def sqrt_lambda(self) -> float:
        return float(np.sqrt(self.helmholtz_lambda))

    @property
    def alpha(self) -> float:
        return 0.0 if self.correction is None else float(1.0 / (1.0 + np.exp(-self.alpha_raw[0, 0])))

    def parameters(self) -> list[np.ndarray]:
        if self.correction is None:
            return []
        return self.correction.parameters() + [self.alpha_raw]

    def tensors(self, tape: ad.Tape | None = None) -> list[Tensor]:
        if tape is None:
            return [Tensor(p, check=False) for p in self.parameters()]
        return [tape.watch(p) for p in self.parameters()]

    def copy(self) -> "PhiModel":
        if self.correction is None:
            return PhiModel(self.helmholtz_lambda, self.base)
        return PhiModel(self.helmholtz_lambda, self.base, self.correction.copy(), self.alpha_raw.copy())

    # base potential ----------------------------------------------------------

    def base_k(self, z):
        return k0_reference(z) if self.base == "exact" else smoothed_k0(z)

    def base_k_derivative(self, z):
        return -k1_reference(z) if self.base == "exact" else smoothed_k0_derivative(z)


def _distances(X, Y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64).reshape(-1, 2)
    Y = np.asarray(Y, dtype=np.float64).reshape(-1, 2)
    diff = Y[None, :, :] - X[:, None, :]
    return diff, np.sqrt((diff * diff).sum(axis=-1))


def _alpha_tensor(params: list[Tensor]) -> Tensor:
    return ad.sigmoid(params[-1])


def base_phi_matrix(model: PhiModel, X, Y, coincident: str = "raise") -> np.ndarray:
    """Base potential for all pairs; coincident pairs raise or are set to zero."""
    _, r = _distances(X, Y)
    hit = r <= COINCIDENT_TOL
    if hit.any() and coincident == "raise":
        raise CoincidentPoints("potential evaluated at coincident points")
    z = np.where(hit, 1.0, model.sqrt_lambda * r)
    out = -model.base_k(z) / (2.0 * np.pi)
    out[hit] = 0.0
    return out


def base_normal_derivative_matrix(model: PhiModel, X, Y, normals, coincident_value: float | None = None
                                  ) -> np.ndarray:
    """``grad_y Phi . n_y`` of the base potential for all pairs.

    On a smooth curve the coincident limit is ``curvature / (4 pi)``; callers on
    the unit circle pass ``1/(4 pi)``.  Without a value, coincident pairs raise.
    """
    diff, r = _distances(X, Y)
    hit = r <= COINCIDENT_TOL
    if hit.any() and coincident_value is None:
        raise CoincidentPoints("normal derivative evaluated at coincident points")
    n = np.asarray(normals, dtype=np.float64).reshape(-1, 2)
    proj = (diff * n[None, :, :]).sum(axis=-1)
    safe_r = np.where(hit, 1.0, r)
    sl = model.sqrt_lambda
    dk = model.base_k_derivative(sl * safe_r)
    out = -dk * sl * proj / safe_r / (2.0 * np.pi)
    out[hit] = coincident_value if coincident_value is not None else 0.0
    return out


def correction_matrix(model: PhiModel, X, Y, params: list[Tensor] | None = None) -> Tensor:
    """``alpha * C(x_i, y_j)`` as an ``m x n`` tensor."""
    if params is None:
        params = model.tensors()
    pairs = pair_inputs(np.asarray(X).reshape(-1, 2), np.asarray(Y).reshape(-1, 2))
    C = ad.reshape(mlp_forward(model.correction, pairs, params[:-1]), (len(X), len(Y)))
    return C * _alpha_tensor(params)


def correction_normal_matrix(model: PhiModel, X, Y, normals, params: list[Tensor] | None = None) -> Tensor:
    """``alpha * grad_y C(x_i, y_j) . n_j`` by forward-mode tangents through the network."""
    if params is None:
        params = model.tensors()
    X = np.asarray(X).reshape(-1, 2)
    Y = np.asarray(Y).reshape(-1, 2)
    n = np.asarray(normals, dtype=np.float64).reshape(-1, 2)
    pairs = pair_inputs(X, Y)
    tangent = np.concatenate([np.zeros((len(pairs), 2)), np.tile(n, (len(X), 1))], axis=1)
    _, dC = mlp_forward_jvp(model.correction, pairs, tangent, params[:-1])
    return ad.reshape(dC, (len(X), len(Y))) * _alpha_tensor(params)


def phi_matrix(model: PhiModel, X, Y, params: list[Tensor] | None = None, coincident: str = "raise") -> Tensor:
    base = Tensor(base_phi_matrix(model, X, Y, coincident), check=False)
    if model.correction is None:
        return base
    return base + correction_matrix(model, X, Y, params)


def phi_normal_matrix(model: PhiModel, X, Y, normals, params: list[Tensor] | None = None,
                      coincident_value: float | None = None) -> Tensor:
    base = Tensor(base_normal_derivative_matrix(model, X, Y, normals, coincident_value), check=False)
    if model.correction is None:
        return base
    return base + correction_normal_matrix(model, X, Y, normals, params)


def phi_eval(model: PhiModel, x, y) -> float:
    """``Phi_theta(x, y)`` for a single pair of distinct points."""
    return phi_matrix(model, np.reshape(x, (1, 2)), np.reshape(y, (1, 2))).item()


def phi_normal_derivative(model: PhiModel, x, y, n_y) -> float:
    """``grad_y Phi_theta(x, y) . n_y`` for a single pair of distinct points."""
    return phi_normal_matrix(model, np.reshape(x, (1, 2)), np.reshape(y, (1, 2)), np.reshape(n_y, (1, 2))).item()


def log_rectangle_integral(a, b) -> np.ndarray:
    """``int ln|p| dp`` over an ``a x b`` rectangle centred at the origin."""
    A = 0.5 * np.asarray(a, dtype=np.float64)
    B = 0.5 * np.asarray(b, dtype=np.float64)
    quarter = A * B * (np.log(A * A + B * B) - 3.0) + A * A * np.arctan(B / A) + B * B * np.arctan(A / B)
    # quarter = int_0^A int_0^B ln(x^2 + y^2); ln|p| is half of that, over four quadrants
    return 2.0 * quarter


def self_cell_integral(model: PhiModel, cell_dr, cell_arc) -> np.ndarray:
    """Integral of the small-argument potential over each node's own cell.

    Uses ``K0(z) ~ -ln(z/2) - gamma`` on a rectangle of the local radial and
    angular widths, which both the exact and smoothed bases share near 0.
    """
    area = np.asarray(cell_dr) * np.asarray(cell_arc)
    k_int = area * (-np.log(0.5 * model.sqrt_lambda) - EULER_GAMMA) - log_rectangle_integral(cell_dr, cell_arc)
    return -k_int / (2.0 * np.pi)
