"""Potential Fredholm network: boundary density solve, interior representation, Picard loop.

Unknowns are batched as columns.  On the boundary grid the density solves the
second-kind equation

    beta = 2 g - 2 V_b psi~(u) - 2 D beta

(``D`` the double-layer matrix, ``V_b`` the boundary-to-interior volume
matrix) with a damped fixed-point network.  Interior values come from the
regularized representation that subtracts ``beta(x*)`` at the boundary point
``x*`` sharing the node's angle.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import autodiff as ad
from .. import fredholm
from ..autodiff import Tensor
from ..errors import InvalidRange, NotConverged, ShapeMismatch
from ..fredholm import ContractionReport, FredholmNetConfig
from ..quadrature import Grid, circle_boundary_grid, disk_polar_grid
from .kernels import PhiModel, phi_matrix, phi_normal_matrix, self_cell_integral

CIRCLE_DOUBLE_LAYER_LIMIT = 1.0 / (4.0 * np.pi)

PsiFn = Callable[[Tensor, np.ndarray], Tensor]


def tanh_source(u: Tensor, X: np.ndarray) -> Tensor:
    """``tanh(u) - exp(1 - |x|^2) + 4``."""
    bump = (np.exp(1.0 - (X * X).sum(axis=1)) - 4.0).reshape(-1, 1)
    return ad.tanh(u) - bump


@dataclass
class PdeProblem:
    """``Delta u = psi(u, x)`` on the unit disk with Dirichlet data, shifted by ``lam``.

    ``psi`` maps an ``N x B`` tensor of interior values to source values;
    ``None`` means ``psi = lam * u``, i.e. a shifted source that vanishes.
    """

    boundary: Grid
    interior: Grid
    helmholtz_lambda: float = 1.0
    psi: PsiFn | None = tanh_source
    psi_name: str = "tanh_source"

    def __post_init__(self):
        n_phi = self.interior.extra.get("n_phi")
        if self.boundary.kind != "circle_boundary" or self.interior.kind != "disk_polar":
            raise ShapeMismatch("expected a circle boundary grid and a polar disk grid")
        if self.boundary.n % n_phi:
            raise InvalidRange("boundary node count must be a multiple of the angular node count")

    @classmethod
    def on_grids(cls, n_boundary: int, n_r: int, n_phi: int, **kwargs) -> "PdeProblem":
        return cls(circle_boundary_grid(n_boundary), disk_polar_grid(n_r, n_phi), **kwargs)

    @property
    def star_index(self) -> np.ndarray:
        """Boundary node at the angle of each interior node."""
        phi = self.interior.extra["phi"]
        nb = self.boundary.n
        return np.rint(phi / (2.0 * np.pi) * nb).astype(np.int64) % nb

    @property
    def shifted_source_vanishes(self) -> bool:
        return self.psi is None

    def psi_tilde(self, u: Tensor) -> Tensor | None:
        if self.psi is None:
            return None
        return self.psi(u, self.interior.nodes) - self.helmholtz_lambda * u

    def describe(self) -> dict:
        return {
            "helmholtz_lambda": self.helmholtz_lambda,
            "psi": self.psi_name if self.psi is not None else "shifted_zero",
            "boundary": self.boundary.describe(),
            "interior": self.interior.describe(),
        }


@dataclass
class PfnnOperators:
    """Quadrature matrices of the representation for one potential model (tensors)."""

    double_layer: Tensor      # nb x nb, grad_y Phi . n_y at boundary pairs (unweighted)
    volume_boundary: Tensor   # nb x ni, Phi(x_b, y) w_y
    regularized: Tensor       # ni x nb, (dPhi(x, y) - dPhi(x*, y)) w_y
    regularized_rowsum: Tensor
    star_coefficient: Tensor  # ni x 1, 1/2 + lam sum_y (Phi(x, y) - Phi(x*, y)) w_y
    volume_interior: Tensor   # ni x ni, Phi(x, y) w_y with the self-cell integral on the diagonal
    star_double_layer: Tensor # ni x nb, dPhi(x*, y) w_y
    star: np.ndarray


def build_operators(model: PhiModel, problem: PdeProblem, params: list[Tensor] | None = None) -> PfnnOperators:
    if params is None:
        params = model.tensors()
    bd, it = problem.boundary, problem.interior
    Yb, Xi = bd.nodes, it.nodes
    normals = bd.extra["normals"]
    wb = bd.weights.reshape(1, -1)
    wi = it.weights.reshape(1, -1)
    star = problem.star_index

    Dbb = phi_normal_matrix(model, Yb, Yb, normals, params, coincident_value=CIRCLE_DOUBLE_LAYER_LIMIT)
    Dib = phi_normal_matrix(model, Xi, Yb, normals, params)
    Dstar = ad.take_rows(Dbb, star)
    A = (Dib - Dstar) * wb

    Vii = phi_matrix(model, Xi, Xi, params, coincident="zero")
    diag = np.diag_indices(it.n)
    cell = np.zeros((it.n, it.n))
    cell[diag] = self_cell_integral(model, it.extra["cell_dr"], it.extra["cell_arc"]) / it.weights
    Vii = Vii + cell
    Vstar = phi_matrix(model, Yb[star], Xi, params)
    Vbi = phi_matrix(model, Yb, Xi, params)
    coeff = 0.5 + problem.helmholtz_lambda * ad.sum((Vii - Vstar) * wi, axis=1)
    return PfnnOperators(
        double_layer=Dbb,
        volume_boundary=Vbi * wi,
        regularized=A,
        regularized_rowsum=ad.sum(A, axis=1),
        star_coefficient=coeff,
        volume_interior=Vii * wi,
        star_double_layer=Dstar * wb,
        star=star,
    )


@dataclass
class BieResult:
    beta: Tensor
    u: Tensor
    layers: list[np.ndarray] | None = None
    operator: fredholm.AssembledOperator | None = None


def bie_forward(ops: PfnnOperators, problem: PdeProblem, g_boundary, u_current, net_config: FredholmNetConfig,
                record: bool = False) -> BieResult:
    """Boundary density by the damped fixed-point network, then interior values."""
    g = ad.as_tensor(g_boundary)
    if g.shape[0] != problem.boundary.n:
        raise ShapeMismatch(f"boundary data has {g.shape[0]} rows, grid has {problem.boundary.n}")
    psi_t = problem.psi_tilde(ad.as_tensor(u_current)) if u_current is not None else None
    rhs = 2.0 * g
    if psi_t is not None:
        rhs = rhs - 2.0 * ad.matmul(ops.volume_boundary, psi_t)
    op = fredholm.assemble(-2.0 * ops.double_layer, problem.boundary, net_config)
    res = fredholm.forward_linear(rhs, op, net_config, record=record)
    beta = res.values
    beta_star = ad.take_rows(beta, ops.star)
    u = (ad.matmul(ops.regularized, beta) - ops.regularized_rowsum * beta_star
         + ops.star_coefficient * beta_star + ad.matmul(ops.star_double_layer, beta))
    if psi_t is not None:
        u = u + ad.matmul(ops.volume_interior, psi_t)
    return BieResult(beta, u, res.layers, op)


@dataclass
class PicardResult:
    u: Tensor
    beta: Tensor
    iterations: int
    converged: bool
    successive_sup: list[float] = field(default_factory=list)
    bie_report: ContractionReport | None = None

    @property
    def ratios(self) -> list[float]:
        s = self.successive_sup
        return [b / a for a, b in zip(s[:-1], s[1:]) if a > 0.0]


def picard_forward(ops: PfnnOperators, problem: PdeProblem, g_boundary, net_config: FredholmNetConfig,
                   outer_iters: int, u0=None) -> tuple[Tensor, Tensor]:
    """Fixed number of outer iterations (differentiable; used in training)."""
    if outer_iters < 1:
        raise InvalidRange("need at least one outer iteration")
    g = ad.as_tensor(g_boundary)
    u = Tensor(np.zeros((problem.interior.n, g.shape[1]))) if u0 is None else ad.as_tensor(u0)
    beta = None
    for _ in range(outer_iters):
        res = bie_forward(ops, problem, g, u, net_config)
        u, beta = res.u, res.beta
        if problem.shifted_source_vanishes:
            break
    return u, beta


def picard_pde_solve(model: PhiModel, problem: PdeProblem, g_boundary, net_config: FredholmNetConfig,
                     outer_iters: int = 50, tol: float = 1e-10, ops: PfnnOperators | None = None,
                     raise_on_cap: bool = True) -> PicardResult:
    """Outer Picard iteration ``u <- P(g, u)`` from ``u = 0`` until the sup-norm update is below ``tol``."""
    if outer_iters < 1:
        raise InvalidRange("need at least one outer iteration")
    if ops is None:
        ops = build_operators(model, problem)
    g = np.asarray(g_boundary, dtype=np.float64).reshape(problem.boundary.n, -1)
    u = np.zeros((problem.interior.n, g.shape[1]))
    successive = []
    res = None
    converged = False
    for k in range(1, outer_iters + 1):
        res = bie_forward(ops, problem, g, u, net_config, record=True)
        step = float(np.abs(res.u.data - u).max())
        successive.append(step)
        u = res.u.data
        if problem.shifted_source_vanishes or step <= tol:
            converged = True
            break
    report = fredholm.contraction_report(res.layers, res.operator) if len(res.layers) >= 2 else None
    result = PicardResult(Tensor(u), res.beta, k, converged, successive, report)
    if not converged and raise_on_cap:
        raise NotConverged(f"outer Picard iteration did not reach tol {tol:g} in {outer_iters} steps",
                           last_iterate=result.u.data, report=report)
    return result
