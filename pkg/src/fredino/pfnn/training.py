"""Datasets, training and the two evaluation protocols for the potential network."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .. import autodiff as ad
from .. import datagen, metrics
from ..autodiff import Tensor
from ..errors import DivergedForward, NonFiniteValue, ShapeMismatch
from ..fredholm import ContractionReport, FredholmNetConfig
from ..quadrature import Grid
from ..training import AdamState, TrainingConfig, adam_step, lr_at
from .kernels import PhiModel, phi_matrix
from .solver import PdeProblem, bie_forward, build_operators, picard_forward, picard_pde_solve

DEFAULT_BIE_DEPTH = 40
DEFAULT_BIE_KAPPA = 0.5


@dataclass
class PfnnDataset:
    """Boundary data (``M x nb``) and interior solutions (``M x ni``) on a fixed problem."""

    problem: PdeProblem
    g: np.ndarray
    u: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.g.shape[1] != self.problem.boundary.n or self.u.shape[1] != self.problem.interior.n:
            raise ShapeMismatch("dataset rows do not match the problem grids")
        if self.g.shape[0] != self.u.shape[0]:
            raise ShapeMismatch("boundary and interior sample counts differ")

    @property
    def n_samples(self) -> int:
        return self.g.shape[0]


def boundary_inputs(boundary: Grid, n_samples: int, seed: int, first_index: int = 0) -> tuple[np.ndarray, list]:
    """Zero-mean boundary functions with log-uniform sup norms.

    The input family is sampled in two dimensions at the boundary points mapped
    into the unit square, which keeps the data periodic in the angle.
    """
    mapped = Grid(0.5 * (boundary.nodes + 1.0), boundary.weights, "mapped_boundary", {})
    return datagen.make_inputs(mapped, n_samples, seed, "boundary_scale", first_index)


def generate_pfnn_dataset(problem: PdeProblem, n_samples: int, seed: int, first_index: int = 0,
                          net_config: FredholmNetConfig | None = None, tol: float = 1e-12,
                          outer_iters: int = 200) -> PfnnDataset:
    """Solutions from the true-``K0`` potential network iterated to ``tol``."""
    net_config = net_config or FredholmNetConfig(80, DEFAULT_BIE_KAPPA)
    g, log = boundary_inputs(problem.boundary, n_samples, seed, first_index)
    exact = PhiModel(problem.helmholtz_lambda, "exact")
    res = picard_pde_solve(exact, problem, g.T, net_config, outer_iters=outer_iters, tol=tol)
    provenance = {
        "seed": seed,
        "first_index": first_index,
        "n_samples": n_samples,
        "transform": "boundary_scale",
        "transform_log": log,
        "solver": {"potential": "exact_k0", "bie_depth": net_config.depth, "bie_kappa": net_config.kappa,
                   "tol": tol, "outer_iterations": res.iterations},
        "problem": problem.describe(),
    }
    return PfnnDataset(problem, g, res.u.data.T.copy(), provenance)


def save_pfnn_dataset(directory, dataset: PfnnDataset) -> None:
    p = dataset.problem
    arrays = {
        "boundary_nodes": p.boundary.nodes,
        "interior_nodes": p.interior.nodes,
        "interior_weights": p.interior.weights,
        "g": dataset.g,
        "u": dataset.u,
    }
    datagen.save_arrays(directory, arrays, {"kind": "pde_pairs", "pde": p.describe(),
                                            "provenance": dataset.provenance})


def load_pfnn_dataset(directory, psi=None, psi_name: str = "tanh_source") -> PfnnDataset:
    from .solver import tanh_source

    arrays, manifest = datagen.load_arrays(directory)
    pde = manifest["pde"]
    psi_name = pde["psi"]
    psi_fn = None if psi_name == "shifted_zero" else (psi or tanh_source)
    problem = PdeProblem.on_grids(pde["boundary"]["n"], pde["interior"]["n_r"], pde["interior"]["n_phi"],
                                  helmholtz_lambda=pde["helmholtz_lambda"], psi=psi_fn, psi_name=psi_name)
    if not np.array_equal(problem.interior.nodes, arrays["interior_nodes"]):
        raise ShapeMismatch("stored interior nodes do not match the regenerated grid")
    return PfnnDataset(problem, arrays["g"], arrays["u"], manifest["provenance"])


# -- training ------------------------------------------------------------------

@dataclass
class PfnnTrainConfig:
    training: TrainingConfig
    outer_iters: int = 8
    bie: FredholmNetConfig = field(default_factory=lambda: FredholmNetConfig(DEFAULT_BIE_DEPTH, DEFAULT_BIE_KAPPA))


@dataclass
class PfnnTrainReport:
    loss_curve: list[float] = field(default_factory=list)
    lr_curve: list[float] = field(default_factory=list)
    alpha_curve: list[float] = field(default_factory=list)
    lr_halved_at: int | None = None
    wall_time: float = 0.0

    @property
    def final_loss(self) -> float:
        return self.loss_curve[-1]


def pfnn_loss_graph(model: PhiModel, params: list[Tensor], dataset: PfnnDataset, cfg: PfnnTrainConfig,
                    lambda_K: float) -> Tensor:
    problem = dataset.problem
    ops = build_operators(model, problem, params)
    u_hat, _ = picard_forward(ops, problem, dataset.g.T, cfg.bie, cfg.outer_iters)
    loss = ad.mean(ad.square(u_hat - dataset.u.T))
    if lambda_K:
        # boundary-to-interior evaluations of the learned potential
        loss = loss + lambda_K * ad.sum(ad.square(phi_matrix(model, problem.boundary.nodes,
                                                             problem.interior.nodes, params)))
    return loss


def train_pfnn(model: PhiModel, dataset: PfnnDataset, cfg: PfnnTrainConfig) -> tuple[PhiModel, PfnnTrainReport]:
    """Adam over the correction network and the mixing parameter; returns a trained copy."""
    if model.correction is None:
        raise ValueError("model has no trainable correction")
    tc = cfg.training
    model = model.copy()
    params = model.parameters()
    state = AdamState.zeros_like(params)
    schedule = tc.schedule()
    report = PfnnTrainReport()
    start = time.perf_counter()
    backup = None
    factor = 1.0
    e = 0
    while e < tc.epochs:
        try:
            with ad.Tape() as tape:
                leaves = model.tensors(tape)
                loss = pfnn_loss_graph(model, leaves, dataset, cfg, tc.lambda_K)
            grads = tape.gradient(loss, leaves, release=True)
        except (DivergedForward, NonFiniteValue) as err:
            if backup is None or report.lr_halved_at is not None:
                raise DivergedForward(f"potential training diverged at epoch {e}: {err}") from err
            for p, saved in zip(params, backup[0]):
                p[...] = saved
            state = backup[1]
            factor *= 0.5
            report.lr_halved_at = e
            e -= 1
            for curve in (report.loss_curve, report.lr_curve, report.alpha_curve):
                curve.pop()
            continue
        lr = lr_at(schedule, e) * factor
        report.loss_curve.append(loss.item())
        report.lr_curve.append(lr)
        report.alpha_curve.append(model.alpha)
        backup = ([p.copy() for p in params], state.copy())
        adam_step(params, grads, state, lr, tc.betas, tc.eps)
        e += 1
    report.wall_time = time.perf_counter() - start
    return model, report


# -- evaluation ----------------------------------------------------------------

def reconstruction_test(model: PhiModel, dataset: PfnnDataset, bie: FredholmNetConfig | None = None,
                        run_id: int = 0) -> list[metrics.ErrorRecord]:
    """Representation evaluated with the reference solution inside the source term."""
    bie = bie or FredholmNetConfig(DEFAULT_BIE_DEPTH, DEFAULT_BIE_KAPPA)
    problem = dataset.problem
    ops = build_operators(model, problem)
    res = bie_forward(ops, problem, dataset.g.T, dataset.u.T, bie)
    return metrics.error_records(res.u.data.T, dataset.u, problem.interior.weights, run_id)


@dataclass
class SolverTestResult:
    records: list[metrics.ErrorRecord]
    outer_successive: list[float]
    outer_ratios: list[float]
    bie_report: ContractionReport | None
    converged: bool


def solver_test(model: PhiModel, dataset: PfnnDataset, bie: FredholmNetConfig | None = None,
                outer_iters: int = 100, tol: float = 1e-10, run_id: int = 0) -> SolverTestResult:
    """Full outer Picard solve from the boundary data alone."""
    bie = bie or FredholmNetConfig(DEFAULT_BIE_DEPTH, DEFAULT_BIE_KAPPA)
    problem = dataset.problem
    res = picard_pde_solve(model, problem, dataset.g.T, bie, outer_iters=outer_iters, tol=tol,
                           raise_on_cap=False)
    records = metrics.error_records(res.u.data.T, dataset.u, problem.interior.weights, run_id)
    return SolverTestResult(records, res.successive_sup, res.ratios, res.bie_report, res.converged)
