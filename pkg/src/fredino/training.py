"""Losses, Adam, and the training loops for linear and nonlinear kernel learning."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import fredholm, metrics
from .autodiff import Tensor
from .datagen import FunctionPairDataset
from .errors import DivergedForward, EmptySchedule, NonFiniteValue, ShapeMismatch
from .fredholm import FredholmNetConfig
from .models import KernelSurrogate, NonlinearitySurrogate, kernel_eval_grid
from .quadrature import Grid

G_PROBE_POINTS = 256


def default_schedule(lr: float, epochs: int, segments: int = 3) -> list[tuple[int, float]]:
    """Equal-length segments at ``lr``, ``lr/10``, ``lr/100``, ..."""
    return [(int(k * epochs // segments), lr * 10.0 ** (-k)) for k in range(segments)]


def lr_at(schedule, epoch: int) -> float:
    """Piecewise-constant rate: the entry with the largest threshold ``<= epoch``."""
    if not schedule:
        raise EmptySchedule("learning-rate schedule is empty")
    lr = schedule[0][1]
    for threshold, value in schedule:
        if threshold <= epoch:
            lr = value
        else:
            break
    return lr


@dataclass
class AltMinConfig:
    phase_a_epochs: int
    phase_b_epochs: int
    rounds: int = 1
    fine_tune_epochs: int = 0
    fine_tune_lr: float = 1e-5

    @property
    def total_epochs(self) -> int:
        return self.rounds * (self.phase_a_epochs + self.phase_b_epochs) + self.fine_tune_epochs


@dataclass
class TrainingConfig:
    epochs: int
    lr: float = 1e-2
    lr_schedule: list | None = None
    lambda_K: float = 0.0
    lambda_G: float = 0.0
    batch_size: int | None = None
    alt_min: AltMinConfig | None = None
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.lambda_K < 0 or self.lambda_G < 0:
            raise ValueError("regularization weights must be non-negative")
        schedule = self.schedule()
        lrs = [lr for _, lr in schedule]
        if any(lr <= 0 for lr in lrs) or any(b > a for a, b in zip(lrs, lrs[1:])):
            raise ValueError("learning rates must be positive and non-increasing")

    def schedule(self, epochs: int | None = None) -> list[tuple[int, float]]:
        if self.lr_schedule is not None:
            return [(int(t), float(v)) for t, v in self.lr_schedule]
        return default_schedule(self.lr, self.epochs if epochs is None else epochs)


# -- Adam ----------------------------------------------------------------------

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)

    def copy(self) -> "AdamState":
        return AdamState([m.copy() for m in self.m], [v.copy() for v in self.v], self.t)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, lr: float,
              betas=(0.9, 0.999), eps: float = 1e-8) -> tuple[list[np.ndarray], AdamState]:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("parameter, gradient and state lists differ in length")
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = g.reshape(p.shape)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


# -- losses --------------------------------------------------------------------

def _check_grid(dataset: FunctionPairDataset, grid: Grid) -> None:
    if dataset.grid.n != grid.n or not np.array_equal(dataset.grid.nodes, grid.nodes):
        raise ShapeMismatch("dataset grid does not match the network grid")


def g_probe(f_values: np.ndarray, n: int = G_PROBE_POINTS) -> np.ndarray:
    """Uniform probe points spanning the range of the observed outputs."""
    return np.linspace(float(np.min(f_values)), float(np.max(f_values)), n).reshape(-1, 1)


def linear_loss_graph(kernel: KernelSurrogate, kparams: list[Tensor], g_cols, f_cols, grid: Grid,
                      net_config: FredholmNetConfig, lambda_K: float) -> Tensor:
    """Mean squared output error plus ``lambda_K`` times the squared Frobenius norm of the kernel grid."""
    K = kernel_eval_grid(kernel, grid.nodes, grid.nodes, kparams)
    op = fredholm.assemble(K, grid, net_config)
    F = fredholm.forward_linear(g_cols, op, net_config).values
    loss = ad.mean(ad.square(F - f_cols))
    if lambda_K:
        loss = loss + lambda_K * ad.sum(ad.square(K))
    return loss


def nonlinear_loss_graph(kernel: KernelSurrogate, kparams, nonlin: NonlinearitySurrogate, gparams,
                         g_cols, f_cols, grid: Grid, net_config: FredholmNetConfig, lambda_K: float,
                         lambda_G: float, probe: np.ndarray, K_fixed: Tensor | None = None) -> Tensor:
    """Recurrent-network MSE plus both Frobenius regularizers.

    ``K_fixed`` short-circuits the kernel evaluation when the kernel is frozen.
    """
    K = K_fixed if K_fixed is not None else kernel_eval_grid(kernel, grid.nodes, grid.nodes, kparams)
    op = fredholm.assemble(K, grid, net_config)
    F = fredholm.forward_recurrent(g_cols, lambda u: nonlin(u, gparams), op, net_config).values
    loss = ad.mean(ad.square(F - f_cols))
    if lambda_K:
        loss = loss + lambda_K * ad.sum(ad.square(K))
    if lambda_G:
        loss = loss + lambda_G * ad.sum(ad.square(nonlin(probe, gparams)))
    return loss


def loss_linear(kernel: KernelSurrogate, dataset: FunctionPairDataset, grid: Grid,
                net_config: FredholmNetConfig, lambda_K: float = 0.0) -> tuple[float, list[np.ndarray]]:
    """Loss value and its gradient w.r.t. the kernel parameters."""
    _check_grid(dataset, grid)
    with ad.Tape() as tape:
        kp = kernel.mlp.tensors(tape)
        loss = linear_loss_graph(kernel, kp, dataset.g.T, dataset.f.T, grid, net_config, lambda_K)
    return loss.item(), tape.gradient(loss, kp, release=True)


def loss_nonlinear(kernel: KernelSurrogate, nonlin: NonlinearitySurrogate, dataset: FunctionPairDataset,
                   grid: Grid, net_config: FredholmNetConfig, lambda_K: float = 0.0, lambda_G: float = 0.0
                   ) -> tuple[float, list[np.ndarray], list[np.ndarray]]:
    """Loss value and gradients w.r.t. kernel and nonlinearity parameters."""
    _check_grid(dataset, grid)
    with ad.Tape() as tape:
        kp = kernel.mlp.tensors(tape)
        gp = nonlin.mlp.tensors(tape)
        loss = nonlinear_loss_graph(kernel, kp, nonlin, gp, dataset.g.T, dataset.f.T, grid, net_config,
                                    lambda_K, lambda_G, g_probe(dataset.f))
    grads = tape.gradient(loss, kp + gp, release=True)
    return loss.item(), grads[:len(kp)], grads[len(kp):]


# -- training loops ------------------------------------------------------------

@dataclass
class Checkpoint:
    epoch: int
    inf_norm: float
    contractive: bool


@dataclass
class TrainReport:
    loss_curve: list[float] = field(default_factory=list)
    lr_curve: list[float] = field(default_factory=list)
    phase_curve: list[str] = field(default_factory=list)
    checkpoints: list[Checkpoint] = field(default_factory=list)
    phase_boundaries: list[tuple[str, int, float]] = field(default_factory=list)
    lr_halved_at: int | None = None
    wall_time: float = 0.0

    @property
    def final_loss(self) -> float:
        return self.loss_curve[-1]

    @property
    def mean_loss(self) -> float:
        return float(np.mean(self.loss_curve))

    @property
    def median_loss(self) -> float:
        return float(np.median(self.loss_curve))

    def contractive_at(self, epoch: int) -> bool | str:
        for c in self.checkpoints:
            if c.epoch == epoch:
                return c.contractive
        return ""

    def to_csv(self, path) -> None:
        """Per-epoch rows; wall time is left out so the file is reproducible."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "phase", "loss", "lr", "contractive"])
            for e, (loss, lr, phase) in enumerate(zip(self.loss_curve, self.lr_curve, self.phase_curve)):
                writer.writerow([e, phase, repr(loss), repr(lr), self.contractive_at(e)])


class _Optimizer:
    """Adam over a fixed parameter group with the divergence-retry policy."""

    def __init__(self, params: list[np.ndarray], config: TrainingConfig, report: TrainReport):
        self.params = params
        self.config = config
        self.state = AdamState.zeros_like(params)
        self.report = report
        self.lr_factor = 1.0
        self._backup: tuple[list[np.ndarray], AdamState] | None = None

    def step(self, grads, lr) -> None:
        self._backup = ([p.copy() for p in self.params], self.state.copy())
        adam_step(self.params, grads, self.state, lr * self.lr_factor, self.config.betas, self.config.eps)

    def recover(self, epoch: int, err: Exception) -> None:
        """Undo the last update and halve the rate; a second failure re-raises."""
        if self.report.lr_halved_at is not None or self._backup is None:
            raise DivergedForward(f"training diverged at epoch {epoch} after the retry: {err}") from err
        saved, state = self._backup
        for p, s in zip(self.params, saved):
            p[...] = s
        self.state = state
        self.lr_factor *= 0.5
        self.report.lr_halved_at = epoch


def _run_epochs(loss_and_grads: Callable[[int], tuple[float, list[np.ndarray]]], opt: _Optimizer,
                schedule, epochs: int, report: TrainReport, phase: str, epoch_offset: int,
                checkpoint: Callable[[int], None] | None, checkpoint_every: int) -> None:
    e = 0
    while e < epochs:
        lr = lr_at(schedule, e)
        try:
            loss, grads = loss_and_grads(epoch_offset + e)
        except (DivergedForward, NonFiniteValue) as err:
            opt.recover(epoch_offset + e, err)
            # the rejected update belongs to the previous epoch, so redo that epoch
            e -= 1
            for curve in (report.loss_curve, report.lr_curve, report.phase_curve):
                curve.pop()
            report.checkpoints = [c for c in report.checkpoints if c.epoch < epoch_offset + e]
            continue
        report.loss_curve.append(loss)
        report.lr_curve.append(lr * opt.lr_factor)
        report.phase_curve.append(phase)
        if checkpoint is not None and checkpoint_every and (epoch_offset + e) % checkpoint_every == 0:
            checkpoint(epoch_offset + e)
        opt.step(grads, lr)
        e += 1


def _batch_columns(config: TrainingConfig, n_samples: int, epoch: int) -> np.ndarray | None:
    if not config.batch_size or config.batch_size >= n_samples:
        return None
    rng = np.random.default_rng([config.seed, epoch])
    return np.sort(rng.choice(n_samples, config.batch_size, replace=False))


def kernel_contraction(kernel: KernelSurrogate, grid: Grid, net_config: FredholmNetConfig, g_cols,
                       G: Callable | None = None) -> fredholm.ContractionReport:
    """Contraction diagnostics of the learned kernel on ``grid`` for the given inputs."""
    K = kernel_eval_grid(kernel, grid.nodes, grid.nodes)
    op = fredholm.assemble(K, grid, net_config)
    if net_config.mode == fredholm.RECURRENT_PICARD:
        res = fredholm.forward_recurrent(g_cols, G, op, net_config, record=True)
    else:
        res = fredholm.forward_linear(g_cols, op, net_config, record=True)
    return fredholm.contraction_report(res.layers, op)


def train_linear(kernel: KernelSurrogate, dataset: FunctionPairDataset, config: TrainingConfig,
                 net_config: FredholmNetConfig) -> tuple[KernelSurrogate, TrainReport]:
    """Full-batch (or mini-batch) Adam on the linear loss; returns a trained copy."""
    grid = dataset.grid
    kernel = KernelSurrogate(kernel.mlp.copy(), kernel.dim)
    report = TrainReport()
    params = kernel.mlp.parameters()
    opt = _Optimizer(params, config, report)
    G_all, F_all = dataset.g.T, dataset.f.T
    schedule = config.schedule()

    def loss_and_grads(epoch):
        cols = _batch_columns(config, dataset.n_samples, epoch)
        g_cols = G_all if cols is None else G_all[:, cols]
        f_cols = F_all if cols is None else F_all[:, cols]
        with ad.Tape() as tape:
            kp = kernel.mlp.tensors(tape)
            loss = linear_loss_graph(kernel, kp, g_cols, f_cols, grid, net_config, config.lambda_K)
        return loss.item(), tape.gradient(loss, kp, release=True)

    def checkpoint(epoch):
        rep = kernel_contraction(kernel, grid, net_config, G_all[:, :8])
        report.checkpoints.append(Checkpoint(epoch, rep.inf_norm_W, rep.contractive))

    start = time.perf_counter()
    _run_epochs(loss_and_grads, opt, schedule, config.epochs, report, "joint", 0, checkpoint,
                config.checkpoint_every)
    checkpoint(config.epochs)
    report.wall_time = time.perf_counter() - start
    return kernel, report


def _last(curve: list[float]) -> float:
    return curve[-1] if curve else float("nan")


def train_alternating(kernel: KernelSurrogate, nonlin: NonlinearitySurrogate, dataset: FunctionPairDataset,
                      config: TrainingConfig, net_config: FredholmNetConfig
                      ) -> tuple[KernelSurrogate, NonlinearitySurrogate, TrainReport]:
    """Rounds of kernel-only then nonlinearity-only Adam, then an optional joint fine-tune.

    Each phase owns a fresh Adam state and runs the configured schedule over
    its own epoch count; the fine-tune uses ``alt_min.fine_tune_lr`` constant.
    """
    alt = config.alt_min
    if alt is None:
        raise ValueError("alternating training needs an AltMinConfig")
    grid = dataset.grid
    kernel = KernelSurrogate(kernel.mlp.copy(), kernel.dim)
    nonlin = NonlinearitySurrogate(nonlin.mlp.copy())
    report = TrainReport()
    G_all, F_all = dataset.g.T, dataset.f.T
    probe = g_probe(dataset.f)
    lam_K, lam_G = config.lambda_K, config.lambda_G

    def cols_for(epoch):
        cols = _batch_columns(config, dataset.n_samples, epoch)
        return (G_all, F_all) if cols is None else (G_all[:, cols], F_all[:, cols])

    def phase_a(epoch):
        g_cols, f_cols = cols_for(epoch)
        gp = nonlin.mlp.tensors()
        with ad.Tape() as tape:
            kp = kernel.mlp.tensors(tape)
            loss = nonlinear_loss_graph(kernel, kp, nonlin, gp, g_cols, f_cols, grid, net_config,
                                        lam_K, lam_G, probe)
        return loss.item(), tape.gradient(loss, kp, release=True)

    K_frozen: list[Tensor] = []

    def phase_b(epoch):
        g_cols, f_cols = cols_for(epoch)
        with ad.Tape() as tape:
            gp = nonlin.mlp.tensors(tape)
            loss = nonlinear_loss_graph(kernel, None, nonlin, gp, g_cols, f_cols, grid, net_config,
                                        lam_K, lam_G, probe, K_fixed=K_frozen[0])
        return loss.item(), tape.gradient(loss, gp, release=True)

    def joint(epoch):
        g_cols, f_cols = cols_for(epoch)
        with ad.Tape() as tape:
            kp = kernel.mlp.tensors(tape)
            gp = nonlin.mlp.tensors(tape)
            loss = nonlinear_loss_graph(kernel, kp, nonlin, gp, g_cols, f_cols, grid, net_config,
                                        lam_K, lam_G, probe)
        return loss.item(), tape.gradient(loss, kp + gp, release=True)

    def checkpoint(epoch):
        rep = kernel_contraction(kernel, grid, net_config, G_all[:, :8], lambda u: nonlin(u))
        report.checkpoints.append(Checkpoint(epoch, rep.inf_norm_W, rep.contractive))

    start = time.perf_counter()
    offset = 0
    every = config.checkpoint_every
    for r in range(alt.rounds):
        opt = _Optimizer(kernel.mlp.parameters(), config, report)
        _run_epochs(phase_a, opt, config.schedule(alt.phase_a_epochs), alt.phase_a_epochs, report,
                    f"A{r}", offset, checkpoint, every)
        offset += alt.phase_a_epochs
        report.phase_boundaries.append((f"A{r}", offset, _last(report.loss_curve)))

        K_frozen[:] = [kernel_eval_grid(kernel, grid.nodes, grid.nodes)]
        opt = _Optimizer(nonlin.mlp.parameters(), config, report)
        _run_epochs(phase_b, opt, config.schedule(alt.phase_b_epochs), alt.phase_b_epochs, report,
                    f"B{r}", offset, checkpoint, every)
        offset += alt.phase_b_epochs
        report.phase_boundaries.append((f"B{r}", offset, _last(report.loss_curve)))
    if alt.fine_tune_epochs:
        opt = _Optimizer(kernel.mlp.parameters() + nonlin.mlp.parameters(), config, report)
        _run_epochs(joint, opt, [(0, alt.fine_tune_lr)], alt.fine_tune_epochs, report, "fine_tune",
                    offset, checkpoint, every)
        offset += alt.fine_tune_epochs
        report.phase_boundaries.append(("fine_tune", offset, _last(report.loss_curve)))
    checkpoint(offset)
    report.wall_time = time.perf_counter() - start
    return kernel, nonlin, report


# -- evaluation ----------------------------------------------------------------

def predict(kernel: KernelSurrogate, g_rows: np.ndarray, grid: Grid, net_config: FredholmNetConfig,
            nonlin: Callable | None = None) -> np.ndarray:
    """Network outputs (rows) for input functions sampled on ``grid``."""
    K = kernel_eval_grid(kernel, grid.nodes, grid.nodes)
    op = fredholm.assemble(K, grid, net_config)
    if net_config.mode == fredholm.RECURRENT_PICARD:
        G = nonlin if nonlin is not None else (lambda u: u)
        return fredholm.forward_recurrent(g_rows.T, G, op, net_config).values.data.T
    return fredholm.forward_linear(g_rows.T, op, net_config).values.data.T


def evaluate(kernel: KernelSurrogate, test_dataset: FunctionPairDataset, net_config: FredholmNetConfig,
             nonlin: Callable | None = None, run_id: int = 0) -> list[metrics.ErrorRecord]:
    """Per-test-function relative errors on the test dataset's own grid."""
    pred = predict(kernel, test_dataset.g, test_dataset.grid, net_config, nonlin)
    return metrics.error_records(pred, test_dataset.f, test_dataset.grid.weights, run_id)
