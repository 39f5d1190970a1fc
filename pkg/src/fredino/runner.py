"""Config-driven experiment commands used by the command-line entry point.

A run config is a JSON object with a ``kind`` and per-component sections; see
``presets/`` for complete examples.  Every command writes under one output
directory, next to a copy of the resolved config and a provenance record.
"""

from __future__ import annotations

import copy
import csv
import json
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, datagen, fredholm, metrics, quadrature, training
from .errors import ConfigError, FormatVersionMismatch
from .fredholm import FredholmNetConfig
from .models import KernelSurrogate, MlpModel, NonlinearitySurrogate, load_model, mlp_init, save_model

SCHEMA_VERSION = 1
KINDS = ("linear_1d", "linear_hd", "nonlinear_1d", "nonlinear_hd", "pfnn_2d")
PRESETS = ("ex5_1", "ex5_2", "ex5_3", "ex5_4", "ex5_5")
CONTRACTION_PROBES = 8


class NotContractive(Exception):
    """Raised by commands whose contraction check failed (exit code 3)."""


# -- config handling ---------------------------------------------------------

def load_config(source: str) -> dict:
    """Read a config from a path, or from the bundled presets by name."""
    path = Path(source)
    if path.is_file():
        text = path.read_text()
    elif source in PRESETS:
        text = resources.files("fredino.presets").joinpath(f"{source}.json").read_text()
    else:
        raise FileNotFoundError(f"no config file or preset named {source!r}")
    try:
        return json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{source}: invalid JSON ({err})") from err


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def resolve_config(raw: dict, paper_scale: bool = False, seed: int | None = None) -> dict:
    """Apply the optional full-scale overrides and a seed override, then validate."""
    cfg = copy.deepcopy(raw)
    overrides = cfg.pop("paper_scale", None) or {}
    if paper_scale:
        if not overrides:
            raise ConfigError("config has no paper_scale section")
        cfg = deep_merge(cfg, overrides)
    if seed is not None:
        cfg["seed"] = int(seed)
    cfg["paper_scale_applied"] = bool(paper_scale)
    validate_config(cfg)
    return cfg


def _require(cfg: dict, path: str):
    node = cfg
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"missing required field {path!r}")
        node = node[part]
    return node


_REQUIRED = {
    "linear_1d": ("grid", "test_grid", "kernel", "data", "net", "model", "training"),
    "linear_hd": ("grid", "test_grid", "kernel", "data", "net", "model", "training"),
    "nonlinear_1d": ("grid", "test_grid", "kernel", "data", "net", "model", "g_model", "training"),
    "nonlinear_hd": ("grid", "test_grid", "kernel", "data", "net", "model", "g_model", "training"),
    "pfnn_2d": ("pde", "data", "model", "training"),
}


def validate_config(cfg: dict) -> None:
    """Check the schema version, kind and kind-specific fields before any compute."""
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}")
    kind = cfg.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"kind must be one of {KINDS}, got {kind!r}")
    seed = _require(cfg, "seed")
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    for section in _REQUIRED[kind]:
        if not isinstance(_require(cfg, section), dict):
            raise ConfigError(f"section {section!r} must be an object")
    for field in ("data.n_train", "data.n_test", "training.epochs"):
        value = _require(cfg, field)
        if not isinstance(value, int) or value < 1:
            raise ConfigError(f"{field} must be a positive integer")
    _require(cfg, "model.hidden")
    if kind == "pfnn_2d":
        for field in ("pde.boundary_n", "pde.n_r", "pde.n_phi"):
            _require(cfg, field)
        if cfg["pde"]["boundary_n"] % cfg["pde"]["n_phi"]:
            raise ConfigError("pde.boundary_n must be a multiple of pde.n_phi")
        return
    for grid_key in ("grid", "test_grid"):
        grid_type = _require(cfg, f"{grid_key}.type")
        if grid_type not in ("uniform", "sobol"):
            raise ConfigError(f"{grid_key}.type must be 'uniform' or 'sobol'")
        _require(cfg, f"{grid_key}.n")
    if cfg["kernel"].get("kind") not in datagen.KERNEL_KINDS:
        raise ConfigError(f"kernel.kind must be one of {datagen.KERNEL_KINDS}")
    if cfg["data"].get("transform", "center_normalize") not in datagen.TRANSFORMS:
        raise ConfigError(f"data.transform must be one of {datagen.TRANSFORMS}")
    _require(cfg, "net.depth")
    if kind.startswith("nonlinear"):
        _require(cfg, "g_model.hidden")
        _require(cfg, "training.alt_min.phase_a_epochs")
        _require(cfg, "training.alt_min.phase_b_epochs")
    try:
        make_net_config(cfg)
        make_training_config(cfg)
        TrueKernelSpecFactory.unscaled(cfg)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err


# -- builders ----------------------------------------------------------------

def build_grid(spec: dict) -> quadrature.Grid:
    if spec["type"] == "uniform":
        return quadrature.uniform_grid(spec.get("a", 0.0), spec.get("b", 1.0), spec["n"])
    return quadrature.sobol_points(spec["dim"], spec["n"], spec.get("scramble_seed"))


class TrueKernelSpecFactory:
    """Ground-truth kernel of a run, calibrated on the training grid."""

    FIELDS = ("kind", "dim", "scale", "gamma", "length", "omega_seed", "calibration")

    @classmethod
    def unscaled(cls, cfg: dict) -> datagen.TrueKernelSpec:
        section = {k: v for k, v in cfg["kernel"].items() if k in cls.FIELDS}
        return datagen.TrueKernelSpec.from_dict(section)

    @classmethod
    def calibrated(cls, cfg: dict, grid: quadrature.Grid) -> datagen.TrueKernelSpec:
        return datagen.calibrate_kernel(cls.unscaled(cfg), grid)


def make_net_config(cfg: dict) -> FredholmNetConfig:
    net = cfg["net"]
    mode = fredholm.RECURRENT_PICARD if cfg["kind"].startswith("nonlinear") else fredholm.LINEAR_KM
    return FredholmNetConfig(int(net["depth"]), float(net.get("kappa", 1.0)), mode)


def make_training_config(cfg: dict) -> training.TrainingConfig:
    t = dict(cfg["training"])
    alt = t.pop("alt_min", None)
    allowed = {"epochs", "lr", "lr_schedule", "lambda_K", "lambda_G", "batch_size", "checkpoint_every"}
    unknown = set(t) - allowed
    if unknown:
        raise ConfigError(f"unknown training fields {sorted(unknown)}")
    return training.TrainingConfig(seed=cfg["seed"], alt_min=training.AltMinConfig(**alt) if alt else None, **t)


def make_mlp(section: dict, in_dim: int) -> MlpModel:
    return mlp_init([in_dim, *section["hidden"], 1], section.get("activation", "tanh"), section.get("seed", 0),
                    section.get("first_layer_scale"), float(section.get("last_layer_gain", 1.0)))


# -- output helpers ----------------------------------------------------------

@dataclass
class RunContext:
    cfg: dict
    out: Path

    @property
    def data_dir(self) -> Path:
        return self.out / "data"

    @property
    def model_dir(self) -> Path:
        return self.out / "model"

    def write_json(self, relpath: str, payload) -> Path:
        path = self.out / relpath
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
        return path

    def record(self, command: str, extra: dict | None = None) -> None:
        """Copy of the resolved config plus the seeds and versions a rerun needs."""
        self.write_json("config.json", self.cfg)
        self.write_json(f"provenance/{command}.json", {
            "command": command,
            "package_version": __version__,
            "numpy_version": np.__version__,
            "schema_version": SCHEMA_VERSION,
            "seed": self.cfg["seed"],
            "paper_scale": self.cfg.get("paper_scale_applied", False),
            **(extra or {}),
        })


def _test_seed(cfg: dict) -> int:
    return int(cfg["data"].get("test_seed", cfg["seed"]))


def _test_first_index(cfg: dict) -> int:
    return int(cfg["data"].get("test_first_index", 1_000_000))


# -- integral-equation runs --------------------------------------------------

def _dataset_config(cfg: dict, grid, spec, n: int, seed: int, first_index: int) -> datagen.DatasetConfig:
    data = cfg["data"]
    return datagen.DatasetConfig(grid, spec, n, seed, transform=data.get("transform", "center_normalize"),
                                 nonlinear=cfg["kind"].startswith("nonlinear"), first_index=first_index)


def generate_fie(ctx: RunContext) -> dict:
    cfg = ctx.cfg
    grid, test_grid = build_grid(cfg["grid"]), build_grid(cfg["test_grid"])
    spec = TrueKernelSpecFactory.calibrated(cfg, grid)
    train = datagen.generate_dataset(_dataset_config(cfg, grid, spec, cfg["data"]["n_train"], cfg["seed"], 0))
    test = datagen.generate_dataset(_dataset_config(cfg, test_grid, spec, cfg["data"]["n_test"], _test_seed(cfg),
                                                    _test_first_index(cfg)))
    datagen.save_dataset(ctx.data_dir / "train", train)
    datagen.save_dataset(ctx.data_dir / "test", test)
    return {"kernel": spec.to_dict(), "train_samples": train.n_samples, "test_samples": test.n_samples}


def _load_fie_data(ctx: RunContext, data_dir: Path | None):
    root = data_dir or ctx.data_dir
    if not (root / "train" / "manifest.json").is_file():
        if data_dir is not None:
            raise FileNotFoundError(f"{root}: no dataset found")
        generate_fie(ctx)
    return datagen.load_dataset(root / "train"), datagen.load_dataset(root / "test")


def train_fie(ctx: RunContext, data_dir: Path | None = None) -> dict:
    cfg = ctx.cfg
    train, _ = _load_fie_data(ctx, data_dir)
    dim = train.grid.dim
    kernel = KernelSurrogate(make_mlp(cfg["model"], 2 * dim), dim)
    net = make_net_config(cfg)
    tcfg = make_training_config(cfg)
    ctx.model_dir.mkdir(parents=True, exist_ok=True)
    meta = {"kind": cfg["kind"], "seed": cfg["seed"]}
    if cfg["kind"].startswith("nonlinear"):
        nonlin = NonlinearitySurrogate(make_mlp(cfg["g_model"], 1))
        kernel, nonlin, report = training.train_alternating(kernel, nonlin, train, tcfg, net)
        save_model(ctx.model_dir / "nonlinearity.bin", nonlin.mlp, {**meta, "role": "nonlinearity"})
    else:
        kernel, report = training.train_linear(kernel, train, tcfg, net)
    save_model(ctx.model_dir / "kernel.bin", kernel.mlp, {**meta, "role": "kernel", "dim": dim})
    (ctx.out / "train").mkdir(parents=True, exist_ok=True)
    report.to_csv(ctx.out / "train" / "loss.csv")
    summary = {
        "final_loss": report.final_loss,
        "mean_loss": report.mean_loss,
        "median_loss": report.median_loss,
        "lr_halved_at": report.lr_halved_at,
        "phase_boundaries": [list(b) for b in report.phase_boundaries],
        "checkpoints": [[c.epoch, c.inf_norm, c.contractive] for c in report.checkpoints],
    }
    ctx.write_json("train/summary.json", summary)
    ctx.write_json("train/timing.json", {"wall_time_seconds": report.wall_time})
    return summary


@dataclass
class FieModel:
    kernel: KernelSurrogate | None
    nonlin: NonlinearitySurrogate | None
    true_spec: datagen.TrueKernelSpec | None = None

    def kernel_matrix(self, grid) -> np.ndarray:
        if self.true_spec is not None:
            return self.true_spec.matrix(grid.nodes, grid.nodes)
        from .models import kernel_eval_grid
        return kernel_eval_grid(self.kernel, grid.nodes, grid.nodes).data

    def G(self):
        if self.true_spec is not None:
            return datagen.true_G_tensor
        return (lambda u: self.nonlin(u)) if self.nonlin is not None else (lambda u: u)


def load_fie_model(ctx: RunContext, model_dir: Path | None, use_true: bool) -> FieModel:
    cfg = ctx.cfg
    if use_true:
        return FieModel(None, None, TrueKernelSpecFactory.calibrated(cfg, build_grid(cfg["grid"])))
    root = model_dir or ctx.model_dir
    mlp, meta = load_model(root / "kernel.bin")
    kernel = KernelSurrogate(mlp, meta.get("dim", 0))
    nonlin = None
    if cfg["kind"].startswith("nonlinear"):
        g_mlp, _ = load_model(root / "nonlinearity.bin")
        nonlin = NonlinearitySurrogate(g_mlp)
    return FieModel(kernel, nonlin)


def _fie_forward(model: FieModel, grid, g_cols, net: FredholmNetConfig, record: bool = False):
    op = fredholm.assemble(model.kernel_matrix(grid), grid, net)
    if net.mode == fredholm.RECURRENT_PICARD:
        return fredholm.forward_recurrent(g_cols, model.G(), op, net, record=record), op
    return fredholm.forward_linear(g_cols, op, net, record=record), op


def evaluate_fie(ctx: RunContext, model_dir: Path | None, data_dir: Path | None, use_true: bool) -> dict:
    _, test = _load_fie_data(ctx, data_dir)
    model = load_fie_model(ctx, model_dir, use_true)
    res, _ = _fie_forward(model, test.grid, test.g.T, make_net_config(ctx.cfg))
    records = metrics.error_records(res.values.data.T, test.f, test.grid.weights)
    return _write_errors(ctx, "eval", records, "true_model" if use_true else "learned")


def _write_errors(ctx: RunContext, folder: str, records, label: str) -> dict:
    (ctx.out / folder).mkdir(parents=True, exist_ok=True)
    metrics.write_records_csv(ctx.out / folder / "records.csv", records)
    summaries = {"per_sample": metrics.aggregate(records, "per_sample"),
                 "per_run": metrics.aggregate(records, "per_run")}
    metrics.write_summary_csv(ctx.out / folder / "summary.csv", ctx.cfg.get("example_id", ctx.cfg["kind"]),
                              summaries)
    return {"model": label, **{m: s.median for m, s in summaries["per_sample"].items()}}


def contraction_fie(ctx: RunContext, model_dir: Path | None, use_true: bool) -> dict:
    """Contraction diagnostics of the model on the training and test grids."""
    cfg = ctx.cfg
    model = load_fie_model(ctx, model_dir, use_true)
    net = make_net_config(cfg)
    transform = cfg["data"].get("transform", "center_normalize")
    out = {}
    (ctx.out / "contraction").mkdir(parents=True, exist_ok=True)
    for name in ("grid", "test_grid"):
        grid = build_grid(cfg[name])
        g, _ = datagen.make_inputs(grid, CONTRACTION_PROBES, _test_seed(cfg), transform, _test_first_index(cfg))
        try:
            res, op = _fie_forward(model, grid, g.T, net, record=True)
        except fredholm.NonFiniteValue as err:
            raise NotContractive(f"{name}: forward pass diverged ({err})") from err
        report = fredholm.contraction_report(res.layers, op)
        report.to_csv(ctx.out / "contraction" / f"{name}.csv")
        out[name] = {"inf_norm": report.inf_norm_W, "spectral_norm": report.spectral_norm_W,
                     "max_ratio_from_3": max(report.ratios_from(3), default=None),
                     "contractive": report.contractive}
    ctx.write_json("contraction/summary.json", out)
    return out


# -- potential network runs --------------------------------------------------

def _pde_problem(cfg: dict):
    from .pfnn.solver import PdeProblem

    pde = cfg["pde"]
    return PdeProblem.on_grids(pde["boundary_n"], pde["n_r"], pde["n_phi"],
                               helmholtz_lambda=float(pde.get("helmholtz_lambda", 1.0)))


def _bie_config(cfg: dict, key: str = "bie") -> FredholmNetConfig:
    from .pfnn.training import DEFAULT_BIE_DEPTH, DEFAULT_BIE_KAPPA

    section = cfg["pde"].get(key, {})
    return FredholmNetConfig(int(section.get("depth", DEFAULT_BIE_DEPTH)),
                             float(section.get("kappa", DEFAULT_BIE_KAPPA)))


def generate_pde(ctx: RunContext) -> dict:
    from .pfnn import training as pft

    cfg = ctx.cfg
    problem = _pde_problem(cfg)
    gen = cfg["pde"].get("data_solver", {})
    net = FredholmNetConfig(int(gen.get("depth", 80)), float(gen.get("kappa", 0.5)))
    tol = float(gen.get("tol", 1e-12))
    train = pft.generate_pfnn_dataset(problem, cfg["data"]["n_train"], cfg["seed"], 0, net, tol)
    test = pft.generate_pfnn_dataset(problem, cfg["data"]["n_test"], _test_seed(cfg), _test_first_index(cfg),
                                     net, tol)
    pft.save_pfnn_dataset(ctx.data_dir / "train", train)
    pft.save_pfnn_dataset(ctx.data_dir / "test", test)
    return {"train_samples": train.n_samples, "test_samples": test.n_samples}


def _load_pde_data(ctx: RunContext, data_dir: Path | None):
    from .pfnn import training as pft

    root = data_dir or ctx.data_dir
    if not (root / "train" / "manifest.json").is_file():
        if data_dir is not None:
            raise FileNotFoundError(f"{root}: no dataset found")
        generate_pde(ctx)
    return pft.load_pfnn_dataset(root / "train"), pft.load_pfnn_dataset(root / "test")


def train_pde(ctx: RunContext, data_dir: Path | None = None) -> dict:
    from .pfnn import training as pft
    from .pfnn.kernels import PhiModel

    cfg = ctx.cfg
    train, _ = _load_pde_data(ctx, data_dir)
    m = cfg["model"]
    model = PhiModel(train.problem.helmholtz_lambda, m.get("base", "smoothed"), make_mlp(m, 4),
                     np.full((1, 1), float(m.get("alpha_raw", 0.0))))
    tcfg = pft.PfnnTrainConfig(make_training_config(cfg), int(cfg["pde"].get("outer_iters_train", 8)),
                               _bie_config(cfg))
    model, report = pft.train_pfnn(model, train, tcfg)
    save_potential(ctx.model_dir / "potential.bin", model)
    (ctx.out / "train").mkdir(parents=True, exist_ok=True)
    with open(ctx.out / "train" / "loss.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "lr", "alpha"])
        for e, row in enumerate(zip(report.loss_curve, report.lr_curve, report.alpha_curve)):
            writer.writerow([e, *map(repr, row)])
    summary = {"final_loss": report.final_loss, "mean_loss": float(np.mean(report.loss_curve)),
               "median_loss": float(np.median(report.loss_curve)), "alpha": model.alpha,
               "lr_halved_at": report.lr_halved_at}
    ctx.write_json("train/summary.json", summary)
    ctx.write_json("train/timing.json", {"wall_time_seconds": report.wall_time})
    return summary


def save_potential(path: Path, model) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    save_model(path, model.correction, {"role": "potential_correction", "base": model.base,
                                        "helmholtz_lambda": model.helmholtz_lambda,
                                        "alpha_raw": float(model.alpha_raw[0, 0])})


def load_potential(path: Path):
    from .pfnn.kernels import PhiModel

    mlp, meta = load_model(path)
    if meta.get("role") != "potential_correction":
        raise FormatVersionMismatch(f"{path}: not a potential model")
    return PhiModel(meta["helmholtz_lambda"], meta["base"], mlp, np.full((1, 1), meta["alpha_raw"]))


def _pde_model(ctx: RunContext, model_dir: Path | None, use_true: bool):
    from .pfnn.kernels import PhiModel

    if use_true:
        return PhiModel(float(ctx.cfg["pde"].get("helmholtz_lambda", 1.0)), "exact")
    return load_potential((model_dir or ctx.model_dir) / "potential.bin")


def evaluate_pde(ctx: RunContext, model_dir: Path | None, data_dir: Path | None, use_true: bool) -> dict:
    from .pfnn import training as pft

    _, test = _load_pde_data(ctx, data_dir)
    model = _pde_model(ctx, model_dir, use_true)
    records = pft.reconstruction_test(model, test, _bie_config(ctx.cfg))
    return _write_errors(ctx, "eval", records, "true_model" if use_true else "learned")


def solve_pde(ctx: RunContext, model_dir: Path | None, data_dir: Path | None, use_true: bool) -> dict:
    from .pfnn import training as pft

    cfg = ctx.cfg
    _, test = _load_pde_data(ctx, data_dir)
    model = _pde_model(ctx, model_dir, use_true)
    result = pft.solver_test(model, test, _bie_config(cfg), int(cfg["pde"].get("outer_iters_solve", 100)),
                             float(cfg["pde"].get("solve_tol", 1e-10)))
    summary = _write_errors(ctx, "solve", result.records, "true_model" if use_true else "learned")
    rep = result.bie_report
    if rep is not None:
        rep.to_csv(ctx.out / "solve" / "bie_contraction.csv")
    summary.update(converged=result.converged, outer_successive=result.outer_successive,
                   outer_ratios=result.outer_ratios,
                   bie_contractive=None if rep is None else rep.contractive,
                   bie_max_ratio_from_3=None if rep is None else max(rep.ratios_from(3), default=None))
    ctx.write_json("solve/summary.json", summary)
    if not result.converged or (rep is not None and not rep.contractive) or any(r >= 1 for r in result.outer_ratios):
        raise NotContractive("potential solver did not contract")
    return summary


def contraction_pde(ctx: RunContext, model_dir: Path | None, use_true: bool) -> dict:
    """Boundary-density pass diagnostics on a handful of fresh boundary inputs."""
    from .pfnn import training as pft
    from .pfnn.solver import bie_forward, build_operators

    cfg = ctx.cfg
    problem = _pde_problem(cfg)
    model = _pde_model(ctx, model_dir, use_true)
    g, _ = pft.boundary_inputs(problem.boundary, CONTRACTION_PROBES, _test_seed(cfg), _test_first_index(cfg))
    try:
        res = bie_forward(build_operators(model, problem), problem, g.T, None, _bie_config(cfg), record=True)
    except fredholm.NonFiniteValue as err:
        raise NotContractive(f"boundary pass diverged ({err})") from err
    report = fredholm.contraction_report(res.layers, res.operator)
    (ctx.out / "contraction").mkdir(parents=True, exist_ok=True)
    report.to_csv(ctx.out / "contraction" / "boundary.csv")
    out = {"boundary": {"inf_norm": report.inf_norm_W, "spectral_norm": report.spectral_norm_W,
                        "max_ratio_from_3": max(report.ratios_from(3), default=None),
                        "contractive": report.contractive}}
    ctx.write_json("contraction/summary.json", out)
    return out


# -- dispatch ----------------------------------------------------------------

def run_command(command: str, cfg: dict, out: Path, model_dir: Path | None = None, data_dir: Path | None = None,
                use_true: bool = False) -> dict:
    """Execute one command; raises ``NotContractive`` when a contraction check fails."""
    ctx = RunContext(cfg, Path(out))
    ctx.out.mkdir(parents=True, exist_ok=True)
    pde = cfg["kind"] == "pfnn_2d"
    start = time.perf_counter()
    if command == "generate":
        result = generate_pde(ctx) if pde else generate_fie(ctx)
    elif command == "train":
        result = train_pde(ctx, data_dir) if pde else train_fie(ctx, data_dir)
    elif command == "evaluate":
        result = (evaluate_pde if pde else evaluate_fie)(ctx, model_dir, data_dir, use_true)
    elif command == "contraction":
        result = (contraction_pde if pde else contraction_fie)(ctx, model_dir, use_true)
        if not all(v["contractive"] for v in result.values()):
            ctx.record(command, {"result": result})
            raise NotContractive("learned operator is not contractive")
    elif command == "solve-pde":
        if not pde:
            raise ConfigError("solve-pde needs a pfnn_2d config")
        result = solve_pde(ctx, model_dir, data_dir, use_true)
    else:
        raise ConfigError(f"unknown command {command!r}")
    ctx.record(command, {"result": result})
    ctx.write_json(f"provenance/{command}_timing.json", {"wall_time_seconds": time.perf_counter() - start})
    return result
