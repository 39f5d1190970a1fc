import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, special

from fredino import autodiff as ad
from fredino import metrics
from fredino.errors import CoincidentPoints, InvalidRange, NonPositiveRadius, NotConverged, ShapeMismatch
from fredino.fredholm import FredholmNetConfig
from fredino.models import mlp_init
from fredino.pfnn.kernels import (EULER_GAMMA, PhiModel, k0_reference, k1_reference, log_rectangle_integral,
                                  phi_eval, phi_matrix, phi_normal_derivative, smoothed_k0,
                                  smoothed_k0_derivative)
from fredino.pfnn.solver import PdeProblem, build_operators, picard_pde_solve
from fredino.pfnn.training import (PfnnTrainConfig, boundary_inputs, generate_pfnn_dataset, load_pfnn_dataset,
                                   reconstruction_test, save_pfnn_dataset, solver_test, train_pfnn)
from fredino.training import TrainingConfig


def test_k0_reference_values():
    assert k0_reference(1.0) == pytest.approx(0.42102443824, abs=5e-11)
    r = np.concatenate([np.geomspace(1e-6, 2, 40), np.linspace(2.01, 60, 40)])
    np.testing.assert_allclose(k0_reference(r), special.k0(r), rtol=1e-12)
    np.testing.assert_allclose(k1_reference(r), special.k1(r), rtol=1e-12)


def test_k0_reference_continuous_at_cutoff():
    a, b = k0_reference(np.array([2.0 - 1e-12, 2.0 + 1e-12]))
    assert abs(a - b) <= 1e-11


def test_k0_limits():
    r = 1e-6
    assert k0_reference(r) / (-np.log(r / 2) - EULER_GAMMA) == pytest.approx(1.0, abs=1e-4)
    r = 50.0
    assert k0_reference(r) / (np.sqrt(np.pi / (2 * r)) * np.exp(-r)) == pytest.approx(1.0, abs=1e-2)
    with pytest.raises(NonPositiveRadius):
        k0_reference(0.0)
    with pytest.raises(NonPositiveRadius):
        smoothed_k0(-1.0)


def test_smoothed_k0_printed_formula():
    mpmath.mp.dps = 30
    r = mpmath.mpf("0.01")
    s = 1 / (1 + mpmath.exp(-5 * (r - mpmath.mpf("1.5"))))
    ref = (1 - s) * (-mpmath.log(r / 2) - mpmath.euler) + s * mpmath.sqrt(mpmath.pi / (2 * r)) * mpmath.exp(-r)
    assert smoothed_k0(0.01) == pytest.approx(float(ref), rel=1e-14)
    # blend midpoint: equal weights on both forms
    near, far = -np.log(0.75) - EULER_GAMMA, np.sqrt(np.pi / 3) * np.exp(-1.5)
    assert smoothed_k0(1.5) == pytest.approx(0.5 * (near + far), rel=1e-15)


def test_smoothed_k0_shape():
    for lo, hi in ((1e-3, 1.2), (2.2, 10.0)):
        v = smoothed_k0(np.geomspace(lo, hi, 1000))
        assert np.all(np.diff(v) < 0) and np.all(v > 0)
    # the near form turns negative past 2 exp(-gamma), so the blend dips around its centre
    mid = smoothed_k0(np.linspace(1.2, 2.2, 200))
    assert mid.min() < 0 and np.any(np.diff(mid) > 0)
    near = lambda r: -np.log(0.5 * r) - EULER_GAMMA
    assert smoothed_k0(1e-3) / near(1e-3) == pytest.approx(1.0, abs=5e-3)
    # sigmoid(0) > 0 leaves a sqrt(1/r) term that eventually beats the logarithm
    assert smoothed_k0(1e-8) / near(1e-8) > 1.3
    assert smoothed_k0(40.0) / (np.sqrt(np.pi / 80) * np.exp(-40.0)) == pytest.approx(1.0, rel=1e-12)


@given(r=st.floats(1e-3, 20))
def test_smoothed_k0_derivative_matches_fd(r):
    h = 1e-6 * r
    fd = (smoothed_k0(r + h) - smoothed_k0(r - h)) / (2 * h)
    assert smoothed_k0_derivative(r) == pytest.approx(fd, rel=1e-6, abs=1e-12)


def test_log_rectangle_integral_matches_quadrature():
    for a, b in [(0.1, 0.3), (1.0, 1.0), (0.02, 0.5)]:
        quarter, _ = integrate.dblquad(lambda y, x: 0.5 * np.log(x * x + y * y), 0, a / 2, 0, b / 2,
                                       epsabs=1e-13, epsrel=1e-12)
        ref = 4 * quarter
        assert log_rectangle_integral(a, b) == pytest.approx(ref, rel=1e-8)


def test_phi_model_alpha_and_zero_correction():
    m = PhiModel.create((8,), seed=0)
    assert m.alpha == 0.5
    x, y = np.array([0.1, 0.2]), np.array([0.6, -0.3])
    bare = PhiModel(1.0, "smoothed")
    r = np.linalg.norm(x - y)
    assert phi_eval(bare, x, y) == pytest.approx(-smoothed_k0(r) / (2 * np.pi), rel=1e-15)
    for p in m.correction.parameters():
        p[...] = 0.0
    assert phi_eval(m, x, y) == phi_eval(bare, x, y)
    c = PhiModel.create((8,), seed=1)
    from fredino.models import mlp_forward
    C = mlp_forward(c.correction, np.concatenate([x, y]).reshape(1, 4)).item()
    assert phi_eval(c, x, y) == pytest.approx(phi_eval(bare, x, y) + 0.5 * C, rel=1e-14)
    with pytest.raises(CoincidentPoints):
        phi_eval(bare, x, x)
    with pytest.raises(ShapeMismatch):
        PhiModel(1.0, "smoothed", mlp_init([2, 4, 1]))


@pytest.mark.parametrize("base", ["smoothed", "exact"])
@pytest.mark.parametrize("seed", range(3))
def test_normal_derivative_matches_fd(base, seed):
    rng = np.random.default_rng(seed)
    m = PhiModel.create((8, 8), seed=seed, helmholtz_lambda=2.0, alpha_raw=0.3, base=base)
    x = rng.uniform(-0.5, 0.5, 2)
    theta = rng.uniform(0, 2 * np.pi)
    y = np.array([np.cos(theta), np.sin(theta)])
    h = 1e-6
    fd = (phi_eval(m, x, y + h * y) - phi_eval(m, x, y - h * y)) / (2 * h)
    assert phi_normal_derivative(m, x, y, y) == pytest.approx(fd, rel=1e-5)


def test_phi_matrix_gradient_in_parameters():
    m = PhiModel.create((5,), seed=2)
    X = np.array([[0.1, 0.2], [0.3, -0.4]])
    Y = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])

    def loss(params):
        return ad.sum(ad.square(phi_matrix(m, X, Y, params)))

    assert ad.grad_check(loss, [p.copy() for p in m.parameters()]) <= 1e-6


def analytic_problem(nb, nr=16, nphi=32, lam=1.0):
    return PdeProblem.on_grids(nb, nr, nphi, helmholtz_lambda=lam, psi=None, psi_name="shifted_zero")


def analytic_error(nb, nr=16, nphi=32, lam=1.0):
    p = analytic_problem(nb, nr, nphi, lam)
    s = np.sqrt(lam)
    res = picard_pde_solve(PhiModel(lam, "exact"), p, np.exp(s * p.boundary.nodes[:, 0]), FredholmNetConfig(80, 0.5))
    assert res.iterations == 1 and res.converged
    return metrics.rel_errors(res.u.data.ravel(), np.exp(s * p.interior.nodes[:, 0]), p.interior.weights)[1]


def test_analytic_extension_converges_with_boundary_refinement():
    errs = [analytic_error(nb) for nb in (32, 64, 128, 256)]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert errs[-1] <= 5e-3


def test_constant_boundary_data_reproduces_bessel_i0():
    lam = 2.0
    p = analytic_problem(64, lam=lam)
    res = picard_pde_solve(PhiModel(lam, "exact"), p, np.ones(64), FredholmNetConfig(80, 0.5))
    r = np.hypot(*p.interior.nodes.T)
    exact = special.i0(np.sqrt(lam) * r) / special.i0(np.sqrt(lam))
    assert metrics.rel_errors(res.u.data.ravel(), exact, p.interior.weights)[1] <= 1e-2


def test_problem_validation_and_star_points():
    p = PdeProblem.on_grids(64, 4, 16)
    np.testing.assert_allclose(p.boundary.nodes[p.star_index], p.interior.nodes / np.hypot(*p.interior.nodes.T)[:, None],
                               atol=1e-14)
    with pytest.raises(InvalidRange):
        PdeProblem.on_grids(60, 4, 16)
    assert p.describe()["psi"] == "tanh_source"


def small_problem():
    return PdeProblem.on_grids(32, 6, 16)


def test_picard_solver_contracts_with_true_kernel():
    p = small_problem()
    g, _ = boundary_inputs(p.boundary, 3, 0)
    res = picard_pde_solve(PhiModel(1.0, "exact"), p, g.T, FredholmNetConfig(40, 0.5), outer_iters=100, tol=1e-10)
    assert res.converged
    assert all(r < 1 for r in res.ratios)
    assert res.bie_report is not None and all(r < 1 for r in res.bie_report.ratios_from(3))
    with pytest.raises(NotConverged) as info:
        picard_pde_solve(PhiModel(1.0, "exact"), p, g.T, FredholmNetConfig(40, 0.5), outer_iters=2, tol=1e-14)
    assert info.value.last_iterate.shape == (p.interior.n, 3)


def test_linear_source_matches_direct_representation():
    # psi~ = -lam u + c does not depend on u, so one outer step is the exact answer
    lam, c = 1.0, 0.7
    p = PdeProblem.on_grids(32, 6, 16, helmholtz_lambda=lam, psi=lambda u, X: u * lam + c, psi_name="affine")
    g = np.cos(np.arange(32))
    m = PhiModel(lam, "exact")
    res = picard_pde_solve(m, p, g, FredholmNetConfig(80, 0.5), outer_iters=20, tol=1e-10)
    assert res.iterations <= 2
    ops = build_operators(m, p)
    A = np.eye(32) + 2 * ops.double_layer.data * p.boundary.weights
    rhs = 2 * g - 2 * ops.volume_boundary.data @ np.full(p.interior.n, c)
    beta = np.linalg.solve(A, rhs)
    bs = beta[ops.star]
    u = (ops.regularized.data @ beta - ops.regularized_rowsum.data.ravel() * bs + ops.star_coefficient.data.ravel() * bs
         + ops.star_double_layer.data @ beta + ops.volume_interior.data @ np.full(p.interior.n, c))
    assert np.abs(res.u.data.ravel() - u).max() <= 1e-8


def test_boundary_inputs_amplitudes():
    p = small_problem()
    g, log = boundary_inputs(p.boundary, 6, 3)
    amps = np.array([e["amplitude"] for e in log])
    np.testing.assert_allclose(np.abs(g).max(axis=1), amps, rtol=1e-14)
    assert amps.min() >= 0.05 and amps.max() <= 2.0
    assert np.abs(g @ p.boundary.weights).max() <= 1e-12


def test_dataset_round_trip_and_true_model_floor(tmp_path):
    p = small_problem()
    ds = generate_pfnn_dataset(p, 3, 1, tol=1e-12)
    save_pfnn_dataset(tmp_path / "d", ds)
    back = load_pfnn_dataset(tmp_path / "d")
    assert np.array_equal(back.u, ds.u) and np.array_equal(back.g, ds.g)
    recon = reconstruction_test(PhiModel(1.0, "exact"), ds, FredholmNetConfig(80, 0.5))
    assert max(r.rel_l2 for r in recon) <= 1e-9
    solve = solver_test(PhiModel(1.0, "exact"), ds, FredholmNetConfig(80, 0.5), outer_iters=100, tol=1e-12)
    assert solve.converged and max(r.rel_l2 for r in solve.records) <= 1e-9


def test_train_pfnn_reduces_loss_and_is_deterministic():
    p = small_problem()
    ds = generate_pfnn_dataset(p, 4, 2)
    m = PhiModel.create((8,), "tanh", 0)
    cfg = PfnnTrainConfig(TrainingConfig(6, lr=1e-3), outer_iters=3, bie=FredholmNetConfig(20, 0.5))
    m1, rep1 = train_pfnn(m, ds, cfg)
    _, rep2 = train_pfnn(m, ds, cfg)
    assert rep1.loss_curve == rep2.loss_curve and len(rep1.loss_curve) == 6
    assert rep1.final_loss < rep1.loss_curve[0]
    assert rep1.alpha_curve[0] == 0.5 and m1.alpha != 0.5
    assert m.alpha_raw[0, 0] == 0.0
    with pytest.raises(ValueError):
        train_pfnn(PhiModel(1.0, "smoothed"), ds, cfg)
