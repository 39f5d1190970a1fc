import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fredino import datagen as dg
from fredino.errors import DegenerateConstantInput, FormatVersionMismatch, ShapeMismatch, UnknownKind
from fredino.fredholm import FredholmNetConfig, assemble, forward_linear
from fredino.quadrature import sobol_points, uniform_grid


def zero_params(d=1, a0=0.7):
    p = dg.GFunctionParams.draw(np.random.default_rng(0), d)
    p.w[:] = 0.0
    p.amp[:] = 0.0
    p.a[:] = 0.0
    p.a[0] = a0
    return p


def test_constant_input_function():
    np.testing.assert_allclose(dg.sample_g(zero_params(), np.linspace(0, 1, 9)), 0.7, rtol=1e-15)


def test_input_function_term_counts_and_ranges():
    p = dg.GFunctionParams.draw(dg.sample_rng(3, 0), 4)
    assert p.w.shape == (200, 4) and p.amp.shape == (10, 4) and p.a.shape == (4, 4)
    assert p.s.min() >= 0 and p.s.max() <= 50
    assert p.freq.min() >= 0.5 and p.freq.max() <= 8
    assert np.abs(p.amp).max() <= 0.5


def test_input_function_matches_direct_formula_1d():
    p = dg.GFunctionParams.draw(dg.sample_rng(1, 2), 1)
    x = np.linspace(0, 1, 7)
    ref = np.zeros_like(x)
    for w, s, c in zip(p.w[:, 0], p.s[:, 0], p.c[:, 0]):
        ref += w * np.exp(-s * (x - c) ** 2)
    ref += sum(p.a[k, 0] * x ** k for k in range(4))
    for A, f, ph in zip(p.amp[:, 0], p.freq[:, 0], p.phase[:, 0]):
        ref += A * np.sin(2 * np.pi * f * x + ph)
    np.testing.assert_allclose(dg.sample_g(p, x), ref, rtol=1e-12, atol=1e-12)


def test_sampling_is_deterministic_and_index_independent():
    grid = uniform_grid(0, 1, 50)
    a, _ = dg.make_inputs(grid, 5, 9, "none")
    b, _ = dg.make_inputs(grid, 5, 9, "none")
    assert np.array_equal(a, b)
    tail, _ = dg.make_inputs(grid, 2, 9, "none", first_index=3)
    assert np.array_equal(a[3:], tail)
    with pytest.raises(ShapeMismatch):
        dg.sample_g(zero_params(2), np.ones((3, 1)))
    with pytest.raises(UnknownKind):
        dg.make_inputs(grid, 1, 0, "log")


def test_center_normalize_examples():
    grid = uniform_grid(0, 1, 1000)
    with pytest.raises(DegenerateConstantInput):
        dg.center_normalize(np.full(1000, 5.0), grid.weights)
    x = grid.nodes[:, 0]
    # the midpoint rule integrates x and x^2 with O(h^2) error
    np.testing.assert_allclose(dg.center_normalize(x, grid.weights), np.sqrt(12) * (x - 0.5), atol=1e-5)


@given(seed=st.integers(0, 10_000))
def test_center_normalize_properties(seed):
    grid = sobol_points(2, 128, seed)
    g = dg.sample_g(dg.GFunctionParams.draw(dg.sample_rng(seed, 0), 2), grid.nodes)
    h = dg.center_normalize(g, grid.weights)
    assert abs(grid.weights @ h) <= 1e-12
    assert abs(np.sqrt(grid.weights @ (h * h)) - 1) <= 1e-12
    np.testing.assert_allclose(dg.center_normalize(h, grid.weights), h, atol=1e-14)


def test_affine_scale_is_seeded():
    g = np.linspace(-1, 1, 5)
    out, alpha, beta = dg.affine_scale(g, 4, 2)
    np.testing.assert_allclose(out, alpha * g + beta, rtol=1e-15)
    assert -1 <= alpha <= 1 and -1 <= beta <= 1
    assert dg.affine_scale(g, 4, 2)[1:] == (alpha, beta)
    assert dg.affine_scale(g, 4, 3)[1:] != (alpha, beta)


def test_boundary_scale_sets_sup_norm():
    g = np.sin(np.linspace(0, 6, 40))
    out, amp = dg.boundary_scale(g, 0, 0)
    assert 0.05 <= amp <= 2.0
    assert np.abs(out).max() == pytest.approx(amp, rel=1e-14)


def test_kernel_point_values():
    hd = dg.TrueKernelSpec("hd_gauss_cosine", dim=10, scale=2.0)
    x = np.full(10, 0.3)
    assert dg.true_kernel_eval(hd, x, x) == pytest.approx(1.5 * 2.0, rel=1e-15)
    assert dg.true_kernel_eval(dg.TrueKernelSpec("ex1_cosines", scale=0.3), 0.4, 0.4) == pytest.approx(0.6)
    rbf = dg.TrueKernelSpec("gauss_rbf", scale=1.7)
    assert dg.true_kernel_eval(rbf, 0.1, 0.3) == pytest.approx(1.7 * np.exp(-0.5), rel=1e-14)
    with pytest.raises(UnknownKind):
        dg.TrueKernelSpec("laplace")


def test_hd_kernel_parameters():
    hd = dg.TrueKernelSpec("hd_gauss_cosine", dim=10)
    np.testing.assert_allclose(hd.alphas[[0, -1]], [1.5, 3.5])
    assert np.linalg.norm(hd.omega) == pytest.approx(6 / np.sqrt(10), rel=1e-14)
    x, z = np.random.default_rng(0).uniform(0, 1, (2, 10))
    ref = np.exp(-np.sum(hd.alphas * (x - z) ** 2)) * (1 + 0.5 * np.cos(hd.omega @ (x - z)))
    assert dg.true_kernel_eval(hd, x, z) == pytest.approx(ref, rel=1e-14)


def test_kernel_spec_round_trip_and_calibration():
    grid = uniform_grid(0, 1, 40)
    spec = dg.calibrate_kernel(dg.TrueKernelSpec("ex1_cosines", calibration=(0.5, "inf_row_sum")), grid)
    W = spec.matrix(grid.nodes, grid.nodes) * grid.weights
    assert np.abs(W).sum(axis=1).max() == pytest.approx(0.5, rel=1e-10)
    assert dg.TrueKernelSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


def test_two_peak_nonlinearity():
    assert dg.true_G_eval(0.40) == pytest.approx(0.25 + 0.25 * np.exp(-0.5 * (0.8 / 0.15) ** 2), rel=1e-15)
    assert dg.true_G_eval(0.40) == pytest.approx(0.25, abs=1e-6)
    u = np.linspace(-3, 3, 101)
    assert dg.true_G_eval(u).max() <= 0.5
    np.testing.assert_allclose(dg.true_G_tensor(u).data.ravel(), dg.true_G_eval(u), rtol=1e-14)
    literal = dg.true_G_eval(0.0, squared=False)
    assert literal == pytest.approx(0.25 * np.exp(0.8) + 0.25 * np.exp(-0.5 * 0.4 / 0.15))


def test_zero_kernel_dataset_is_identity():
    grid = uniform_grid(0, 1, 30)
    ds = dg.generate_dataset(dg.DatasetConfig(grid, dg.TrueKernelSpec("constant", scale=0.0), 3, 0))
    np.testing.assert_array_equal(ds.f, ds.g)


def test_linear_dataset_residual_and_forward_cross_check():
    grid = uniform_grid(0, 1, 60)
    spec = dg.calibrate_kernel(dg.TrueKernelSpec("ex1_cosines", calibration=(0.5, "inf_row_sum")), grid)
    ds = dg.generate_dataset(dg.DatasetConfig(grid, spec, 6, 1))
    K = spec.matrix(grid.nodes, grid.nodes)
    Wt = K * grid.weights
    assert np.abs(ds.f - ds.g - ds.f @ Wt.T).max() <= 1e-9
    cfg = FredholmNetConfig(60)
    f_net = forward_linear(ds.g.T, assemble(K, grid, cfg), cfg).values.data.T
    assert np.abs(f_net - ds.f).max() <= 1e-10


def test_nonlinear_dataset_residual():
    grid = uniform_grid(0, 1, 50)
    spec = dg.calibrate_kernel(dg.TrueKernelSpec("gauss_rbf", calibration=(0.7, "spectral")), grid)
    ds = dg.generate_dataset(dg.DatasetConfig(grid, spec, 4, 2, transform="affine", nonlinear=True))
    Wt = spec.matrix(grid.nodes, grid.nodes) * grid.weights
    assert np.abs(ds.f - ds.g - dg.true_G_eval(ds.f) @ Wt.T).max() <= 1e-9
    assert [e["index"] for e in ds.provenance["transform_log"]] == [0, 1, 2, 3]


def test_dataset_files_are_byte_identical(tmp_path):
    grid = sobol_points(3, 32, 1)
    spec = dg.calibrate_kernel(dg.TrueKernelSpec("hd_gauss_cosine", dim=3, calibration=(0.5, "inf_row_sum")),
                               grid)
    for name in ("a", "b"):
        dg.save_dataset(tmp_path / name, dg.generate_dataset(dg.DatasetConfig(grid, spec, 3, 7)))
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    back = dg.load_dataset(tmp_path / "a")
    assert np.array_equal(back.grid.nodes, grid.nodes)
    assert back.provenance["kernel"]["dim"] == 3


def test_load_rejects_wrong_version(tmp_path):
    grid = uniform_grid(0, 1, 8)
    dg.save_dataset(tmp_path, dg.generate_dataset(dg.DatasetConfig(grid, dg.TrueKernelSpec("constant", scale=0.1),
                                                                  2, 0)))
    manifest = next(p for p in tmp_path.iterdir() if p.suffix == ".json")
    data = json.loads(manifest.read_text())
    data["format_version"] = 99
    manifest.write_text(json.dumps(data))
    with pytest.raises(FormatVersionMismatch):
        dg.load_dataset(tmp_path)
