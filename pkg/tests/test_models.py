import numpy as np
import pytest
from hypothesis import given, strategies as st

from fredino import autodiff as ad
from fredino.errors import FormatVersionMismatch, InvalidWidths, ShapeMismatch
from fredino.models import (KernelSurrogate, MlpModel, NonlinearitySurrogate, kernel_eval_grid, load_model,
                            mlp_forward, mlp_forward_jvp, mlp_init, pair_inputs, save_model)


def test_init_is_deterministic_and_glorot_bounded():
    a, b = mlp_init([2, 64, 1], "tanh", 7), mlp_init([2, 64, 1], "tanh", 7)
    for p, q in zip(a.parameters(), b.parameters()):
        assert np.array_equal(p, q)
    assert np.abs(a.weights[0]).max() <= np.sqrt(6.0 / 66)
    assert not a.biases[0].any()


def test_parameter_counts():
    assert mlp_init([2, 64, 1]).n_params() == 257
    assert len(mlp_init([20, 128, 128, 64, 1], "silu").weights) == 4


def test_init_options_override_first_and_last_layer():
    m = mlp_init([2, 16, 1], "tanh", 0, first_layer_scale=10.0, last_layer_gain=0.1)
    base = mlp_init([2, 16, 1], "tanh", 0)
    assert np.abs(m.weights[0]).max() > np.sqrt(6.0 / 18)
    assert np.abs(m.biases[0]).max() > 0
    assert np.abs(m.weights[0]).max() <= 10.0
    assert not np.array_equal(m.weights[-1], base.weights[-1])


@pytest.mark.parametrize("widths", [[1], [2, 0, 1], []])
def test_invalid_widths(widths):
    with pytest.raises(InvalidWidths):
        mlp_init(widths)


def test_bad_activation():
    with pytest.raises(ValueError):
        mlp_init([1, 2, 1], "gelu")


def test_zero_model_gives_zero_output():
    m = mlp_init([3, 8, 8, 1], "silu", 1)
    for p in m.parameters():
        p[...] = 0.0
    assert not mlp_forward(m, np.ones((5, 3))).data.any()


def test_single_linear_layer_hand_example():
    m = MlpModel([2, 1], "tanh", 0, [np.array([[2.0], [0.0]])], [np.array([[1.0]])])
    assert mlp_forward(m, [[3.0, 5.0]]).item() == 7.0


def test_shape_checks():
    m = mlp_init([2, 4, 1])
    with pytest.raises(ShapeMismatch):
        mlp_forward(m, np.ones((3, 3)))
    with pytest.raises(InvalidWidths):
        KernelSurrogate(mlp_init([3, 4, 1]))
    with pytest.raises(InvalidWidths):
        NonlinearitySurrogate(mlp_init([2, 4, 1]))


@given(seed=st.integers(0, 10_000))
def test_batched_equals_unbatched(seed):
    rng = np.random.default_rng(seed)
    m = mlp_init([2, 16, 1], "tanh", seed)
    X = rng.uniform(0, 1, (7, 2))
    batch = mlp_forward(m, X).data
    single = np.vstack([mlp_forward(m, X[i:i + 1]).data for i in range(7)])
    np.testing.assert_allclose(batch, single, rtol=0, atol=1e-15)


def test_antisymmetric_tanh_fixture():
    m = mlp_init([2, 8, 1], "tanh", 3)
    x = np.random.default_rng(0).uniform(-1, 1, (4, 2))
    # zero biases: the network is odd
    np.testing.assert_allclose(mlp_forward(m, -x).data, -mlp_forward(m, x).data, atol=1e-15)


def test_kernel_eval_grid_rows_match_pair_forward():
    k = KernelSurrogate.create(1, [8], "tanh", 2)
    X = np.linspace(0, 1, 5).reshape(-1, 1)
    Z = np.linspace(0, 1, 3).reshape(-1, 1)
    K = kernel_eval_grid(k, X, Z).data
    assert K.shape == (5, 3)
    for i in range(5):
        row = mlp_forward(k.mlp, pair_inputs(X[i:i + 1], Z)).data.ravel()
        np.testing.assert_allclose(K[i], row, rtol=1e-14, atol=1e-16)
    with pytest.raises(ShapeMismatch):
        kernel_eval_grid(k, np.ones((2, 2)), Z)


def test_kernel_with_zero_parameters_is_zero_matrix():
    k = KernelSurrogate.create(2, [4], "relu")
    for p in k.mlp.parameters():
        p[...] = 0.0
    assert not kernel_eval_grid(k, np.ones((3, 2)), np.ones((4, 2))).data.any()


def test_nonlinearity_applies_elementwise():
    G = NonlinearitySurrogate.create([6], "silu", 4)
    U = np.random.default_rng(1).uniform(-1, 1, (3, 2))
    out = G(U).data
    for i, j in np.ndindex(U.shape):
        assert out[i, j] == pytest.approx(G(np.array([[U[i, j]]])).item(), abs=1e-15)


@pytest.mark.parametrize("act", ["tanh", "silu", "relu"])
def test_jvp_matches_finite_differences(act):
    m = mlp_init([4, 10, 10, 1], act, 5)
    rng = np.random.default_rng(2)
    X = rng.uniform(-1, 1, (6, 4))
    dX = rng.uniform(-1, 1, (6, 4))
    _, d = mlp_forward_jvp(m, X, dX)
    h = 1e-6
    fd = (mlp_forward(m, X + h * dX).data - mlp_forward(m, X - h * dX).data) / (2 * h)
    np.testing.assert_allclose(d.data, fd, rtol=1e-5, atol=1e-7)


def test_jvp_is_differentiable_in_parameters():
    m = mlp_init([4, 5, 1], "tanh", 0)
    X = np.random.default_rng(0).uniform(-1, 1, (3, 4))
    dX = np.ones((3, 4))

    def loss(p):
        return ad.sum(ad.square(mlp_forward_jvp(m, X, dX, p)[1]))

    assert ad.grad_check(loss, [q.copy() for q in m.parameters()]) <= 1e-6


def test_save_load_round_trip(tmp_path):
    m = mlp_init([2, 5, 3, 1], "silu", 11)
    m.weights[0][0, 0] = np.nextafter(1.0, 2.0)
    save_model(tmp_path / "m.bin", m, {"note": "x"})
    back, meta = load_model(tmp_path / "m.bin")
    assert meta == {"note": "x"}
    assert back.widths == m.widths and back.activation == "silu" and back.init_seed == 11
    for p, q in zip(m.parameters(), back.parameters()):
        assert np.array_equal(p, q)


def test_load_rejects_bad_files(tmp_path):
    (tmp_path / "bad.bin").write_bytes(b"NOTAMODEL" + b"\x00" * 20)
    with pytest.raises(FormatVersionMismatch):
        load_model(tmp_path / "bad.bin")
    m = mlp_init([1, 2, 1])
    save_model(tmp_path / "m.bin", m)
    raw = (tmp_path / "m.bin").read_bytes()
    (tmp_path / "short.bin").write_bytes(raw[:-8])
    with pytest.raises(FormatVersionMismatch):
        load_model(tmp_path / "short.bin")
    with pytest.raises(OSError):
        load_model(tmp_path / "missing.bin")
