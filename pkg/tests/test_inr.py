import json

import numpy as np
import pytest

from rino import jsonio
from rino.errors import DegenerateBasis, ShapeMismatch
from rino.inr import (
    MlpParams,
    MlpSpec,
    freeze_scale,
    init_mlp,
    mlp_forward,
    mlp_from_dict,
    mlp_param_grads,
    mlp_to_dict,
)
from rino.numerics import RngState, finite_diff_grad


def test_init_bounds_follow_omega0():
    spec = MlpSpec(1, 1, (20,), "sine", 5.0)
    for seed in range(5):
        p = init_mlp(spec, RngState(seed))
        assert np.max(np.abs(p.weights[0])) <= 5.0 * np.sqrt(6.0)
        assert np.max(np.abs(p.weights[1])) <= np.sqrt(6.0 / 20)
    # the bound is actually approached, so the first layer really uses omega0
    assert np.max(np.abs(p.weights[0])) > np.sqrt(6.0)


@pytest.mark.parametrize("activation", ["sine", "relu", "tanh", "identity"])
def test_init_biases_zero(activation):
    p = init_mlp(MlpSpec(2, 3, (7, 5), activation, 3.0), RngState(1))
    assert all(np.all(b == 0.0) for b in p.biases)


def test_init_deterministic():
    spec = MlpSpec(1, 1, (8, 8), "sine", 5.0)
    a = init_mlp(spec, RngState(4)).flatten()
    b = init_mlp(spec, RngState(4)).flatten()
    assert a.tobytes() == b.tobytes()


def test_relu_init_uses_unit_omega():
    p = init_mlp(MlpSpec(4, 1, (6,), "relu", 30.0), RngState(2))
    assert np.max(np.abs(p.weights[0])) <= np.sqrt(6.0 / 4)


def test_forward_constant_from_last_bias():
    spec = MlpSpec(1, 1, (4,), "sine", 5.0)
    p = init_mlp(spec, RngState(0))
    p.weights = [np.zeros_like(W) for W in p.weights]
    p.biases[-1] = np.array([2.5])
    np.testing.assert_array_equal(mlp_forward(spec, p, np.linspace(0, 1, 6)), np.full((6, 1), 2.5))


def test_forward_single_sine_unit():
    w, a = 3.0, 1.7
    spec = MlpSpec(1, 1, (1,), "sine", 1.0)
    p = MlpParams([np.array([[w]]), np.array([[a]])], [np.zeros(1), np.zeros(1)])
    out = mlp_forward(spec, p, np.array([0.0, np.pi / (2 * w)]))[:, 0]
    np.testing.assert_allclose(out, [0.0, a], atol=1e-15)


def straight_line_forward(p, X, act):
    """Evaluate one point at a time with explicit loops over neurons."""
    out = []
    for x in X:
        h = list(x)
        for m, (W, b) in enumerate(zip(p.weights, p.biases)):
            z = [sum(W[i, j] * h[j] for j in range(len(h))) + b[i] for i in range(W.shape[0])]
            h = z if m == len(p.weights) - 1 else [act(v) for v in z]
        out.append(h)
    return np.array(out)


def test_forward_matches_straight_line_oracle():
    spec = MlpSpec(2, 3, (6, 5), "sine", 4.0)
    p = init_mlp(spec, RngState(8))
    p.biases = [np.random.default_rng(m).uniform(-1, 1, b.shape) for m, b in enumerate(p.biases)]
    X = np.random.default_rng(9).uniform(0, 1, (5, 2))
    ref = straight_line_forward(p, X, np.sin)
    assert np.max(np.abs(mlp_forward(spec, p, X) - ref)) <= 1e-14


def test_forward_shape_mismatch():
    spec = MlpSpec(2, 1, (3,), "tanh")
    with pytest.raises(ShapeMismatch):
        mlp_forward(spec, init_mlp(spec, RngState(0)), np.zeros((4, 3)))


def test_forward_finite_over_init_distribution():
    X = np.linspace(-1, 1, 33)[:, None]
    for seed in range(1000):
        spec = MlpSpec(1, 1, (20, 20), "sine", 30.0)
        assert np.all(np.isfinite(mlp_forward(spec, init_mlp(spec, RngState(seed)), X)))


def test_grads_zero_weights():
    spec = MlpSpec(1, 2, (5,), "sine", 5.0)
    p = init_mlp(spec, RngState(0))
    g = mlp_param_grads(spec, p, np.linspace(0, 1, 7), np.zeros((7, 2)))
    assert np.all(g.flatten() == 0.0)


def test_grads_linear_layer():
    spec = MlpSpec(3, 1, (), "identity")
    p = init_mlp(spec, RngState(1))
    X = np.random.default_rng(2).standard_normal((10, 3))
    r = np.random.default_rng(3).standard_normal(10)
    g = mlp_param_grads(spec, p, X, r)
    np.testing.assert_allclose(g.weights[0], (r[:, None] * X).sum(axis=0)[None, :], rtol=1e-14)
    np.testing.assert_allclose(g.biases[0], [r.sum()], rtol=1e-14)


@pytest.mark.parametrize("activation", ["sine", "relu", "tanh", "identity"])
def test_grads_match_central_differences(activation):
    spec = MlpSpec(2, 2, (6, 5), activation, 5.0 if activation == "sine" else 1.0)
    p = init_mlp(spec, RngState(5))
    rng = np.random.default_rng(6)
    p.biases = [rng.uniform(-0.5, 0.5, b.shape) for b in p.biases]
    X = rng.uniform(0, 1, (9, 2))
    R = rng.standard_normal((9, 2))
    flat = p.flatten()

    def f(theta):
        return float(np.sum(R * mlp_forward(spec, MlpParams.from_flat(spec, theta), X)))

    analytic = mlp_param_grads(spec, p, X, R).flatten()
    idx = rng.choice(flat.size, size=12, replace=False)
    for i in idx:
        num = finite_diff_grad(lambda t: f(np.concatenate([flat[:i], t, flat[i + 1 :]])), flat[i : i + 1], 1e-5)[0]
        # absolute floor for entries whose true value is ~0 (e.g. dead relu units)
        assert abs(num - analytic[i]) <= 1e-5 * max(abs(analytic[i]), 1e-2)


def test_grads_account_for_frozen_scale():
    spec = MlpSpec(1, 1, (4,), "sine", 5.0)
    p = init_mlp(spec, RngState(2))
    X = np.linspace(0, 1, 5)
    frozen = p.copy()
    frozen.output_scale = 4.0
    np.testing.assert_allclose(
        mlp_param_grads(spec, frozen, X, np.ones(5)).flatten(),
        mlp_param_grads(spec, p, X, np.ones(5)).flatten() / 4.0,
        rtol=1e-15,
    )


def test_freeze_constant_net():
    spec = MlpSpec(1, 1, (3,), "sine")
    p = init_mlp(spec, RngState(0))
    p.weights = [np.zeros_like(W) for W in p.weights]
    p.biases[-1] = np.array([3.0])
    f = freeze_scale(spec, p, np.linspace(0, 1, 11))
    assert f.output_scale == pytest.approx(3.0, rel=1e-15)
    np.testing.assert_allclose(mlp_forward(spec, f, np.linspace(0, 1, 4)), 1.0, rtol=1e-15)


def test_freeze_sine_scale():
    spec = MlpSpec(1, 1, (1,), "sine")
    p = MlpParams([np.array([[2 * np.pi]]), np.array([[1.0]])], [np.zeros(1), np.zeros(1)])
    X = np.linspace(0, 1, 10_000)
    f = freeze_scale(spec, p, X)
    assert abs(f.output_scale - np.sqrt(0.5)) <= 1e-3
    assert abs(np.mean(mlp_forward(spec, f, X) ** 2) - 1.0) <= 1e-12


def test_freeze_commutes_with_forward():
    spec = MlpSpec(1, 1, (10, 10), "sine", 5.0)
    p = init_mlp(spec, RngState(3))
    X = np.linspace(0, 1, 200)
    f = freeze_scale(spec, p, X)
    assert np.array_equal(mlp_forward(spec, f, X), mlp_forward(spec, p, X) / f.output_scale)


def test_freeze_dead_basis():
    spec = MlpSpec(1, 1, (3,), "sine")
    p = init_mlp(spec, RngState(0))
    p.weights[-1][:] = 0.0
    with pytest.raises(DegenerateBasis):
        freeze_scale(spec, p, np.linspace(0, 1, 5))


def test_json_round_trip_is_bit_exact():
    spec = MlpSpec(2, 1, (4, 3), "tanh")
    p = init_mlp(spec, RngState(7))
    p.output_scale = 0.1 + 0.2
    text = jsonio.dumps(mlp_to_dict(spec, p))
    spec2, p2 = mlp_from_dict(json.loads(text))
    assert spec2 == spec
    assert p2.flatten().tobytes() == p.flatten().tobytes()
    assert p2.output_scale == p.output_scale
