import copy

import numpy as np
import pytest

from rino.dictionary import BasisFunction, Dictionary, Embedding, PointCloudSignal, project
from rino.errors import FingerprintMismatch, MissingGamma, OffGridQuery, RankDeficient, ShapeMismatch, ZeroSignal
from rino.inr import MlpParams, MlpSpec, init_mlp
from rino.numerics import RngState
from rino.operator import (
    DeepOnetModel,
    OperatorSample,
    TrainConfig,
    Trunk,
    evaluate_model,
    make_model,
    pod_modes,
    predict,
    relative_mse,
    train_predefined_trunk,
    train_unknown_trunk,
)

FP = "input-dictionary"


def network_trunk(p, seed=0, hidden=(8,)):
    spec = MlpSpec(1, p, hidden, "sine", 3.0)
    return Trunk("network", spec=spec, params=init_mlp(spec, RngState(seed)))


def cosine_trunk(p):
    atoms = [BasisFunction.constant()] + [BasisFunction.analytic("cosine", w=[np.pi * k], b=0.0) for k in range(1, p)]
    return Trunk("dictionary", dictionary=Dictionary.unit(1, atoms))


# relative_mse


def test_rel_mse_identical():
    assert relative_mse([1.0, -3.0, 2.0], [1.0, -3.0, 2.0]) == 0.0


def test_rel_mse_hand_value():
    assert relative_mse([1.0, 2.0], [1.0, 0.0]) == 0.5


def test_rel_mse_scale_invariant():
    rng = np.random.default_rng(0)
    v, p = rng.standard_normal(20), rng.standard_normal(20)
    assert relative_mse(10 * v, 10 * p) == pytest.approx(relative_mse(v, p), rel=1e-14)


def test_rel_mse_errors():
    with pytest.raises(ZeroSignal):
        relative_mse([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(ShapeMismatch):
        relative_mse([1.0, 2.0], [1.0])


# predict


def test_predict_zero_branch():
    trunk = network_trunk(4)
    spec = MlpSpec(3, 4, (5,), "relu")
    params = init_mlp(spec, RngState(1))
    params.weights[-1][:] = 0.0
    model = DeepOnetModel(trunk, FP, spec, params)
    np.testing.assert_array_equal(predict(model, Embedding([0.3, -1.0, 2.0], FP), np.linspace(0, 1, 6)), np.zeros(6))


def test_predict_single_mode():
    trunk = Trunk("dictionary", dictionary=Dictionary.unit(1, [BasisFunction.analytic("monomial", degree=1)]))
    model = DeepOnetModel(trunk, FP)
    Y = np.linspace(0, 1, 5)
    np.testing.assert_allclose(predict(model, Embedding([1.0], FP), Y), Y, rtol=1e-15)


def test_predict_matches_double_loop():
    trunk = network_trunk(5, seed=2, hidden=(6, 6))
    model = make_model(trunk, FP, RngState(3), MlpSpec(4, 5, (7,), "tanh"))
    alpha = Embedding(np.random.default_rng(4).standard_normal(4), FP)
    Y = np.random.default_rng(5).uniform(0, 1, 7)
    b = model.branch(alpha.coeffs[None, :])[0]
    T = trunk.evaluate(Y)
    ref = np.array([sum(b[k] * T[j, k] for k in range(5)) for j in range(7)])
    got = predict(model, alpha, Y)
    assert np.max(np.abs(got - ref)) <= 1e-14
    # the same prediction as one matrix product
    assert np.max(np.abs(got - T @ b)) <= 1e-14


def test_predict_fingerprint_mismatch():
    model = DeepOnetModel(cosine_trunk(2), FP)
    with pytest.raises(FingerprintMismatch):
        predict(model, Embedding([1.0, 2.0], "other"), [0.5])


def test_identity_branch_width_check():
    model = DeepOnetModel(cosine_trunk(3), FP)
    with pytest.raises(ShapeMismatch):
        predict(model, Embedding([1.0, 2.0], FP), [0.5])
    with pytest.raises(ShapeMismatch):
        DeepOnetModel(cosine_trunk(3), FP, MlpSpec(2, 4, (3,), "relu"), None)


def test_pod_trunk_off_grid():
    grid = np.linspace(0, 1, 5)
    trunk = Trunk("pod", grid=grid, modes=np.eye(5)[:, :2])
    model = DeepOnetModel(trunk, FP)
    np.testing.assert_array_equal(predict(model, Embedding([2.0, 3.0], FP), grid[:2]), [2.0, 3.0])
    with pytest.raises(OffGridQuery):
        predict(model, Embedding([2.0, 3.0], FP), [0.3])


def test_pod_trunk_mean_offset():
    grid = np.linspace(0, 1, 4)
    trunk = Trunk("pod", grid=grid, modes=np.eye(4)[:, :1], mean=np.full(4, 10.0))
    out = predict(DeepOnetModel(trunk, FP), Embedding([1.0], FP), grid)
    np.testing.assert_array_equal(out, [11.0, 10.0, 10.0, 10.0])


def test_model_json_round_trip(tmp_path):
    model = make_model(network_trunk(3), FP, RngState(0), MlpSpec(2, 3, (4,), "relu"))
    model.embed_min, model.embed_max = np.array([0.0, -1.0]), np.array([1.0, 2.0])
    path = tmp_path / "m.json"
    model.save(path)
    loaded = DeepOnetModel.load(path)
    Y = np.linspace(0, 1, 9)
    alpha = Embedding([0.2, 0.7], FP)
    assert np.array_equal(predict(loaded, alpha, Y), predict(model, alpha, Y))
    pod = DeepOnetModel(Trunk("pod", grid=np.linspace(0, 1, 3), modes=np.eye(3)[:, :2], mean=np.ones(3)), FP)
    pod.save(path)
    assert np.array_equal(predict(DeepOnetModel.load(path), Embedding([1.0, 2.0], FP), [0.5]), [3.0])


# training


def planted_dataset(n, seed):
    """Outputs produced by a random DeepONet whose parameters are then discarded."""
    rng = np.random.default_rng(seed)
    teacher = make_model(network_trunk(3, seed=seed + 100), FP, RngState(seed + 200), MlpSpec(2, 3, (6,), "tanh"))
    Y = np.linspace(0, 1, 25)
    samples = []
    for _ in range(n):
        alpha = Embedding(rng.uniform(-1, 1, 2), FP)
        samples.append(OperatorSample(alpha, Y, predict(teacher, alpha, Y)))
    return samples


def test_planted_model_is_learned():
    samples = planted_dataset(30, 0)
    model = make_model(network_trunk(3, seed=9), FP, RngState(10), MlpSpec(2, 3, (6,), "tanh"))
    _, trace = train_unknown_trunk(samples, model, TrainConfig(lr=1e-2, epochs=2000))
    assert min(trace.losses) <= 1e-3 * trace.losses[0]
    assert np.mean(evaluate_model(model, samples)) <= 1e-3 * trace.losses[0]


def test_zero_outputs():
    Y = np.linspace(0, 1, 10)
    rng = np.random.default_rng(1)
    samples = [OperatorSample(Embedding(rng.standard_normal(2), FP), Y, np.zeros(10)) for _ in range(5)]
    model = make_model(network_trunk(3), FP, RngState(0), MlpSpec(2, 3, (4,), "tanh"))
    _, trace = train_unknown_trunk(samples, model, TrainConfig(lr=1e-2, epochs=2000))
    assert min(trace.losses) <= 1e-5 * trace.losses[0]
    for s in samples:
        assert np.max(np.abs(predict(model, s.input_embedding, Y))) <= 1e-2


def test_training_is_bitwise_reproducible():
    samples = planted_dataset(10, 3)

    def run():
        model = make_model(network_trunk(3, seed=1), FP, RngState(2), MlpSpec(2, 3, (5,), "tanh"))
        _, trace = train_unknown_trunk(samples, model, TrainConfig(lr=1e-2, epochs=50, batch_size=4, seed=7))
        return model.branch_params.flatten().tobytes() + model.trunk.params.flatten().tobytes(), trace.losses

    assert run() == run()


def test_best_iterate_is_returned():
    samples = planted_dataset(10, 4)
    model = make_model(network_trunk(3, seed=1), FP, RngState(2), MlpSpec(2, 3, (5,), "tanh"))
    _, trace = train_unknown_trunk(samples, model, TrainConfig(lr=3e-2, epochs=200))
    assert np.mean(evaluate_model(model, samples)) == pytest.approx(min(trace.losses), rel=1e-10)


def linear_gamma_dataset(n, seed, tau_trunk):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((tau_trunk.width, 3))
    Y = np.linspace(0, 1, 30)
    samples = []
    for _ in range(n):
        a = rng.standard_normal(3)
        g = M @ a
        s = tau_trunk.evaluate(Y) @ g
        samples.append(OperatorSample(Embedding(a, FP), Y, s, Embedding(g, tau_trunk.dictionary.fingerprint)))
    return samples, M


def test_large_tau_recovers_linear_map():
    trunk = cosine_trunk(4)
    samples, M = linear_gamma_dataset(40, 0, trunk)
    spec = MlpSpec(3, 4, (), "identity")
    model = make_model(trunk, FP, RngState(0), spec)
    train_predefined_trunk(samples, model, TrainConfig(lr=1e-2, epochs=3000, tau=1e6))
    np.testing.assert_allclose(model.branch_params.weights[0], M, atol=1e-3)
    for s in samples:
        gbar = model.branch(s.input_embedding.coeffs[None, :])[0]
        assert np.linalg.norm(s.output_embedding.coeffs - gbar) <= 1e-3


def test_zero_tau_equals_prediction_only_training():
    trunk = cosine_trunk(4)
    samples, _ = linear_gamma_dataset(12, 1, trunk)
    spec = MlpSpec(3, 4, (6,), "tanh")
    cfg = TrainConfig(lr=1e-3, epochs=100, tau=0.0, seed=3)
    m1 = make_model(trunk, FP, RngState(5), spec)
    m2 = copy.deepcopy(m1)
    _, t1 = train_predefined_trunk(samples, m1, cfg)
    _, t2 = train_unknown_trunk(samples, m2, cfg)
    assert t1.losses == t2.losses
    assert m1.branch_params.flatten().tobytes() == m2.branch_params.flatten().tobytes()


def test_predefined_requires_gamma_and_frozen_trunk():
    trunk = cosine_trunk(2)
    s = OperatorSample(Embedding([1.0, 0.0], FP), [0.0, 1.0], [1.0, 2.0])
    model = make_model(trunk, FP, RngState(0), MlpSpec(2, 2, (3,), "tanh"))
    with pytest.raises(MissingGamma):
        train_predefined_trunk([s], model, TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        train_predefined_trunk([s], make_model(network_trunk(2), FP, RngState(0)), TrainConfig(epochs=1))


def test_normalization_fitted_on_training_only():
    samples = planted_dataset(15, 5)
    model = make_model(network_trunk(3), FP, RngState(0), MlpSpec(2, 3, (4,), "tanh"))
    train_unknown_trunk(samples, model, TrainConfig(epochs=5, normalize_embeddings=True))
    A = np.stack([s.input_embedding.coeffs for s in samples])
    np.testing.assert_array_equal(model.embed_min, A.min(axis=0))
    np.testing.assert_array_equal(model.embed_max, A.max(axis=0))
    lo, hi = model.embed_min.copy(), model.embed_max.copy()
    evaluate_model(model, planted_dataset(15, 6))
    assert np.array_equal(model.embed_min, lo) and np.array_equal(model.embed_max, hi)


def test_training_rejects_foreign_embeddings():
    s = OperatorSample(Embedding([1.0, 0.0], "other"), [0.0, 1.0], [1.0, 2.0])
    with pytest.raises(FingerprintMismatch):
        train_unknown_trunk([s], make_model(network_trunk(2), FP, RngState(0), MlpSpec(2, 2, (3,), "tanh")), TrainConfig(epochs=1))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(tau=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


def test_dictionary_trunk_end_to_end():
    """Embedding inputs with a dictionary and using it as a frozen trunk."""
    d = cosine_trunk(3).dictionary
    Y = np.linspace(0, 1, 40)
    rng = np.random.default_rng(8)
    samples = []
    for _ in range(20):
        a = rng.standard_normal(3)
        u = a @ np.stack([atom(Y) for atom in d.atoms])
        emb = project(d, PointCloudSignal(Y, u), 0.0)
        samples.append(OperatorSample(emb, Y, 2.0 * u, Embedding(2.0 * emb.coeffs, d.fingerprint)))
    model = make_model(Trunk("dictionary", dictionary=d), d.fingerprint, RngState(0), MlpSpec(3, 3, (), "identity"))
    train_predefined_trunk(samples, model, TrainConfig(lr=1e-2, epochs=2000))
    assert np.mean(evaluate_model(model, samples)) <= 1e-8


# pod_modes


def test_pod_single_snapshot_direction():
    v = np.array([1.0, -2.0, 2.0])
    modes, mean = pod_modes(np.stack([v, v, v]), 1)
    assert mean is None
    np.testing.assert_allclose(np.abs(modes[:, 0]), np.abs(v) / 3.0, rtol=1e-14)
    np.testing.assert_allclose(np.outer(modes[:, 0], modes[:, 0]) @ v, v, atol=1e-14)


def test_pod_orthogonal_rows():
    rows = np.eye(6)[[1, 4, 5]] * np.array([[3.0], [2.0], [1.0]])
    modes, _ = pod_modes(rows, 3)
    np.testing.assert_allclose(np.abs(modes.T), np.eye(6)[[1, 4, 5]], atol=1e-15)


def test_pod_eckart_young():
    S = np.random.default_rng(2).standard_normal((50, 30))
    modes, _ = pod_modes(S, 10)
    err = np.linalg.norm(S - S @ modes @ modes.T) ** 2
    s = np.linalg.svd(S, compute_uv=False)
    assert abs(err - np.sum(s[10:] ** 2)) <= 1e-10 * max(1.0, err)
    assert np.max(np.abs(modes.T @ modes - np.eye(10))) <= 1e-10


def test_pod_centering():
    rng = np.random.default_rng(3)
    S = 5.0 + rng.standard_normal((20, 8))
    modes, mean = pod_modes(S, 3, center=True)
    np.testing.assert_allclose(mean, S.mean(axis=0))
    assert np.max(np.abs((S - mean).mean(axis=0) @ modes)) <= 1e-12


def test_pod_rank_deficient():
    v = np.arange(1.0, 6.0)
    with pytest.raises(RankDeficient):
        pod_modes(np.stack([v, 2 * v, 3 * v]), 2)
