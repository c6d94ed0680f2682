import numpy as np
import pytest
from scipy import stats

from rino.datagen import (
    GrfConfig,
    SubsampleConfig,
    make_three_basis_dataset,
    mask_matrix,
    rbf_kernel,
    read_dataset,
    sample_grf,
    solve_antiderivative,
    solve_burgers,
    solve_darcy_1d,
    solve_darcy_2d,
    subsample_signal,
    three_basis_functions,
    write_dataset,
)
from rino.dictionary import PointCloudSignal
from rino.errors import CFLViolation, RangeError, UnsortedGrid
from rino.numerics import RngState

# Gaussian random fields


def test_kernel_at_length_scale():
    assert rbf_kernel([[0.0]], [[0.2]], 0.2)[0, 0] == pytest.approx(np.exp(-0.5), rel=1e-15)
    assert rbf_kernel([[0.3]], [[0.3]], 0.2)[0, 0] == 1.0


def test_periodic_kernel_wraps():
    k = rbf_kernel(np.array([0.0, 0.95]), np.array([1.0, 0.05]), 0.2, periodic=True)
    np.testing.assert_allclose(np.diag(k), [1.0, rbf_kernel([[0.0]], [[0.1 * np.sinc(0.1)]], 0.2)[0, 0]], rtol=1e-12)


def test_grf_empirical_covariance():
    x = np.linspace(0, 1, 5)
    draws = sample_grf(x, GrfConfig(0.3), RngState(1), n_samples=10_000)
    C = np.cov(draws, rowvar=False, bias=True)
    assert np.max(np.abs(C - rbf_kernel(x, x, 0.3))) <= 0.05
    assert np.max(np.abs(draws.mean(axis=0))) <= 0.05


def test_grf_permutation_equivariant():
    x = np.random.default_rng(0).uniform(0, 1, 12)
    perm = np.random.default_rng(1).permutation(12)
    a = sample_grf(x, GrfConfig(0.2), RngState(5))
    b = sample_grf(x[perm], GrfConfig(0.2), RngState(5))
    np.testing.assert_allclose(b, a[perm], atol=1e-12)


def test_grf_rejects_duplicates():
    with pytest.raises(ValueError):
        sample_grf([0.1, 0.1, 0.5], GrfConfig(0.2), RngState(0))


def test_grf_2d_shape():
    g = np.stack(np.meshgrid(np.linspace(0, 1, 6), np.linspace(0, 1, 6), indexing="ij"), -1).reshape(-1, 2)
    assert sample_grf(g, GrfConfig(0.1), RngState(0), n_samples=3).shape == (3, 36)


# antiderivative


def test_antiderivative_polynomials():
    x = np.linspace(0, 1, 37)
    np.testing.assert_allclose(solve_antiderivative(x, np.ones_like(x)), x, atol=1e-15)
    np.testing.assert_allclose(solve_antiderivative(x, 2 * x), x**2, atol=1e-15)
    # degree <= 1 is also exact on a non-uniform grid
    xr = np.sort(np.random.default_rng(0).uniform(0, 1, 20))
    xr[0] = 0.0
    np.testing.assert_allclose(solve_antiderivative(xr, 3 - 4 * xr), 3 * xr - 2 * xr**2, atol=1e-14)


def test_antiderivative_cosine():
    x = np.linspace(0, 1, 100)
    assert np.max(np.abs(solve_antiderivative(x, np.cos(np.pi * x)) - np.sin(np.pi * x) / np.pi)) <= 5e-4


def test_antiderivative_unsorted():
    with pytest.raises(UnsortedGrid):
        solve_antiderivative([0.0, 0.5, 0.4], [1.0, 1.0, 1.0])


# Darcy 1-D


def darcy1d_mms(n):
    x = np.linspace(0, 1, n)
    s = np.sin(np.pi * x)
    ds = np.pi * np.cos(np.pi * x)
    d2s = -np.pi**2 * s
    # u = -(k(s) s')' = -(2 s s'^2 + k(s) s'')
    u = -(2 * s * ds**2 + (0.2 + s**2) * d2s)
    out = solve_darcy_1d(u)
    return np.max(np.abs(out.values - s)), out


def test_darcy1d_zero_source():
    out = solve_darcy_1d(np.zeros(20))
    assert np.all(out.values == 0.0)


def test_darcy1d_mms_second_order():
    e50, out = darcy1d_mms(50)
    e100, _ = darcy1d_mms(100)
    assert e50 <= 1e-3
    assert e50 / e100 >= 3.5
    assert out.residual_norms[-1] <= 1e-10
    assert out.values[0] == 0.0 and out.values[-1] == 0.0


def test_darcy1d_newton_robust():
    x = np.linspace(0, 1, 50)
    for i in range(20):
        u = sample_grf(x, GrfConfig(0.05), RngState(3).child(i))
        assert solve_darcy_1d(u).iterations <= 10


# Darcy 2-D


def darcy2d_mms(n):
    x = np.linspace(0, 1, n)
    X, Y = np.meshgrid(x, x, indexing="ij")
    sx, cx, sy, cy = np.sin(np.pi * X), np.cos(np.pi * X), np.sin(np.pi * Y), np.cos(np.pi * Y)
    s = sx * sy
    grad2 = np.pi**2 * (cx**2 * sy**2 + sx**2 * cy**2)
    lap = -2 * np.pi**2 * s
    u = -(2 * s * grad2 + (0.2 + s**2) * lap)
    return np.max(np.abs(solve_darcy_2d(u).values - s))


def test_darcy2d_zero_source():
    assert np.all(solve_darcy_2d(np.zeros((7, 7))).values == 0.0)


def test_darcy2d_mms_second_order():
    errs = [darcy2d_mms(n) for n in (17, 33, 65)]
    assert errs[0] / errs[1] >= 3.5
    assert errs[1] / errs[2] >= 3.5


def test_darcy2d_symmetry():
    x = np.linspace(0, 1, 21)
    g = np.stack(np.meshgrid(x, x, indexing="ij"), -1).reshape(-1, 2)
    u = sample_grf(g, GrfConfig(0.2), RngState(4)).reshape(21, 21)
    u = u + u.T
    s = solve_darcy_2d(u).values
    assert np.max(np.abs(s - s.T)) <= 1e-9


# Burgers


def test_burgers_zero():
    assert np.all(solve_burgers(np.zeros(101)).values == 0.0)


def test_burgers_linearized_decay():
    x = np.linspace(0, 1, 101)
    eps, nu = 1e-3, 0.01
    out = solve_burgers(eps * np.sin(2 * np.pi * x), nu=nu)
    t = np.linspace(0, 1, 100)
    amp = np.abs(np.fft.rfft(out.values[:-1], axis=0)[1]) * 2 / 100
    assert np.max(np.abs(amp / (eps * np.exp(-4 * np.pi**2 * nu * t)) - 1)) <= 0.01


def test_burgers_mean_conserved_and_bounded():
    x = np.linspace(0, 1, 101)
    u0 = sample_grf(x[:-1], GrfConfig(0.2, periodic=True), RngState(2))
    u0 = np.append(u0, u0[0])
    out = solve_burgers(u0)
    means = out.values[:-1].mean(axis=0)
    assert np.max(np.abs(means - means[0])) <= 1e-10
    assert np.max(np.abs(out.values)) <= np.max(np.abs(u0)) + 1e-6
    assert out.values.shape == (101, 100)
    np.testing.assert_array_equal(out.values[0], out.values[-1])


def test_burgers_linear_flag_translates():
    x = np.linspace(0, 1, 101)
    u0 = np.sin(2 * np.pi * x) * 0.5
    out = solve_burgers(u0, nu=0.0, linear=True)
    # pure advection at unit speed returns to the start after one period;
    # Heun's phase error is (k dt)^3 / 6 per step, about 4e-5 rad here
    np.testing.assert_allclose(out.values[:, -1], u0, atol=1e-4)


def test_burgers_rejects_nonperiodic_and_cfl():
    with pytest.raises(ValueError):
        solve_burgers(np.linspace(0, 1, 11))
    x = np.linspace(0, 1, 101)
    with pytest.raises(CFLViolation):
        solve_burgers(50 * np.sin(2 * np.pi * x), substeps=1)


# subsampling and masks


def test_subsample_identity():
    x = np.linspace(0, 1, 20)
    sig = PointCloudSignal(x, x**2, 3)
    sub = subsample_signal(sig, SubsampleConfig(20, 20), RngState(0))
    np.testing.assert_array_equal(sub.points, sig.points)
    assert sub.id == 3


def test_subsample_counts_uniform():
    x = np.linspace(0, 1, 100)
    sig = PointCloudSignal(x, np.sin(x))
    root = RngState(9)
    counts = []
    for i in range(1000):
        sub = subsample_signal(sig, SubsampleConfig(10, 60), root.child(i))
        assert np.unique(sub.points[:, 0]).size == len(sub)
        assert np.all(np.diff(sub.points[:, 0]) > 0)
        counts.append(len(sub))
    counts = np.array(counts)
    assert counts.min() >= 10 and counts.max() <= 60
    observed = np.bincount(counts - 10, minlength=51)
    assert stats.chisquare(observed).pvalue > 0.01


def test_subsample_range_error():
    sig = PointCloudSignal(np.linspace(0, 1, 5), np.ones(5))
    with pytest.raises(RangeError):
        subsample_signal(sig, SubsampleConfig(3, 6), RngState(0))


def test_three_basis_values_at_center():
    psi = three_basis_functions(np.array([0.5]))
    assert psi[1, 0] == 1.0 and psi[2, 0] == -1.0
    assert psi[0, 0] == pytest.approx(-5 / 16, rel=1e-14)


def test_three_basis_dataset():
    x, data, coeffs = make_three_basis_dataset(200, 100, RngState(0))
    assert data.shape == (200, 100) and coeffs.shape == (200, 3)
    s = np.linalg.svd(data, compute_uv=False)
    assert s[3] / s[0] <= 1e-10
    zero_row = np.zeros(3) @ three_basis_functions(x)
    assert np.all(zero_row == 0.0)
    _, again, _ = make_three_basis_dataset(200, 100, RngState(0))
    assert again.tobytes() == data.tobytes()


def test_mask_counts():
    assert not mask_matrix(4, 10, 0, RngState(0)).any()
    m = mask_matrix(50, 100, 90, RngState(1))
    assert np.all(m.sum(axis=1) == 90)
    assert np.array_equal(m, mask_matrix(50, 100, 90, RngState(1)))
    with pytest.raises(ValueError):
        mask_matrix(1, 10, 100, RngState(0))


def test_dataset_round_trip(tmp_path):
    x = np.linspace(0, 1, 3)
    manifest = {"generator": "test", "count": 1}
    records = [{"id": 0, "x": x[:, None], "u": [0.1, 0.2, 1 / 3], "y": x[:, None], "s": x}]
    write_dataset(tmp_path, manifest, records)
    m2, r2 = read_dataset(tmp_path)
    assert m2 == manifest
    assert r2[0]["u"][2] == 1 / 3
    first = (tmp_path / "data.jsonl").read_bytes()
    write_dataset(tmp_path, manifest, records)
    assert (tmp_path / "data.jsonl").read_bytes() == first
