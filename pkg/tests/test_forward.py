import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from convinv import forward
from convinv.errors import DegenerateSignalError, DimensionError
from conftest import random_kernels, rel_err
from oracles import dense_forward, loop_forward


def _delta():
    return forward.make_psf("delta")


def test_delta_kernel_is_identity(rng):
    x = rng.standard_normal((1, 8, 8))
    bank = forward.BlurBank([[_delta()]], 8)
    np.testing.assert_allclose(forward.apply_forward(bank, x), x, atol=1e-14)
    np.testing.assert_allclose(forward.apply_adjoint(bank, x), x, atol=1e-14)


def test_superposition(rng):
    x = rng.standard_normal((2, 8, 8))
    bank = forward.BlurBank([[_delta(), _delta()]], 8)
    np.testing.assert_allclose(forward.apply_forward(bank, x)[0],
                               x[0] + x[1], atol=1e-14)


def test_matches_dense_operator(rng):
    kernels = random_kernels(rng, 2, 2)
    bank = forward.BlurBank(kernels, 8)
    x = rng.standard_normal((2, 8, 8))
    H = dense_forward(kernels, 8)
    y = forward.apply_forward(bank, x)
    assert rel_err(y.ravel(), H @ x.ravel()) < 1e-10
    yy = rng.standard_normal((2, 8, 8))
    assert rel_err(forward.apply_adjoint(bank, yy).ravel(),
                   H.T @ yy.ravel()) < 1e-10


def test_matches_direct_loop(rng):
    kernels = random_kernels(rng, 3, 2, max_size=5)
    bank = forward.BlurBank(kernels, 8)
    x = rng.standard_normal((2, 8, 8))
    assert rel_err(forward.apply_forward(bank, x), loop_forward(kernels, x)) \
        < 1e-12


def test_shifted_delta_adjoint_shifts_back(rng):
    k = np.zeros((3, 3))
    k[2, 1] = 1.0     # moves content one row down
    bank = forward.BlurBank([[k]], 8)
    x = rng.standard_normal((1, 8, 8))
    np.testing.assert_allclose(forward.apply_forward(bank, x),
                               np.roll(x, 1, axis=1), atol=1e-13)
    np.testing.assert_allclose(forward.apply_adjoint(bank, x),
                               np.roll(x, -1, axis=1), atol=1e-13)


@settings(max_examples=150)
@given(st.integers(1, 3), st.integers(1, 3), st.sampled_from([4, 8]),
       st.integers(0, 2 ** 32 - 1))
def test_adjoint_inner_product(K, S, N, seed):
    r = np.random.default_rng(seed)
    bank = forward.BlurBank(random_kernels(r, K, S), N)
    x = r.standard_normal((S, N, N))
    y = r.standard_normal((K, N, N))
    lhs = np.vdot(forward.apply_forward(bank, x), y)
    rhs = np.vdot(x, forward.apply_adjoint(bank, y))
    assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), 1.0)


def test_linearity(rng):
    bank = forward.BlurBank(random_kernels(rng, 2, 3), 8)
    x1, x2 = rng.standard_normal((2, 3, 8, 8))
    a = 1.7
    lhs = forward.apply_forward(bank, a * x1 + x2)
    rhs = a * forward.apply_forward(bank, x1) + forward.apply_forward(bank, x2)
    assert rel_err(lhs, rhs) < 1e-10


def test_wrong_depth_rejected(rng):
    bank = forward.BlurBank(random_kernels(rng, 2, 2), 8)
    with pytest.raises(DimensionError):
        forward.apply_forward(bank, np.zeros((3, 8, 8)))
    with pytest.raises(DimensionError):
        forward.apply_adjoint(bank, np.zeros((1, 8, 8)))


def test_kernel_too_large():
    with pytest.raises(DimensionError):
        forward.BlurBank([[np.ones((9, 9))]], 8)


def test_make_psf_kinds():
    d = forward.make_psf("delta")
    assert d.shape == (1, 1) and d[0, 0] == 1
    np.testing.assert_array_equal(forward.make_psf("gaussian", sigma=0.1), d)
    disk = forward.make_psf("disk", size=9, radius=2)
    assert disk.shape == (9, 9)
    assert abs(disk.sum() - 1) < 1e-12
    g = forward.make_psf("gaussian", sigma=1.5)
    assert abs(g.sum() - 1) < 1e-12
    assert g.shape[0] % 2 == 1
    np.testing.assert_allclose(g, g.T)
    assert abs(forward.make_psf("gaussian", sigma=1.0, weight=0.5).sum()
               - 0.5) < 1e-12
    with pytest.raises(ValueError):
        forward.make_psf("airy", sigma=1)


def test_bank_save_load(tmp_path, rng):
    bank = forward.BlurBank.from_specs(
        [[{"kind": "gaussian", "sigma": 1.0},
          {"kind": "disk", "radius": 1.5, "weight": 0.3}]], 16)
    bank.save(tmp_path / "b")
    back = forward.BlurBank.load(tmp_path / "b")
    assert back.digest() == bank.digest()
    np.testing.assert_array_equal(back.spectra, bank.spectra)


def test_noiseless_is_exact(rng):
    bank = forward.BlurBank(random_kernels(rng, 2, 2), 8)
    x = rng.standard_normal((2, 8, 8))
    y, sig = forward.simulate_measurements(bank, x, forward.NoiseSpec(np.inf))
    assert np.array_equal(y, forward.apply_forward(bank, x))
    assert np.all(sig == 0)


def test_realized_snr_near_target(rng):
    bank = forward.BlurBank.from_specs([[{"kind": "gaussian", "sigma": 1}]],
                                       64)
    x = rng.uniform(size=(1, 64, 64))
    y, _ = forward.simulate_measurements(bank, x, forward.NoiseSpec(20, 7))
    snr = forward.realized_snr_db(forward.apply_forward(bank, x), y)
    assert abs(snr[0] - 20) < 0.5


def test_global_snr_mode(rng):
    clean = rng.uniform(size=(3, 16, 16)) * np.array([1, 2, 3])[:, None, None]
    s = forward.noise_sigmas(clean, 10, per_measurement=False)
    assert np.all(s == s[0])
    total = np.sum(clean ** 2) / (np.size(clean) * s[0] ** 2)
    assert abs(10 * np.log10(total) - 10) < 1e-12


def test_same_seed_same_noise(rng):
    bank = forward.BlurBank(random_kernels(rng, 1, 1), 8)
    x = rng.standard_normal((1, 8, 8))
    a, _ = forward.simulate_measurements(bank, x, forward.NoiseSpec(25, 3))
    b, _ = forward.simulate_measurements(bank, x, forward.NoiseSpec(25, 3))
    c, _ = forward.simulate_measurements(bank, x, forward.NoiseSpec(25, 4))
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, c)


def test_zero_signal_rejected():
    bank = forward.BlurBank([[np.ones((1, 1))]], 4)
    with pytest.raises(DegenerateSignalError):
        forward.simulate_measurements(bank, np.zeros((1, 4, 4)))
