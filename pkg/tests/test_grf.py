import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lssgen.grf import (GrfSpec, analytic_eps, analytic_velocity, analytic_x0, band_index,
                        circulant_covariance, grf_sample, mmse_upsample_map, mmse_upsample_oracle,
                        pool, pooled_spec, pooling_matrix, predictor_gains, radial_power_spectrum,
                        spec_profile)
from lssgen.tensorkit import Rng, fft2
from oracles import dense_conditional_mean


def test_power_law_normalised_and_symmetric():
    spec = GrfSpec.power_law(16, 2.0, 1.0)
    assert spec.pixel_variance == pytest.approx(1.0)
    assert spec.eigenvalues[0, 0] == spec.eigenvalues.max()
    lam = spec.eigenvalues
    assert lam[1, 2] == pytest.approx(lam[-1, -2]) and lam[3, 0] == pytest.approx(lam[0, 3])


def test_spec_validation():
    with pytest.raises(ValueError):
        GrfSpec(4, -np.ones((4, 4)))
    with pytest.raises(ValueError):
        GrfSpec(4, np.ones((3, 3)))
    lam = np.ones((4, 4))
    lam[0, 1] = 3.0  # lam[0, 3] stays 1: not the spectrum of a real field
    with pytest.raises(ValueError):
        GrfSpec(4, lam)
    with pytest.raises(ValueError):
        GrfSpec.power_law(8, alpha=-1)


def test_spec_eigenvalues_read_only():
    spec = GrfSpec.white(4)
    with pytest.raises(ValueError):
        spec.eigenvalues[0, 0] = 5.0


def test_sample_shapes_and_determinism():
    spec = GrfSpec.power_law(8)
    assert grf_sample(spec, Rng(0)).shape == (1, 8, 8)
    a = grf_sample(spec, Rng(3), 5)
    assert a.shape == (5, 1, 8, 8)
    assert a.tobytes() == grf_sample(spec, Rng(3), 5).tobytes()


def test_dc_only_samples_are_constant():
    x = grf_sample(GrfSpec.dc_only(8), Rng(1), 4)
    assert np.ptp(x, axis=(-2, -1)).max() < 1e-12


def test_white_samples_are_white():
    x = grf_sample(GrfSpec.white(8), Rng(2), 4096)
    cov = np.cov(x.reshape(4096, -1), rowvar=False)
    assert np.abs(cov - np.eye(64)).max() < 0.1


@pytest.mark.parametrize("alpha", [0.0, 2.0])
def test_monte_carlo_spectrum_matches_eigenvalues(alpha):
    spec = GrfSpec.power_law(16, alpha)
    got = radial_power_spectrum(grf_sample(spec, Rng(7), 4096)).power
    want = spec_profile(spec).power
    np.testing.assert_allclose(got, want, rtol=0.1)


def test_sample_covariance_matches_dense_circulant():
    spec = GrfSpec.power_law(6)
    x = grf_sample(spec, Rng(9), 20000).reshape(20000, -1)
    dense = circulant_covariance(spec)
    assert np.abs(np.cov(x, rowvar=False) - dense).max() < 0.05


def test_circulant_is_symmetric_psd():
    c = circulant_covariance(GrfSpec.power_law(8))
    np.testing.assert_allclose(c, c.T, atol=1e-14)
    assert np.linalg.eigvalsh(c).min() > -1e-10
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(c)),
                               np.sort(GrfSpec.power_law(8).eigenvalues.ravel()), atol=1e-10)


def test_velocity_zero_for_unit_spectrum_at_half():
    z = Rng(0).normal((1, 8, 8))
    assert np.abs(analytic_velocity(z, 0.5, GrfSpec.white(8))).max() < 1e-15


def test_predictor_limits():
    lam = GrfSpec.power_law(8).eigenvalues
    gx, ge = predictor_gains(lam, 1.0)
    assert np.all(gx == 0) and np.all(ge == 1)
    with pytest.raises(ValueError):
        predictor_gains(lam, 0.0)


@pytest.mark.parametrize("t", [0.05, 0.3, 0.5, 0.9])
def test_predictors_match_dense_conditional_mean(t, rng):
    spec = GrfSpec.power_law(6, 2.0)
    z = rng.normal((1, 6, 6))
    cov = circulant_covariance(spec)
    x0_dense = dense_conditional_mean(cov, np.zeros(36), z.ravel(), t).reshape(z.shape)
    np.testing.assert_allclose(analytic_x0(z, t, spec), x0_dense, atol=1e-10)
    eps_dense = (z - (1 - t) * x0_dense) / t
    np.testing.assert_allclose(analytic_eps(z, t, spec), eps_dense, atol=1e-10)
    np.testing.assert_allclose(analytic_velocity(z, t, spec), eps_dense - x0_dense, atol=1e-10)


@given(t=st.floats(0.01, 1.0), seed=st.integers(0, 10_000))
def test_predictors_reconstruct_input(t, seed):
    spec = GrfSpec.power_law(8)
    z = Rng(seed).normal((2, 1, 8, 8))
    recon = (1 - t) * analytic_x0(z, t, spec) + t * analytic_eps(z, t, spec)
    np.testing.assert_allclose(recon, z, atol=1e-10)


def test_predictor_shape_mismatch():
    with pytest.raises(ValueError):
        analytic_x0(np.zeros((1, 4, 4)), 0.5, GrfSpec.white(8))


def test_pooled_spec_matches_dense_pooling():
    spec = GrfSpec.power_law(8, 2.0, 0.5)
    p = pooling_matrix(8)
    dense = p @ circulant_covariance(spec) @ p.T
    np.testing.assert_allclose(circulant_covariance(pooled_spec(spec)), dense, atol=1e-12)


def test_pooled_white_is_quarter_variance():
    np.testing.assert_allclose(pooled_spec(GrfSpec.white(8)).eigenvalues, 0.25, atol=1e-14)


def test_pooled_spec_matches_pooled_samples():
    spec = GrfSpec.power_law(16)
    x = pool(grf_sample(spec, Rng(4), 4096))
    np.testing.assert_allclose(radial_power_spectrum(x).power, spec_profile(pooled_spec(spec)).power,
                               rtol=0.1)


def test_pool_odd_rejected():
    with pytest.raises(ValueError):
        pooled_spec(GrfSpec.white(5))


def test_mmse_white_closed_form(rng):
    """Given the mean m of four iid unit Gaussians, each has conditional mean m and variance 3/4."""
    spec = GrfSpec.white(8)
    gain, mse = mmse_upsample_map(spec)
    assert mse == pytest.approx(0.75, abs=1e-10)
    low = rng.normal((1, 4, 4))
    up, _ = mmse_upsample_oracle(low, spec)
    np.testing.assert_allclose(up, np.repeat(np.repeat(low, 2, -1), 2, -2), atol=1e-10)


def test_mmse_dc_is_exact(rng):
    spec = GrfSpec.dc_only(8)
    x = grf_sample(spec, rng, 3)
    up, mse = mmse_upsample_oracle(pool(x), spec)
    assert mse < 1e-10
    np.testing.assert_allclose(up, x, atol=1e-10)


def test_mmse_oracle_is_consistent_and_beats_replication():
    spec = GrfSpec.power_law(8)
    x = grf_sample(spec, Rng(5), 2000)
    up, mse = mmse_upsample_oracle(pool(x), spec)
    np.testing.assert_allclose(pool(up), pool(x), atol=1e-10)  # the conditional mean respects the constraint
    assert np.mean((up - x) ** 2) == pytest.approx(mse, rel=0.05)
    rep = np.repeat(np.repeat(pool(x), 2, -1), 2, -2)
    assert mse < np.mean((rep - x) ** 2)


def test_mmse_shape_check():
    with pytest.raises(ValueError):
        mmse_upsample_oracle(np.zeros((1, 3, 3)), GrfSpec.white(8))


def test_band_layout():
    idx, edges = band_index(16)
    assert len(edges) == 5 and edges[-1] == 8.0
    assert idx[0, 0] == 0 and idx[8, 8] == 3
    assert set(np.unique(idx)) == {0, 1, 2, 3}


def test_constant_batch_power_all_in_band_zero():
    prof = radial_power_spectrum(np.full((3, 1, 8, 8), 2.0))
    assert prof.power[0] > 0 and np.all(prof.power[1:] == 0)


def test_white_profile_flat():
    prof = radial_power_spectrum(Rng(6).normal((4096, 16, 16)))
    np.testing.assert_allclose(prof.power, 1.0, rtol=0.1)


def test_profile_matches_fft_definition(rng):
    x = rng.normal((3, 8, 8))
    power = (np.abs(fft2(x)) ** 2).mean(axis=0) / 64
    idx, _ = band_index(8)
    prof = radial_power_spectrum(x)
    for b in range(prof.n_bands):
        assert prof.power[b] == pytest.approx(power[idx == b].mean())


def test_profile_csv_and_validation():
    prof = spec_profile(GrfSpec.white(8))
    lines = prof.to_csv().splitlines()
    assert lines[0] == "band_low,band_high,power" and len(lines) == 3
    with pytest.raises(ValueError):
        radial_power_spectrum(np.zeros((2, 4, 6)))
