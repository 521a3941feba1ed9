import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lssgen.backbone import (AnalyticBackbone, BackboneNet, LearnedBackbone,
                             backbone_loss, eps_from_velocity, fit_stationary_gaussian, heldout_set,
                             noisy_batch, time_features, train_backbone, velocity_from_eps,
                             x0_from_velocity)
from lssgen.grf import GrfSpec, grf_sample, radial_power_spectrum
from lssgen.tensorkit import Rng, grad_check
from oracles import dense_conditional_mean, dense_stationary_cov

SPEC16 = GrfSpec.power_law(16)


def _data(n, seed):
    return grf_sample(SPEC16, Rng(seed), n)


@pytest.fixture(scope="module")
def trained_pair():
    """FM and DM nets trained identically on 512 fields, with one shared held-out set."""
    x = _data(512, 1)
    held = heldout_set(_data(256, 2), Rng(3))
    out = {}
    for mode in ("velocity", "epsilon"):
        out[mode] = train_backbone(mode, x, epochs=30, rng=Rng(4), heldout=held,
                                   oracle=AnalyticBackbone([SPEC16], mode))
    return out, held


# ---- conversions --------------------------------------------------------------------

@given(t=st.floats(0.01, 0.99), seed=st.integers(0, 10_000))
def test_velocity_eps_conversions_invert(t, seed):
    r = Rng(seed)
    z, v = r.normal((1, 4, 4)), r.normal((1, 4, 4))
    eps = eps_from_velocity(z, v, t)
    np.testing.assert_allclose(velocity_from_eps(z, eps, t), v, atol=1e-9)
    x0 = x0_from_velocity(z, v, t)
    np.testing.assert_allclose((1 - t) * x0 + t * eps, z, atol=1e-12)
    np.testing.assert_allclose(eps - x0, v, atol=1e-12)


def test_velocity_from_eps_undefined_at_one():
    with pytest.raises(ValueError):
        velocity_from_eps(np.zeros(2), np.zeros(2), 1.0)


@pytest.mark.parametrize("t", [0.1, 0.5, 0.9])
def test_analytic_modes_agree(t, rng):
    z = rng.normal((2, 1, 16, 16))
    fm, dm = AnalyticBackbone([SPEC16], "velocity"), AnalyticBackbone([SPEC16], "epsilon")
    np.testing.assert_allclose(dm.velocity(z, t), fm.predict(z, t), atol=1e-10)
    np.testing.assert_allclose(fm.eps(z, t), dm.predict(z, t), atol=1e-10)
    np.testing.assert_allclose(fm.x0(z, t), dm.x0(z, t), atol=1e-10)


def test_analytic_velocity_zero_for_unit_spectrum(rng):
    bb = AnalyticBackbone([GrfSpec.white(8)])
    assert np.abs(bb.predict(rng.normal((1, 8, 8)), 0.5)).max() < 1e-15


def test_eps_mode_at_pure_noise_uses_data_mean(rng):
    bb = AnalyticBackbone([SPEC16], "epsilon")
    z = rng.normal((1, 16, 16))
    assert np.all(bb.x0(z, 1.0) == 0.0)
    np.testing.assert_allclose(bb.velocity(z, 1.0), z)
    learned = LearnedBackbone(1, "epsilon", width=4, mean=np.array([0.25]))
    np.testing.assert_allclose(learned.x0(z, 1.0), 0.25)
    np.testing.assert_allclose(learned.velocity(z, 1.0), z - 0.25)


def test_unregistered_resolution_rejected(rng):
    bb = AnalyticBackbone([SPEC16])
    with pytest.raises(KeyError):
        bb.predict(rng.normal((1, 8, 8)), 0.5)


def test_bad_mode():
    with pytest.raises(ValueError):
        AnalyticBackbone([SPEC16], "score")


# ---- stationary multichannel prior -------------------------------------------------

def _correlated_latents(count, seed, n=4):
    """Three channels mixing two GRFs, with channel means, so channels correlate per frequency."""
    r = Rng(seed)
    a = grf_sample(GrfSpec.power_law(n), r.child(0), count)[:, 0]
    b = grf_sample(GrfSpec.white(n), r.child(1), count)[:, 0]
    return np.stack([a + 0.5 * b, a - b, 0.3 * b + np.roll(a, 1, axis=-1)], axis=1) + \
        np.array([0.5, -1.0, 2.0])[None, :, None, None]


@pytest.fixture(scope="module")
def fitted():
    return fit_stationary_gaussian(_correlated_latents(4000, 0))


def test_fit_recovers_moments(fitted):
    z = _correlated_latents(4000, 0)
    np.testing.assert_allclose(fitted.mean, [0.5, -1.0, 2.0], atol=0.05)
    np.testing.assert_allclose(fitted.channel_spectra().mean(axis=(1, 2)), z.var(axis=(0, 2, 3)), rtol=1e-6)


def test_fit_validates_shape():
    with pytest.raises(ValueError):
        fit_stationary_gaussian(np.zeros((2, 3, 4, 5)))


@pytest.mark.parametrize("t", [0.2, 0.5, 0.8])
def test_stationary_predictors_match_dense_oracle(fitted, t, rng):
    n, d = fitted.size, fitted.channels
    cov = dense_stationary_cov(fitted.eigvals, fitted.eigvecs)
    mean = np.repeat(fitted.mean, n * n)
    z = rng.normal((d, n, n)) + 0.5
    want = dense_conditional_mean(cov, mean, z.ravel(), t).reshape(d, n, n)
    bb = AnalyticBackbone([fitted])
    x0, eps = bb.denoise(z, t)
    np.testing.assert_allclose(x0, want, atol=1e-9)
    np.testing.assert_allclose((1 - t) * x0 + t * eps, z, atol=1e-10)


def test_dense_covariance_matches_empirical(fitted):
    z = _correlated_latents(20000, 5)
    emp = np.cov(z.reshape(len(z), -1), rowvar=False)
    assert np.abs(emp - dense_stationary_cov(fitted.eigvals, fitted.eigvecs)).max() < 0.08


def test_stationary_sample_statistics(fitted):
    s = fitted.sample(Rng(8), 4000)
    assert s.shape == (4000, 3, 4, 4)
    np.testing.assert_allclose(s.mean(axis=(0, 2, 3)), fitted.mean, atol=0.05)
    ref = radial_power_spectrum(_correlated_latents(4000, 9) - fitted.mean[None, :, None, None])
    got = radial_power_spectrum(s - fitted.mean[None, :, None, None])
    np.testing.assert_allclose(got.power, ref.power, rtol=0.1)


def test_stationary_channel_mismatch(fitted, rng):
    with pytest.raises(ValueError):
        AnalyticBackbone([fitted]).predict(rng.normal((2, 4, 4)), 0.5)


def test_stationary_data_mean(fitted):
    bb = AnalyticBackbone([fitted], "epsilon")
    out = bb.x0(np.zeros((2, 3, 4, 4)), 1.0)
    np.testing.assert_allclose(out[1, :, 2, 3], fitted.mean)


# ---- learned network -----------------------------------------------------------------

def test_time_features():
    f = time_features([0.0, 0.5], 3)
    assert f.shape == (2, 6)
    np.testing.assert_allclose(f[0], [0, 0, 0, 1, 1, 1], atol=1e-15)


def test_backbone_net_gradients(rng):
    net = BackboneNet(2, rng, width=4, n_freq=2, data_var=0.7)
    for p in net.state().values():
        p[...] = rng.normal(p.shape) * 0.5
    t = np.array([0.3, 0.8])
    report = grad_check(net, rng.normal((2, 2, 4, 4)), args=(t,))
    assert report.ok, str(report)


def test_learned_shape_and_channel_check(rng):
    bb = LearnedBackbone(1, width=4)
    z = rng.normal((1, 8, 8))
    assert bb.predict(z, 0.4).shape == z.shape
    assert bb.predict(rng.normal((3, 1, 8, 8)), 0.4).shape == (3, 1, 8, 8)
    with pytest.raises(ValueError):
        bb.predict(rng.normal((2, 8, 8)), 0.4)


def test_untrained_predicts_zero_and_matches_baseline():
    held = heldout_set(_data(256, 2), Rng(3))
    for mode in ("velocity", "epsilon"):
        _, report = train_backbone(mode, _data(8, 1), epochs=0, rng=Rng(0), heldout=held, width=4)
        assert report.heldout_loss == pytest.approx(report.baseline_loss, rel=0.05)


def test_noisy_batch_interpolates(rng):
    x0 = rng.normal((5, 1, 4, 4))
    z, t, eps = noisy_batch(x0, rng)
    assert np.all((t >= 0.01) & (t <= 0.99))
    np.testing.assert_allclose(z, (1 - t[:, None, None, None]) * x0 + t[:, None, None, None] * eps)


def test_fm_training_reaches_oracle(trained_pair):
    (model, report), held = trained_pair[0]["velocity"], trained_pair[1]
    assert report.oracle_gap < 0.10
    assert report.heldout_loss < report.baseline_loss
    assert all(np.isfinite(report.epoch_loss))


def test_dm_training_reaches_oracle(trained_pair):
    report = trained_pair[0]["epsilon"][1]
    assert report.oracle_gap < 0.10


def test_learned_close_to_analytic_prediction(trained_pair):
    out, (x0, z, t, eps) = trained_pair
    analytic = AnalyticBackbone([SPEC16], "velocity")
    model = out["velocity"][0]
    num = den = 0.0
    for i in range(len(z)):
        a = analytic.predict(z[i], float(t[i]))
        num += np.sum((model.predict(z[i], float(t[i])) - a) ** 2)
        den += np.sum(a**2)
    assert num / den < 0.1


def test_learned_checkpoint_roundtrip(trained_pair, tmp_path, rng):
    model = trained_pair[0]["epsilon"][0]
    model.save(tmp_path / "bb.lst")
    loaded = LearnedBackbone.load(tmp_path / "bb.lst")
    z = rng.normal((1, 16, 16))
    assert loaded.mode == "epsilon"
    assert loaded.predict(z, 0.3).tobytes() == model.predict(z, 0.3).tobytes()
    assert loaded.x0(z, 1.0).tobytes() == model.x0(z, 1.0).tobytes()


def test_report_csv(trained_pair):
    text = trained_pair[0]["velocity"][1].to_csv()
    assert text.startswith("epoch,loss\n0,") and "oracle," in text


def test_loss_helper_on_oracle_is_lower_than_zero_predictor():
    held = heldout_set(_data(64, 2), Rng(3))
    oracle = backbone_loss(AnalyticBackbone([SPEC16]), *held)
    zero = backbone_loss(LearnedBackbone(1, width=4), *held)
    assert oracle < zero
