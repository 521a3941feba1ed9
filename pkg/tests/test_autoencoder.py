import numpy as np
import pytest

from lssgen.autoencoder import AutoencoderModel, IdentityCodec, reconstruction_mse, train_ae
from lssgen.grf import GrfSpec, grf_sample
from lssgen.tensorkit import Rng, grad_check
from lssgen.training import TrainingDiverged


def test_shape_contract(rng):
    ae = AutoencoderModel()
    z = ae.encode(rng.normal((1, 32, 32)))
    assert z.shape == (4, 8, 8)
    assert ae.decode(z).shape == (1, 32, 32)
    assert ae.encode(rng.normal((3, 1, 16, 16))).shape == (3, 4, 4, 4)


@pytest.mark.parametrize("shape", [(1, 30, 32), (2, 32, 32), (1, 32, 6)])
def test_indivisible_or_multichannel_rejected(shape):
    with pytest.raises(ValueError):
        AutoencoderModel().encode(np.zeros(shape))


def test_decode_channel_check():
    with pytest.raises(ValueError):
        AutoencoderModel().decode(np.zeros((3, 4, 4)))


def test_identity_codec_is_identity(rng):
    x = rng.normal((2, 1, 8, 8))
    c = IdentityCodec()
    assert c.decode(c.encode(x)).tobytes() == x.tobytes()
    assert c.factor == 1 and c.kind == "identity"


def test_untrained_reconstruction_near_variance(rng):
    x = grf_sample(GrfSpec.power_law(16), rng, 64)
    mse = reconstruction_mse(AutoencoderModel(seed=1), x)
    assert mse == pytest.approx(float(np.mean(x**2)), rel=0.05)


def test_dc_only_learned():
    x = grf_sample(GrfSpec.dc_only(16), Rng(1), 512)
    model, report = train_ae(x, epochs=10, lr=3e-3, rng=Rng(2))
    assert report.heldout_mse < 1e-3


def test_trained_codec_heldout_bound(trained_codec):
    model, report, held = trained_codec
    assert report.heldout_mse < 0.5 * float(held.var())
    assert report.epoch_loss[-1] < report.epoch_loss[0]


def test_roundtrip_within_reported_bound(trained_codec):
    model, report, held = trained_codec
    assert reconstruction_mse(model, held) <= report.heldout_mse * (1 + 1e-12)


def test_double_roundtrip_degrades(trained_codec):
    model, _, held = trained_codec
    once = model.decode(model.encode(held))
    twice = model.decode(model.encode(once))
    assert np.mean((twice - held) ** 2) >= np.mean((once - held) ** 2)


def test_deterministic(trained_codec, rng):
    model, _, _ = trained_codec
    x = rng.normal((2, 1, 32, 32))
    assert model.encode(x).tobytes() == model.encode(x).tobytes()


def test_checkpoint_roundtrip(tmp_path, trained_codec, rng):
    model, _, _ = trained_codec
    model.save(tmp_path / "ae.lst")
    loaded = AutoencoderModel.load(tmp_path / "ae.lst")
    x = rng.normal((1, 1, 16, 16))
    assert loaded.decode(loaded.encode(x)).tobytes() == model.decode(model.encode(x)).tobytes()
    manifest = (tmp_path / "ae.lst.manifest").read_text()
    assert "kind=autoencoder" in manifest and "encoder.0.weight" in manifest


def test_encoder_decoder_gradients(rng):
    ae = AutoencoderModel(seed=3)
    for p in ae.decoder.state().values():
        p[...] = rng.normal(p.shape) * 0.3
    assert grad_check(ae.encoder, rng.normal((1, 1, 8, 8))).ok
    assert grad_check(ae.decoder, rng.normal((1, 4, 2, 2))).ok


def test_divergence_aborts():
    x = grf_sample(GrfSpec.power_law(16), Rng(0), 32) * 1e200
    with pytest.raises(TrainingDiverged), np.errstate(over="ignore", invalid="ignore"):
        train_ae(x, epochs=1, rng=Rng(0))
