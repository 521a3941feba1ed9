import time

import pytest
from hypothesis import settings

from lssgen.autoencoder import train_ae
from lssgen.grf import GrfSpec, grf_sample
from lssgen.tensorkit import Rng

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


@pytest.fixture
def rng():
    return Rng(12345)


@pytest.fixture(scope="session")
def trained_codec():
    """Autoencoder trained on 32x32 power-law fields; shared by the codec-mode tests."""
    start = time.perf_counter()
    spec = GrfSpec.power_law(32)
    x = grf_sample(spec, Rng(101), 2048)
    held = grf_sample(spec, Rng(102), 256)
    model, report = train_ae(x, epochs=15, lr=3e-3, rng=Rng(103), heldout=held)
    TRAINING_SECONDS["codec"] = time.perf_counter() - start
    return model, report, held


@pytest.fixture(scope="session")
def codec_upsampler(trained_codec):
    """Upsampler trained on (encode(pool(x)), encode(x)) pairs of 32x32 power-law fields."""
    from lssgen.upsampler import train_upsampler

    start = time.perf_counter()
    out = train_upsampler(trained_codec[0], GrfSpec.power_law(32), pairs=1024, epochs=8, rng=Rng(3))
    TRAINING_SECONDS["codec_upsampler"] = time.perf_counter() - start
    return out


@pytest.fixture(scope="session")
def identity_upsampler():
    """Pixel-space upsampler for 8 -> 16 power-law fields, with its MMSE oracle error."""
    from lssgen.autoencoder import IdentityCodec
    from lssgen.grf import mmse_upsample_map
    from lssgen.upsampler import train_upsampler

    start = time.perf_counter()
    spec = GrfSpec.power_law(16)
    out = train_upsampler(IdentityCodec(), spec, pairs=2048, epochs=10, rng=Rng(21),
                          oracle_mse=mmse_upsample_map(spec)[1])
    TRAINING_SECONDS["identity_upsampler"] = time.perf_counter() - start
    return out


# ---- acceptance summary ----------------------------------------------------------

TRAINING_SECONDS: dict[str, float] = {}
VERDICTS: dict[str, str] = {}


@pytest.fixture
def verdict():
    """Record one acceptance line: ``verdict("A1", ok, "detail")``."""

    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"{name}: {'PASS' if ok else 'FAIL'}  {detail}"
        VERDICTS[name] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(VERDICTS, key=lambda k: int(k[1:])):
        terminalreporter.write_line(VERDICTS[name])
