import os
import time
from dataclasses import dataclass

import numpy as np
import pytest

from rescodec.rc import RcConfig, RcNet

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record(number: int, passed, detail: str) -> None:
    """``passed`` is True, False or None (skipped)."""
    ACCEPTANCE[number] = (None if passed is None else bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        status = "SKIP" if ok is None else "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {status}  {detail}")


@pytest.fixture(scope="session")
def tiny_rc():
    """Untrained small model; enough for format and losslessness tests."""
    return RcNet(RcConfig.desk(cf=8, num_blocks=1), rng=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------------------
# one desk-scale training run shared by the acceptance suite and the sampling test

VAL_NAMES = ("chelsea", "coffee")
TRAIN_STEPS = int(os.environ.get("RC_ACCEPT_STEPS", "500"))


@dataclass
class DeskRun:
    model: object
    result: object
    train: list
    val: list
    seconds: float


def desk_data(seed=0):
    """64x64 tiles of the downscaled natural images; 128x128 validation crops of two held-out ones."""
    from rescodec import datasets as D
    from rescodec.tools import downscale

    nat = D.natural_images()
    rng = np.random.default_rng(seed)
    tiles = []
    for name in sorted(nat):
        if name not in VAL_NAMES:
            tiles += D.tiles(downscale(nat[name], rng.uniform(0.6, 0.8)), 64)
    val = [D.crop_of(nat[n], 128, 128, i) for i, n in enumerate(VAL_NAMES * 2)]
    return tiles, val


@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    from rescodec.lossy import FallbackBackend
    from rescodec.rc import prepare_samples, train_rc

    tiles, val = desk_data()
    fb = FallbackBackend()
    train, val = prepare_samples(tiles, fb), prepare_samples(val, fb)
    cfg = RcConfig.desk(max_steps=TRAIN_STEPS, decay_interval=800, lr_decay=0.5, val_interval=100)
    out = tmp_path_factory.mktemp("desk") / "rc.rcw"
    t0 = time.perf_counter()
    res = train_rc(train, cfg, val, metrics_path=out.with_suffix(".csv"), checkpoint_path=out)
    return DeskRun(res.model, res, train, val, time.perf_counter() - t0)
