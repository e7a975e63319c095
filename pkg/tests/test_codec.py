import numpy as np
import pytest

from rescodec import container as ct
from rescodec import datasets as D
from rescodec.codec import CheckpointMismatchError, decode_array, encode_array
from rescodec.qc import QcConfig, QcNet
from rescodec.rc import RcConfig, RcNet


@pytest.fixture(scope="module")
def rc5():
    return RcNet(RcConfig.desk(cf=8, num_blocks=1), rng=0)


@pytest.mark.parametrize("mode", ["fixed", "qc", "optimal"])
def test_round_trip_all_modes(rc5, mode):
    qc = QcNet(QcConfig.desk(widths=(8, 8, 8), blocks=1), rng=0)
    x = D.crop_of(D.natural_image("astronaut"), 40, 35, 1)
    data, stats = encode_array(x, rc5, mode, 12, qc)
    np.testing.assert_array_equal(decode_array(data, rc5), x)
    assert stats.total_bytes == len(data)
    assert 11 <= stats.q <= 17
    assert stats.lossy_bytes + stats.residual_bytes + 88 == len(data)


def test_tau_kept_only_when_it_helps(rc5):
    x = D.noise(24, 24, 0)
    a, sa = encode_array(x, rc5, use_tau=True)
    b, sb = encode_array(x, rc5, use_tau=False)
    assert len(a) <= len(b)
    assert ct.read_container(b).tau == bytes.fromhex("0000803f") * 15
    np.testing.assert_array_equal(decode_array(a, rc5), x)


def test_split_path(rc5):
    x = D.noise(21, 19, 4)
    data, stats = encode_array(x, rc5, max_pixels=300)
    assert ct.sniff(data) == "split" and len(stats.crops) == 4
    assert sum(c.height * c.width for c in stats.crops) == 21 * 19
    np.testing.assert_array_equal(decode_array(data, rc5), x)


def test_checkpoint_mismatch(rc5):
    data, _ = encode_array(D.constant(8, 8), rc5)
    other = RcNet(RcConfig.desk(cf=8, num_blocks=1), rng=9)
    with pytest.raises(CheckpointMismatchError, match="RC weights"):
        decode_array(data, other)


def test_rejects_non_k5_models():
    with pytest.raises(ValueError, match="K=5"):
        encode_array(D.constant(8, 8), RcNet(RcConfig.desk(cf=8, num_blocks=1, k=2), rng=0))


def test_bad_mode(rc5):
    with pytest.raises(ValueError, match="unknown mode"):
        encode_array(D.constant(8, 8), rc5, mode="best")
    with pytest.raises(ValueError, match="Q-classifier"):
        encode_array(D.constant(8, 8), rc5, mode="qc")
