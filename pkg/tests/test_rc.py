import numpy as np
import pytest

from helpers import fd_grad, rel_err
from rescodec import autograd as ag
from rescodec import datasets as D
from rescodec.autograd import checkpoint
from rescodec.lossy import FallbackBackend
from rescodec.mixture import SIGMA_MIN, nll_bits
from rescodec.rc import (
    ImageTooLargeError,
    RcConfig,
    RcNet,
    TrainingDivergedError,
    batch_loss,
    evaluate_bpsp,
    load_model,
    model_fingerprint,
    prepare_samples,
    rc_forward,
    save_model,
    train_rc,
)


def test_forward_shapes_and_constraints(tiny_rc):
    x = D.gradient(64, 64, 0)
    p = rc_forward(x, tiny_rc)
    for a in (p.pi, p.mu, p.sigma, p.lam):
        assert a.shape == (5, 3, 64, 64)
    stacked = np.concatenate([p.pi, p.mu, p.sigma, p.lam], axis=1)
    assert stacked.reshape(-1, 64, 64).shape[0] == 60
    assert p.sigma.min() >= SIGMA_MIN
    np.testing.assert_allclose(p.pi.sum(axis=0), 1.0, atol=1e-5)


def test_forward_deterministic_and_odd_sizes(tiny_rc):
    x = D.noise(31, 17, 2)
    a, b = rc_forward(x, tiny_rc), rc_forward(x.copy(), tiny_rc)
    np.testing.assert_array_equal(a.mu, b.mu)
    assert a.mu.shape == (5, 3, 31, 17)


def test_forward_is_translation_equivariant_by_two(tiny_rc):
    x = D.noise(64, 64, 3)
    a = rc_forward(x[:, 2:62], tiny_rc)
    b = rc_forward(x[:, 0:60], tiny_rc)
    # a at column j sees the same content as b at column j + 2; compare interiors
    m = 12
    np.testing.assert_allclose(a.mu[..., m:-m, m:-m - 2], b.mu[..., m:-m, m + 2 : -m], atol=1e-5)


def test_max_pixels_guard():
    model = RcNet(RcConfig.desk(cf=8, num_blocks=1, max_pixels=100), rng=0)
    with pytest.raises(ImageTooLargeError, match="4-crop"):
        rc_forward(D.constant(11, 10), model)
    rc_forward(D.constant(10, 10), model)


def test_config_text_round_trip():
    cfg = RcConfig.desk(lr=3e-4, train_q=(12, 14))
    back = RcConfig.from_text(cfg.to_text())
    assert back == cfg
    assert RcConfig.from_text("preset=desk\nbatch=4  # small\n").cf == 32
    assert RcConfig().cf == 128 and RcConfig().num_blocks == 16
    with pytest.raises(ValueError):
        RcConfig.from_text("nonsense")
    with pytest.raises(ValueError):
        RcConfig(optimizer="sgd")


def test_checkpoint_load_and_fingerprint(tmp_path, tiny_rc):
    path = tmp_path / "m.rcw"
    save_model(tiny_rc, path)
    back = load_model(path)
    assert back.config.cf == 8 and back.config.num_blocks == 1
    assert model_fingerprint(back) == model_fingerprint(tiny_rc)
    x = D.gradient(20, 20, 1)
    np.testing.assert_array_equal(rc_forward(x, back).sigma, rc_forward(x, tiny_rc).sigma)
    other = RcNet(RcConfig.desk(cf=8, num_blocks=1), rng=1)
    assert model_fingerprint(other) != model_fingerprint(tiny_rc)
    with pytest.raises(checkpoint.CheckpointError):
        load_model({"foo": np.zeros(3)})


def test_loss_matches_coding_cost(tiny_rc, rng):
    fb = FallbackBackend()
    x = D.crop_of(D.natural_image("astronaut"), 32, 32, 0)
    xl = fb.compress(x, 13).x_l
    r = (x.astype(np.int64) - xl).transpose(2, 0, 1)
    loss = float(batch_loss(tiny_rc, xl[None], r[None]).data)
    ref = nll_bits(r, rc_forward(xl, tiny_rc)) / r.size
    assert loss == pytest.approx(ref, rel=1e-4)


def test_network_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    with ag.precision(np.float64):
        model = RcNet(RcConfig.desk(cf=8, num_blocks=1, k=2), rng=3)
        xl = rng.integers(0, 256, size=(1, 4, 4, 3)).astype(np.uint8)
        r = rng.integers(-3, 4, size=(1, 3, 4, 4))

        def f():
            return float(batch_loss(model, xl, r).data)

        # off-diagonal gamma starts on the max(., floor) kink; move it off
        model.block0.gdn.gamma.data += rng.uniform(0.01, 0.05, size=(8, 8))
        for p in model.parameters():
            p.grad = None
        batch_loss(model, xl, r).backward()
        for name, p in model.named_parameters():
            idx = list(rng.choice(p.data.size, size=min(4, p.data.size), replace=False))
            num = fd_grad(f, p.data, eps=1e-6, index=idx)
            assert rel_err(num, p.grad, idx) < 1e-4, name


def _samples(n=4, size=40):
    img = D.natural_image("astronaut")
    crops = [D.crop_of(img, size, size, i) for i in range(n)]
    return prepare_samples(crops, FallbackBackend())


def test_short_training_writes_metrics(tmp_path):
    train, val = _samples(4), _samples(1)
    cfg = RcConfig.desk(cf=8, num_blocks=1, crop=32, batch=2, max_steps=6, val_interval=3)
    out = train_rc(train, cfg, val, metrics_path=tmp_path / "m.csv", checkpoint_path=tmp_path / "m.rcw")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "step,loss_bpsp,lr,val_bpsp" and len(lines) == 7
    assert lines[3].split(",")[3] != "" and lines[1].split(",")[3] == ""
    assert out.best_step in (3, 6)
    back = load_model(tmp_path / "m.rcw")
    assert evaluate_bpsp(back, val) == pytest.approx(out.best_val, rel=1e-6)


def test_training_is_reproducible():
    train = _samples(3)
    cfg = RcConfig.desk(cf=8, num_blocks=1, crop=32, batch=2, max_steps=3, val_interval=0)
    a = train_rc(train, cfg).history
    b = train_rc(train, cfg).history
    assert [h[1] for h in a] == [h[1] for h in b]


def test_divergence_is_reported():
    train = _samples(2)
    cfg = RcConfig.desk(cf=8, num_blocks=1, crop=32, batch=2, max_steps=2, val_interval=0)
    model = RcNet(cfg, rng=0)
    model.head.weight.data[0, 0, 0, 0] = np.nan
    with pytest.raises(TrainingDivergedError, match="step 0.*img000"):
        train_rc(train, cfg, model=model)
