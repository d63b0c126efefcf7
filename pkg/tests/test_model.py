import struct

import numpy as np
import pytest

from dgrnn import dsp, model as M
from dgrnn.dgru import SelectGateConfig

TINY = M.EnhanceModelConfig(feature_dim=5, hidden_dim=4, seed=3)


@pytest.fixture
def tiny():
    return M.EnhanceModel.init(TINY)


def test_forward_dense_equals_full_top_a(rng, tiny):
    x = rng.uniform(0, 2, (30, 5))
    a, sa = M.forward(tiny, x, SelectGateConfig.dense())
    b, sb = M.forward(tiny, x, SelectGateConfig.top_a(100))
    assert np.array_equal(a, b)
    assert np.all((a > 0) & (a < 1))
    assert list(sa) == ["gru1", "gru2"] and len(sa["gru1"]) == 30


def test_zero_model_outputs_half(rng):
    mask, _ = M.forward(M.EnhanceModel.zeros(TINY), rng.uniform(0, 1, (7, 5)))
    assert np.all(mask == 0.5)


@pytest.mark.parametrize("gate", [SelectGateConfig.dense(), SelectGateConfig.top_a(50)])
def test_forward_is_causal(rng, tiny, gate):
    x = rng.uniform(0, 2, (20, 5))
    base, _ = M.forward(tiny, x, gate)
    y = x.copy()
    y[12] += 3.0
    pert, _ = M.forward(tiny, y, gate)
    assert np.array_equal(base[:12], pert[:12])
    assert not np.array_equal(base[12:], pert[12:])


def test_forward_shape_error(tiny):
    with pytest.raises(ValueError):
        M.forward(tiny, np.zeros((4, 6)))


def test_loss_examples(rng):
    noisy = rng.uniform(0, 1, (6, 5))
    mask = rng.uniform(0, 1, (6, 5))
    assert M.loss_mag_mse(mask, noisy, mask * noisy) == 0.0
    clean = rng.uniform(0, 1, (6, 5))
    base = M.loss_mag_mse(mask, noisy, clean)
    assert M.loss_mag_mse(mask, 3 * noisy, 3 * clean) == pytest.approx(9 * base)
    with pytest.raises(ValueError):
        M.loss_mag_mse(mask, noisy, clean[:3])


def test_irm_beats_unit_mask(rng):
    u = dsp.synth_utterance(rng, snr=0.0)
    cfg = dsp.FULL_STFT
    s, n, y = (dsp.magnitude(dsp.stft(b, cfg)) for b in (u.clean, u.noise, u.noisy))
    irm = dsp.irm_target(s, n)
    assert M.loss_mag_mse(irm, y, s) < M.loss_mag_mse(np.ones_like(y), y, s)


def _model_loss(m, noisy, clean, gate):
    total = 0.0
    for xb, sb in zip(noisy, clean):
        mask, _ = M.forward(m, xb, gate)
        total += np.sum((mask * xb - sb) ** 2)
    return total / noisy.size


def _perturbed(m, name, idx, delta):
    tensors = {k: v.copy() for k, v in m.tensors().items()}
    tensors[name][idx] += delta
    return M._assemble(tensors)


@pytest.mark.parametrize("gate", [SelectGateConfig.dense(), SelectGateConfig.top_a(50)])
def test_model_gradients_match_finite_differences(rng, tiny, gate):
    noisy = rng.uniform(0, 1.5, (2, 6, 5))
    clean = noisy * rng.uniform(0, 1, noisy.shape)
    loss, grads = M.loss_and_grads(tiny, noisy, clean, gate)
    assert loss == pytest.approx(_model_loss(tiny, noisy, clean, gate), abs=1e-14)
    g = grads.tensors()
    h = 1e-5
    for name, arr in tiny.tensors().items():
        for idx in list(np.ndindex(arr.shape))[:12]:
            fp = _model_loss(_perturbed(tiny, name, idx, h), noisy, clean, gate)
            fm = _model_loss(_perturbed(tiny, name, idx, -h), noisy, clean, gate)
            fd = (fp - fm) / (2 * h)
            assert abs(fd - g[name][idx]) <= 1e-6 * max(abs(fd), abs(g[name][idx]), 1e-3), (name, idx)


def test_zero_learning_rate_gives_flat_curve():
    data = dsp.synth_dataset(4, seed=1, seconds=0.1)
    m = M.EnhanceModel.init(M.EnhanceModelConfig.desk(seed=2))
    tc = M.TrainConfig(learning_rate=0.0, epochs=3, batch_size=2)
    trained, curve = M.train(m, data, tc)
    assert len(curve) == 4
    assert len(set(curve)) == 1
    assert trained.max_abs_diff(m) == 0.0


def test_training_is_deterministic():
    data = dsp.synth_dataset(4, seed=1, seconds=0.1)
    cfg = M.EnhanceModelConfig.desk(seed=2)
    tc = M.TrainConfig(epochs=2, batch_size=2)
    a, ca = M.train(M.EnhanceModel.init(cfg), data, tc)
    b, cb = M.train(M.EnhanceModel.init(cfg), data, tc)
    assert ca == cb
    assert a.max_abs_diff(b) == 0.0
    assert ca[-1] < ca[0]


def test_divergence_is_reported():
    data = dsp.synth_dataset(2, seed=1, seconds=0.05)
    m = M.EnhanceModel.init(M.EnhanceModelConfig.desk(seed=2))
    with pytest.raises(M.TrainingDiverged, match="epoch 1"):
        with np.errstate(all="ignore"):
            M.train(m, data, M.TrainConfig(learning_rate=1e200, epochs=2, batch_size=1))


def test_save_load_round_trip(tmp_path, tiny):
    path = tmp_path / "m.dgru"
    M.save(tiny, path)
    back = M.load(path)
    assert back.max_abs_diff(tiny) <= 2.0**-20
    assert back.shape == tiny.shape


def test_file_layout_is_as_documented(tmp_path, tiny):
    path = tmp_path / "m.dgru"
    M.save(tiny, path)
    raw = path.read_bytes()
    assert raw[:4] == b"DGRU"
    version, count = struct.unpack_from("<HI", raw, 4)
    assert version == 1 and count == 4 + 12 * 2
    (nlen,) = struct.unpack_from("<I", raw, 10)
    name = raw[14 : 14 + nlen].decode()
    assert name == "fc_in.weight"
    rank, d0, d1 = struct.unpack_from("<3I", raw, 14 + nlen)
    assert (rank, d0, d1) == (2, 4, 5)
    first = struct.unpack_from("<f", raw, 14 + nlen + 12)[0]
    assert first == pytest.approx(tiny.fc_in_w[0, 0], abs=1e-7)


def test_load_errors(tmp_path, tiny):
    path = tmp_path / "m.dgru"
    M.save(tiny, path)
    raw = path.read_bytes()

    (tmp_path / "trunc").write_bytes(raw[:-3])
    with pytest.raises(M.MalformedWeightFile):
        M.load(tmp_path / "trunc")

    (tmp_path / "magic").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(M.MalformedWeightFile, match="magic"):
        M.load(tmp_path / "magic")

    (tmp_path / "ver").write_bytes(raw[:4] + struct.pack("<H", 9) + raw[6:])
    with pytest.raises(M.WeightVersionError):
        M.load(tmp_path / "ver")

    tensors = tiny.tensors()
    tensors["gru2.w_hz"] = np.zeros((3, 3))
    bad = M.EnhanceModel.__new__(M.EnhanceModel)
    object.__setattr__(bad, "tensors", lambda: tensors)
    M.save(bad, tmp_path / "shape")
    with pytest.raises(M.WeightShapeError):
        M.load(tmp_path / "shape")

    assert len({M.MalformedWeightFile, M.WeightVersionError, M.WeightShapeError}) == 3


def test_enhance_dense_vs_full_top_a_identical(rng, tiny):
    m = M.EnhanceModel.init(M.EnhanceModelConfig.desk(seed=4))
    noisy = dsp.synth_utterance(rng, seconds=0.2).noisy
    a, ra = M.enhance(m, noisy, SelectGateConfig.dense())
    b, rb = M.enhance(m, noisy, SelectGateConfig.top_a(100))
    assert np.array_equal(a.samples, b.samples)
    assert ra.percent_of_dense == pytest.approx(100.0)
    assert ra.total_macs_per_s == rb.total_macs_per_s


def test_enhance_report_at_half_update(rng):
    m = M.EnhanceModel.init(M.EnhanceModelConfig.desk(seed=4))
    noisy = dsp.synth_utterance(rng, seconds=0.2).noisy
    _, dense = M.enhance(m, noisy, SelectGateConfig.dense())
    _, half = M.enhance(m, noisy, SelectGateConfig.top_a(50))
    assert half.gru_matvec_ratio == pytest.approx(2 / 3, abs=1e-15)
    assert half.extras["mean_update_percent"] == 50.0
    assert half.non_gru_macs_per_s == dense.non_gru_macs_per_s
    assert half.percent_of_dense == pytest.approx(100 * half.total_macs_per_s / dense.total_macs_per_s)
