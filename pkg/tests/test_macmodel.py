import numpy as np
import pytest

from dgrnn import macmodel as mm
from dgrnn.dgru import SelectGateConfig, dgru_run

from conftest import random_inputs, random_weights


def test_fc_macs():
    assert mm.fc_macs(161, 320) == 51_520
    assert mm.fc_macs(320, 161) == 51_520
    assert mm.fc_macs(1, 1) == 1
    with pytest.raises(ValueError):
        mm.fc_macs(0, 3)


def test_gru_macs():
    assert mm.gru_macs(320, 320) == 615_360
    assert mm.gru_macs(1, 1) == 9
    with pytest.raises(ValueError):
        mm.gru_macs(0, 4)
    # Two layers at 100 frames/s against the published 124.98 M/s.
    assert 2 * mm.gru_macs(320, 320) * 100 / 1e6 == pytest.approx(124.98, rel=0.02)


@pytest.mark.parametrize("p, expected", [(100, 1.0), (75, 0.8333), (50, 0.6667), (25, 0.5), (0, 1 / 3)])
def test_dgru_scale(p, expected):
    assert mm.dgru_scale(p) == pytest.approx(expected, abs=5e-5)


def test_dgru_scale_affine():
    ps = np.linspace(0, 100, 11)
    vals = np.array([mm.dgru_scale(p) for p in ps])
    assert np.allclose(np.diff(vals, 2), 0.0, atol=1e-15)
    with pytest.raises(ValueError):
        mm.dgru_scale(120)


def test_report_dense_is_hundred_percent():
    rep = mm.report()
    assert rep.percent_of_dense == pytest.approx(100.0)
    assert rep.total_macs_per_s == rep.non_gru_macs_per_s + rep.gru_macs_per_s


def test_report_top_a_scales_gru_column():
    dense = mm.report()
    for p in (75, 50, 25):
        rep = mm.report(cfg=SelectGateConfig.top_a(p))
        assert rep.gru_macs_per_s == pytest.approx(dense.gru_macs_per_s * mm.dgru_scale(p))
        assert rep.non_gru_macs_per_s == dense.non_gru_macs_per_s
    rep50 = mm.report(cfg=SelectGateConfig.top_a(50))
    assert rep50.percent_of_dense == pytest.approx(69, abs=1.0)
    n, g = dense.non_gru_macs_per_s, dense.gru_macs_per_s
    assert rep50.percent_of_dense == pytest.approx(100 * (n + g * 2 / 3) / (n + g))


def test_report_uses_realised_percentage_for_odd_sizes():
    shape = mm.NetworkShape(9, 5, 1)
    rep = mm.report(shape, SelectGateConfig.top_a(50))
    # A = 3 of 5 -> 60 % realised.
    assert rep.gru_matvec_ratio == pytest.approx(mm.dgru_scale(60))


def test_measure_dense_run_equals_report(rng):
    J = 6
    w = random_weights(rng, J, J)
    _, _, stats = dgru_run(w, list(random_inputs(rng, 10, J)), cfg=SelectGateConfig.dense())
    shape = mm.NetworkShape(4, J, 1)
    got = mm.measure({"gru1": stats}, 100.0, shape)
    ref = mm.report(shape, SelectGateConfig.dense(), 100.0)
    assert got.total_macs_per_s == ref.total_macs_per_s
    assert got.gru_macs_per_s == ref.gru_macs_per_s
    assert got.percent_of_dense == pytest.approx(100.0)


@pytest.mark.parametrize("p", [25, 50, 75])
def test_measure_matvec_equals_analytic(rng, p):
    J = 8
    w = random_weights(rng, J, J)
    _, _, stats = dgru_run(w, list(random_inputs(rng, 12, J)), cfg=SelectGateConfig.top_a(p))
    got = mm.measure(stats)
    ref = mm.report(mm.NetworkShape(4, J, 1), SelectGateConfig.top_a(p))
    assert got.gru_matvec_macs_per_s == ref.gru_matvec_macs_per_s
    assert got.gru_matvec_ratio == mm.dgru_scale(p)


def test_measure_threshold_between_bounds(rng):
    J = 10
    w = random_weights(rng, J, J, scale=3.0)
    _, _, stats = dgru_run(w, list(random_inputs(rng, 20, J) * 2), cfg=SelectGateConfig.threshold())
    got = mm.measure(stats).gru_macs_per_s
    shape = mm.NetworkShape(1, J, 1)
    lo = mm.report(shape, SelectGateConfig.top_a(0)).gru_macs_per_s
    hi = mm.report(shape).gru_macs_per_s
    assert lo <= got <= hi


def test_measure_rejects_empty():
    with pytest.raises(ValueError):
        mm.measure([])


def test_serialisations_share_numbers():
    rep = mm.report(cfg=SelectGateConfig.top_a(50))
    kv = dict(line.split("=", 1) for line in mm.format_kv(rep).splitlines())
    for key in ("non_gru_macs_per_s", "gru_macs_per_s", "total_macs_per_s", "percent_of_dense"):
        assert float(kv[key]) == pytest.approx(getattr(rep, key))
    table = mm.format_table([("P=50", rep)])
    assert f"{rep.gru_macs_per_s / 1e6:.2f}" in table
    assert '"percent_of_dense"' in mm.to_json(rep)
