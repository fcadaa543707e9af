import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memgate.geometry import CameraPose, yaw_pitch
from memgate.metrics import (
    ConsistencyReport,
    MetricError,
    compare_reports,
    evaluate,
    pair_revisits,
    psnr,
    ssim,
)
from memgate.simworld import DriftConfig, SceneSpec, render, run_episode
from memgate.trajectory import Trajectory, forward_backward, gen_pattern


def noisy(sigma, seed=0, shape=(512, 512, 3)):
    rng = np.random.default_rng(seed)
    base = np.full(shape, 0.5)
    return base, base + sigma * rng.standard_normal(shape)


# -- PSNR -------------------------------------------------------------------


def test_psnr_identical_is_capped():
    a = np.random.default_rng(0).random((8, 8, 3))
    assert psnr(a, a) == 99.0


def test_psnr_zero_vs_one():
    assert psnr(np.zeros((4, 4, 3)), np.ones((4, 4, 3))) == 0.0


def test_psnr_matches_noise_level():
    a, b = noisy(0.1)
    assert abs(psnr(a, b) - 20.0) <= 0.5


def test_psnr_monotone_in_noise():
    values = [psnr(*noisy(s, seed=1)) for s in (0.01, 0.02, 0.05, 0.1, 0.2)]
    assert all(x > y for x, y in zip(values, values[1:]))


def test_psnr_shape_mismatch():
    with pytest.raises(MetricError):
        psnr(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


# -- SSIM -------------------------------------------------------------------


def test_ssim_identical_is_one():
    a = np.random.default_rng(2).random((32, 32, 3))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)


def test_ssim_constant_frames_closed_form():
    c1 = 0.01**2
    mu1, mu2 = 0.5, 0.25
    expected = (2 * mu1 * mu2 + c1) / (mu1**2 + mu2**2 + c1)
    assert ssim(np.full((16, 16), mu1), np.full((16, 16), mu2)) == pytest.approx(expected, abs=1e-12)


def test_ssim_negative_of_render_is_low():
    for seed in range(3):
        f = render(SceneSpec(seed=seed), CameraPose(yaw_pitch(60 * seed), [0, 0, 0]))
        assert ssim(f, 1.0 - f) < 0.2


def test_ssim_window_too_large():
    with pytest.raises(MetricError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


frames = st.integers(0, 2**32 - 1).map(lambda s: np.random.default_rng(s).random((16, 16, 3)))


@settings(max_examples=30)
@given(frames, frames)
def test_metric_symmetry(a, b):
    assert psnr(a, b) == psnr(b, a)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
    assert -1.0 <= ssim(a, b) <= 1.0


# -- pairing ----------------------------------------------------------------


def test_forward_backward_pairs_mirror():
    fwd = [CameraPose(yaw_pitch(7.0 * i), [0, 0, 0.05 * i]) for i in range(8)]
    t = forward_backward(fwd)
    pairs = pair_revisits(t).pairs
    assert len(pairs) == 7
    assert all(ret + first == 2 * 7 for ret, first in pairs)


def test_panoramic_single_pair():
    assert pair_revisits(gen_pattern("panoramic", {"frames": 25})).pairs == ((24, 0),)


def test_revisit_pairs_match_declared():
    t = gen_pattern("revisit", {"frames": 61, "cycles": 3, "amplitude": 30})
    assert pair_revisits(t).pairs == t.revisits


def test_loops_pairs_match_declared():
    t = gen_pattern("loops", {"frames": 80}, seed=7)
    assert set(pair_revisits(t).pairs) == set(t.revisits)


def test_pairing_prefers_earliest_match():
    p, q = CameraPose.identity(), CameraPose(yaw_pitch(40), [0, 0, 0])
    t = Trajectory((p, q, p, q, p))
    assert pair_revisits(t).pairs == ((2, 0), (3, 1), (4, 0))


def test_pairing_tolerance():
    p = CameraPose.identity()
    t = Trajectory((p, p.with_center([1e-5, 0, 0])))
    assert pair_revisits(t).pairs == ()
    assert pair_revisits(t, tolerance=1e-4).pairs == ((1, 0),)


def test_pairing_stable_under_reserialization():
    t = gen_pattern("loops", {"frames": 70}, seed=2)
    assert pair_revisits(Trajectory.from_json(t.to_json())).pairs == pair_revisits(t).pairs


# -- reports ----------------------------------------------------------------

SCENE = SceneSpec(seed=1)


def small_revisit():
    return gen_pattern("revisit", {"frames": 61, "cycles": 3, "amplitude": 30, "width": 48, "height": 48})


def test_zero_drift_full_memory_report():
    t = small_revisit()
    ep = run_episode(SCENE, t, drift=DriftConfig(0.0), seed=0)
    agg = evaluate(ep, pair_revisits(t)).aggregate()
    assert agg["psnr_mean"] == 99.0 and agg["ssim_mean"] == pytest.approx(1.0)


def test_memory_on_beats_off_per_pair():
    t = small_revisit()
    on = evaluate(run_episode(SCENE, t, seed=3), pair_revisits(t), "on")
    off = evaluate(run_episode(SCENE, t, seed=3, memory=False), pair_revisits(t), "off")
    for a, b in zip(on.pairs, off.pairs):
        assert a.psnr - b.psnr > 0 and a.ssim - b.ssim > 0
    table = compare_reports(on, off)
    assert table.splitlines()[0].split()[:3] == ["return", "first", "psnr_a"]
    assert "mean" in table


def test_empty_pairing_is_undefined():
    t = gen_pattern("offset", {"frames": 11, "width": 32, "height": 32})
    ep = run_episode(SCENE, t, seed=0)
    rep = evaluate(ep, pair_revisits(t))
    assert rep.pairs == [] and rep.aggregate()["defined"] is False
    assert "undefined" in rep.to_table()


def test_report_serialization():
    t = small_revisit()
    rep = evaluate(run_episode(SCENE, t, seed=1), pair_revisits(t), "x")
    back = ConsistencyReport.from_dict(json.loads(rep.to_json()))
    assert back.pairs == rep.pairs
    rows = rep.to_csv().splitlines()
    assert rows[0] == "return,first,psnr_db,ssim" and len(rows) == 4
    assert math.isclose(float(rows[1].split(",")[2]), rep.pairs[0].psnr)
    assert len({len(line) for line in rep.to_table().splitlines()[:4]}) == 1
