import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from memgate.gating import (
    GateDecision,
    GatingConfig,
    Reason,
    compute_gates,
    format_trace,
    parse_trace,
    relevance_matrix,
    temporal_violations,
)
from memgate.geometry import CameraPose, OverlapConfig, fov_overlap, translation_distance, yaw_pitch


def random_pose(rng):
    return CameraPose(yaw_pitch(rng.uniform(-180, 180), rng.uniform(-40, 40)), rng.uniform(-1, 1, 3))


def history_ring(n=12):
    return [CameraPose(yaw_pitch(30.0 * i), [0.05 * i, 0, 0]) for i in range(n)]


def test_identical_target_scores_one():
    h = history_ring()
    c = relevance_matrix([h[3]], h)
    assert c[0, 3] == 1.0


def test_relevance_arithmetic():
    # overlap 0.8 with distance 0.4 at weight 0.5 gives 0.6
    a = CameraPose.identity()
    cfg = GatingConfig(overlap=OverlapConfig(grid=10, scene_diameter=1.0))
    for yaw in np.linspace(0, 60, 601):
        b = CameraPose(yaw_pitch(yaw), [0.4, 0, 0])
        if fov_overlap(a, b, cfg.overlap) == 0.8:
            break
    else:
        pytest.fail("no yaw gives overlap 0.8")
    assert translation_distance(a, b, cfg.overlap) == pytest.approx(0.4)
    assert relevance_matrix([a], [b], cfg)[0, 0] == pytest.approx(0.6, abs=1e-12)


def test_relevance_matches_loop_oracle():
    rng = np.random.default_rng(0)
    t = [random_pose(rng) for _ in range(8)]
    h = [random_pose(rng) for _ in range(32)]
    cfg = GatingConfig(overlap=OverlapConfig(grid=16, scene_diameter=2.0, distance_weight=0.5))
    c = relevance_matrix(t, h, cfg)
    for i, a in enumerate(t):
        for j, b in enumerate(h):
            rho = oracles.grid_overlap(a, b, 16, 1.0)
            d = min(float(np.linalg.norm(a.center - b.center)) / 2.0, 1.0)
            assert c[i, j] == pytest.approx(rho - 0.5 * d, abs=1e-12)


def test_empty_history():
    out = compute_gates(history_ring(3), [])
    assert [d.gate for d in out] == [0, 0, 0]
    assert all(d.ref is None and d.reason is Reason.EMPTY_HISTORY and d.score == 0.0 for d in out)


def test_exact_match_opens_gate():
    h = history_ring()
    (d,) = compute_gates([h[5]], h)
    assert (d.gate, d.ref, d.score, d.reason) == (1, 5, 1.0, Reason.NONE)


def test_static_view_alternates():
    h = history_ring()
    out = compute_gates([h[7]] * 4, h, GatingConfig(temporal_threshold=2))
    assert [d.gate for d in out] == [1, 0, 1, 0]
    assert [d.ref for d in out] == [7, 7, 7, 7]
    assert out[1].reason is Reason.TEMPORAL_REDUNDANCY
    ref = oracles.brute_force_gates([h[7]] * 4, h, 0.3, 0.6, 2, 0.5, 16, 1.0, 1.0)
    assert [g for _, _, g in ref] == [1, 0, 1, 0]


def test_low_score_and_far_distance():
    a = CameraPose.identity()
    behind = CameraPose(yaw_pitch(180), [0, 0, 0])
    (d,) = compute_gates([a], [behind])
    assert (d.gate, d.reason) == (0, Reason.LOW_SCORE)
    # full overlap, but far away: score 1 - 0.5 * 0.8 = 0.6 passes, distance 0.8 fails
    far = CameraPose.identity().with_center([0, 0, -0.8])
    cfg = GatingConfig(overlap=OverlapConfig(scene_diameter=1.0))
    (d,) = compute_gates([a], [far], cfg)
    assert (d.gate, d.reason) == (0, Reason.FAR_DISTANCE)


def test_ties_go_to_smallest_index():
    p = CameraPose(yaw_pitch(10), [0, 0, 0])
    h = [CameraPose(yaw_pitch(90), [0, 0, 0]), p, p, p]
    (d,) = compute_gates([p], h)
    assert d.ref == 1


def test_history_ids_and_start():
    h = history_ring(4)
    out = compute_gates([h[2], h[0]], h, history_ids=[10, 20, 30, 40], start=50)
    assert [(d.target, d.ref) for d in out] == [(50, 30), (51, 10)]


def test_prev_carries_temporal_rule():
    h = history_ring()
    prev = GateDecision(9, 1.0, 4, 1)
    (d,) = compute_gates([h[5]], h, prev=prev)
    assert (d.gate, d.reason) == (0, Reason.TEMPORAL_REDUNDANCY)
    (d,) = compute_gates([h[5]], h, prev=None)
    assert d.gate == 1


def test_history_ids_length_checked():
    with pytest.raises(ValueError):
        compute_gates(history_ring(2), history_ring(3), history_ids=[0, 1])


def test_config_validation():
    with pytest.raises(ValueError):
        GatingConfig(temporal_threshold=-1)
    with pytest.raises(ValueError):
        GatingConfig(score_threshold=float("nan"))


def test_disabled_keeps_match():
    d = GateDecision(3, 0.9, 1, 1).disabled()
    assert (d.gate, d.ref, d.reason) == (0, 1, Reason.MEMORY_DISABLED)


# -- properties -------------------------------------------------------------


instances = st.tuples(
    st.integers(0, 2**32 - 1), st.integers(1, 10), st.integers(0, 15),
    st.floats(-0.5, 1.0), st.floats(0.0, 1.0), st.integers(0, 4),
)


def make_instance(seed, n, f):
    rng = np.random.default_rng(seed)
    h = [random_pose(rng) for _ in range(f)]
    t = [h[rng.integers(f)] if f and rng.random() < 0.4 else random_pose(rng) for _ in range(n)]
    return t, h


@settings(max_examples=60, deadline=None)
@given(instances)
def test_gates_consistent_with_rules(inst):
    seed, n, f, tc, td, tt = inst
    t, h = make_instance(seed, n, f)
    cfg = GatingConfig(tc, td, tt)
    out = compute_gates(t, h, cfg)
    assert out == compute_gates(t, h, cfg)  # deterministic
    assert temporal_violations(out, tt) == []
    for d in out:
        if d.gate == 1:
            assert d.ref is not None and d.score >= tc and d.distance <= td
        if not h:
            assert d.gate == 0 and d.ref is None


@settings(max_examples=60, deadline=None)
@given(instances, st.floats(0, 0.5), st.floats(0, 0.5))
def test_tightening_thresholds_never_opens_gates(inst, up, down):
    seed, n, f, tc, td, _ = inst
    t, h = make_instance(seed, n, f)
    base = compute_gates(t, h, GatingConfig(tc, td, 0))
    tight = compute_gates(t, h, GatingConfig(tc + up, td - down, 0))
    for a, b in zip(base, tight):
        assert not (a.gate == 0 and b.gate == 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-5, 5))
def test_argmax_invariant_to_row_shift(seed, shift):
    t, h = make_instance(seed, 6, 12)
    c = relevance_matrix(t, h)
    assert np.array_equal(np.argmax(c + shift, axis=1), np.argmax(c, axis=1))
    assert [d.ref for d in compute_gates(t, h)] == list(np.argmax(c, axis=1))


# -- trace format -----------------------------------------------------------


def test_trace_round_trip():
    h = history_ring()
    out = compute_gates([h[1], h[1], CameraPose(yaw_pitch(180), [0, 0, 0])], h) + compute_gates(history_ring(1), [])
    back = parse_trace(format_trace(out))
    assert [(d.target, d.score, d.ref, d.gate, d.reason) for d in back] == [
        (d.target, d.score, d.ref, d.gate, d.reason) for d in out
    ]


def test_trace_parse_errors():
    with pytest.raises(ValueError, match="line 2"):
        parse_trace("0, 1.0, 0, 1, none\n1, 1.0, 0\n")
    with pytest.raises(ValueError):
        parse_trace("0, 1.0, 0, 1, bogus\n")


def test_temporal_violations_detects_close_refs():
    seq = [GateDecision(0, 1, 3, 1), GateDecision(1, 1, 4, 1), GateDecision(2, 1, 9, 1)]
    assert temporal_violations(seq, 2) == [1]
    assert temporal_violations(seq[1:], 2, prev=seq[0]) == [1]
