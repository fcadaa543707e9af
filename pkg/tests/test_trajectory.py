import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from memgate.geometry import CameraPose, yaw_pitch
from memgate.trajectory import (
    Re10kError,
    TrainingPair,
    Trajectory,
    apply_history_dropout,
    export_re10k,
    forward_backward,
    gen_pattern,
    import_re10k,
    pose_close,
    synth_pseudo_loop,
)

FIXTURE = Path(__file__).parent / "data" / "re10k_fixture.txt"


def same_pose(a, b, tol=1e-6):
    return np.abs(a.rotation - b.rotation).max() <= tol and np.abs(a.center - b.center).max() <= tol


# -- patterns ---------------------------------------------------------------


def test_panoramic_closes():
    t = gen_pattern("panoramic", {"frames": 25})
    assert len(t) == 25
    assert same_pose(t[0], t[24])
    assert t.revisits == ((24, 0),)


def test_panoramic_yaw_steps():
    t = gen_pattern("panoramic", {"frames": 9})
    for k in range(9):
        a = math.radians(45.0 * k)
        assert np.allclose(t[k].forward, [math.sin(a), 0.0, math.cos(a)], atol=1e-12)


def test_revisit_has_exactly_three_returns():
    t = gen_pattern("revisit", {"frames": 61, "cycles": 3, "amplitude": 30})
    hits = [i for i in range(1, 61) if same_pose(t[i], t[0])]
    assert hits == [20, 40, 60]
    assert t.revisits == ((20, 0), (40, 0), (60, 0))


def test_revisit_amplitude_bound():
    t = gen_pattern("revisit", {"frames": 61, "cycles": 3, "amplitude": 30})
    yaws = [math.degrees(math.atan2(p.forward[0], p.forward[2])) for p in t]
    assert max(yaws) <= 30 + 1e-9 and min(yaws) >= -30 - 1e-9
    assert max(yaws) > 20 and min(yaws) < -20


def test_revisit_needs_room_for_cycles():
    with pytest.raises(ValueError):
        gen_pattern("revisit", {"frames": 9, "cycles": 3})


def test_loops_replay_and_closure():
    a = gen_pattern("loops", {"frames": 60}, seed=7)
    b = gen_pattern("loops", {"frames": 60}, seed=7)
    assert a.to_json() == b.to_json()
    assert a.revisits
    for ret, first in a.revisits:
        assert same_pose(a[ret], a[first])
    # the last declared return of each loop is its entry pose
    exits = [(ret, first) for ret, first in a.revisits if np.array_equal(a[first].forward, [0.0, 0.0, 1.0])]
    assert len(exits) == 3
    c = gen_pattern("loops", {"frames": 60}, seed=8)
    assert c.to_json() != a.to_json()


def test_loops_reject_bad_lengths():
    with pytest.raises(ValueError):
        gen_pattern("loops", {"frames": 40, "min_length": 0})
    with pytest.raises(ValueError):
        gen_pattern("loops", {"frames": 40, "min_length": 5, "max_length": 3})


def test_offset_return_shifts_along_camera_right():
    t = gen_pattern("offset", {"frames": 21, "offset": 0.1})
    assert len(t) == 21 and t.revisits == ()
    fwd = 11
    for k in range(10):
        ret, first = fwd + k, fwd - 2 - k
        shift = t[ret].center - t[first].center
        assert np.allclose(shift, 0.1 * t[first].right)
        assert np.array_equal(t[ret].rotation, t[first].rotation)


def test_offset_zero_declares_exact_returns():
    t = gen_pattern("offset", {"frames": 20, "offset": 0.0})
    assert len(t) == 20 and len(t.revisits) == 9


@pytest.mark.parametrize("kind", ["panoramic", "revisit", "loops", "offset"])
def test_too_few_frames(kind):
    with pytest.raises(ValueError):
        gen_pattern(kind, {"frames": 1})


def test_unknown_kind():
    with pytest.raises(ValueError, match="unknown pattern"):
        gen_pattern("spiral", {"frames": 10})


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(["panoramic", "revisit", "loops", "offset"]), st.integers(60, 120), st.integers(0, 1000), st.integers(1, 60))
def test_generators_deterministic_and_chunking(kind, n, seed, seg):
    params = {"frames": n, "segment_length": seg}
    a, b = gen_pattern(kind, params, seed), gen_pattern(kind, params, seed)
    assert a.to_json() == b.to_json()
    flat = [p for chunk in a.chunks() for p in chunk]
    assert len(flat) == n and all(x is y for x, y in zip(flat, a.poses))
    assert all(len(c) <= seg for c in a.chunks())
    for ret, first in a.revisits:
        assert pose_close(a[ret], a[first], 1e-6)


def test_segments_from_start():
    t = gen_pattern("panoramic", {"frames": 100})
    assert [(s.start, s.stop) for s in t.segments(1)] == [(1, 50), (50, 99), (99, 100)]


def test_json_round_trip():
    t = gen_pattern("loops", {"frames": 50}, seed=3)
    u = Trajectory.from_json(t.to_json())
    assert u.revisits == t.revisits and u.seed == 3 and u.kind == "loops"
    for a, b in zip(t, u):
        assert same_pose(a, b, 1e-12)


def test_forward_backward_mirror():
    fwd = [CameraPose(yaw_pitch(5.0 * i), [0, 0, 0.1 * i]) for i in range(6)]
    t = forward_backward(fwd)
    assert len(t) == 11
    assert t.revisits == tuple((6 + i, 4 - i) for i in range(5))


# -- RealEstate10K ----------------------------------------------------------


def numeric_fields(text):
    return [[float(v) for v in line.split()] for line in text.splitlines() if len(line.split()) > 1]


def test_identity_line():
    t = import_re10k("0 0.5 0.5 0.5 0.5 0 0 1 0 0 0 0 1 0 0 0 0 1 0\n")
    assert np.array_equal(t[0].rotation, np.eye(3))
    assert np.array_equal(t[0].center, np.zeros(3))


def test_fixture_round_trip():
    text = FIXTURE.read_text()
    t = import_re10k(text)
    assert len(t) == 10
    out = export_re10k(t)
    assert out.splitlines()[0] == text.splitlines()[0]
    a, b = numeric_fields(text), numeric_fields(out)
    assert len(a) == len(b) == 10
    for x, y in zip(a, b):
        assert len(x) == len(y) == 19
        assert x[0] == y[0]
        assert np.abs(np.array(x) - np.array(y)).max() <= 1e-9


def test_import_inverts_world_to_camera():
    t = import_re10k(FIXTURE.read_text())
    m = np.array(numeric_fields(FIXTURE.read_text())[3][7:]).reshape(3, 4)
    p = t[3]
    assert np.allclose(m[:, :3] @ p.center + m[:, 3], 0.0, atol=1e-12)
    assert np.allclose(p.rotation, m[:, :3].T)


def test_eighteen_fields_is_an_error():
    bad = "0 0.5 0.5 0.5 0.5 0 0 1 0 0 0 0 1 0 0 0 0 1 0\n1 0.5 0.5 0.5 0.5 0 0 1 0 0 0 0 1 0 0 0 0 1\n"
    with pytest.raises(Re10kError, match="line 2"):
        import_re10k(bad)


def test_non_rotation_is_an_error():
    with pytest.raises(Re10kError, match="line 1"):
        import_re10k("0 0.5 0.5 0.5 0.5 0 0 2 0 0 0 0 1 0 0 0 0 1 0\n")


def test_empty_file_is_an_error():
    with pytest.raises(Re10kError):
        import_re10k("\n\n")


# -- training pairs ---------------------------------------------------------


def test_pseudo_loop_example():
    order, pairs = synth_pseudo_loop(5, 1)
    assert order == [0, 1, 2, 3, 4, 3, 2, 1, 0]
    assert [(p.target, p.history) for p in pairs] == [(3, 4), (2, 3), (1, 2), (0, 1)]


def rederive(n, stride):
    pairs = []
    for g in range(n - 2, -1, -1):
        h = g + stride
        if h >= n:
            h = g - stride
        pairs.append((h, g))
    return pairs


@pytest.mark.parametrize("stride", [1, 2, 3])
def test_pseudo_loop_matches_rederivation(stride):
    _, pairs = synth_pseudo_loop(49, stride)
    assert [(p.history, p.target) for p in pairs] == rederive(49, stride)


@given(st.integers(2, 200), st.data())
def test_no_identity_pairs(n, data):
    stride = data.draw(st.integers(1, n - 1))
    _, pairs = synth_pseudo_loop(n, stride)
    assert all(p.history != p.target and 0 <= p.history < n for p in pairs)


@pytest.mark.parametrize("n, stride", [(5, 0), (5, 5), (5, -1), (1, 1)])
def test_pseudo_loop_rejects(n, stride):
    with pytest.raises(ValueError):
        synth_pseudo_loop(n, stride)


def test_dropout_extremes():
    pairs = [TrainingPair(i + 1, i, 1) for i in range(50)]
    assert apply_history_dropout(pairs, 0.0, 1) == pairs
    assert all(p.history is None for p in apply_history_dropout(pairs, 1.0, 1))
    with pytest.raises(ValueError):
        apply_history_dropout(pairs, 1.5)


def test_dropout_rate_binomial_bound():
    pairs = [TrainingPair(i + 1, i, 1) for i in range(10_000)]
    dropped = sum(p.history is None for p in apply_history_dropout(pairs, 0.3, seed=11))
    sd = math.sqrt(10_000 * 0.3 * 0.7)
    assert abs(dropped - 3000) <= 3 * sd


def test_dropout_deterministic():
    pairs = [TrainingPair(i + 1, i, 1) for i in range(100)]
    assert apply_history_dropout(pairs, 0.5, 4) == apply_history_dropout(pairs, 0.5, 4)
