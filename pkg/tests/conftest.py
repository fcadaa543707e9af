import functools

import pytest

from memgate import gating, simworld

# Every gate trace produced during the run, as (decisions, tau_temp, prev).
GATE_TRACES: list = []
EPISODE_TRACES: list = []

_compute_gates = gating.compute_gates
_run_episode = simworld.run_episode


@functools.wraps(_compute_gates)
def _recording_compute_gates(targets, history, cfg=gating.GatingConfig(), **kw):
    out = _compute_gates(targets, history, cfg, **kw)
    GATE_TRACES.append((list(out), cfg.temporal_threshold, kw.get("prev")))
    return out


@functools.wraps(_run_episode)
def _recording_run_episode(scene, traj, gating_cfg=gating.GatingConfig(), *args, **kw):
    ep = _run_episode(scene, traj, gating_cfg, *args, **kw)
    EPISODE_TRACES.append((list(ep.decisions), gating_cfg.temporal_threshold))
    return ep


# installed before test modules import these names
gating.compute_gates = _recording_compute_gates
simworld.run_episode = _recording_run_episode

_RESULTS: dict = {}


def pytest_collection_modifyitems(session, config, items):
    # trace-invariant checks must see every trace, so they run last
    last = [it for it in items if it.get_closest_marker("run_last")]
    rest = [it for it in items if not it.get_closest_marker("run_last")]
    items[:] = rest + last


def pytest_configure(config):
    config.addinivalue_line("markers", "run_last: run after every other test")


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    rep = yield
    mark = item.get_closest_marker("acceptance")
    if mark is not None and (rep.when == "call" or rep.failed):
        num, title = mark.args
        prev = _RESULTS.get(num, (title, True))
        _RESULTS[num] = (title, prev[1] and rep.passed)
    return rep


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_RESULTS):
        title, ok = _RESULTS[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {title}")
