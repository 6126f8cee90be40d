import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgdual.density import WeightedPointCloud, mollify_truncate, quantize, Gaussian
from sgdual.diagnostics import (DiagnosticsReport, StreamingMonitor, build_report, check_numeric_inequality,
                                energy_identity_monitor, inequality_sides, monitor_row, pinv_psd)
from sgdual.flow import integrate, make_state


@pytest.mark.parametrize("a,b,k", [(1.0, 1.0, 1), (np.e, 1.0, 1), (0.5, 0.5, 3), (1e6, 1e6, 5), (1e-6, 1e6, 2)])
def test_inequality_examples(a, b, k):
    lhs, rhs = inequality_sides(a, b, k)
    assert lhs <= rhs


def test_inequality_values():
    lhs, rhs = inequality_sides(np.e, 1.0, 1)
    assert lhs == pytest.approx(np.e)
    assert rhs == pytest.approx(1 / np.e + 1 + np.e ** 2)


@given(st.floats(1e-8, 1e8), st.floats(1e-8, 1e8), st.integers(1, 5))
@settings(max_examples=300, deadline=None)
def test_inequality_property(a, b, k):
    lhs, rhs = inequality_sides(a, b, k)
    assert lhs <= rhs * (1 + 1e-12)


def test_check_numeric_inequality():
    r = check_numeric_inequality(samples=20_000, seed=1)
    assert r.passed and r.violations == 0 and r.worst_margin >= 0
    with pytest.raises(ValueError):
        check_numeric_inequality(samples=0)


def test_pinv_psd():
    H = np.diag([2.0, 0.5, 0.0])[None]
    assert np.allclose(pinv_psd(H)[0], np.diag([0.5, 2.0, 0.0]))


def test_energy_identity_single_and_rotation():
    # a single cell at rest: w = 0 on both sides
    assert energy_identity_monitor([1.0], np.zeros((1, 3)), np.eye(3)[None], np.zeros((1, 3))) == (0.0, 0.0)
    # w = -H U with H = I: lhs = |U|^2 = rhs
    U = np.array([[0.0, 0.3, 0.0], [0.1, -0.2, 0.0]])
    lhs, rhs = energy_identity_monitor([0.5, 0.5], np.zeros((2, 3)), np.stack([np.eye(3)] * 2), U)
    assert lhs == pytest.approx(rhs) and lhs == pytest.approx(0.5 * (0.09 + 0.05))


@pytest.fixture(scope="module")
def small_traj(cube):
    cloud = quantize(mollify_truncate(Gaussian(sigma=0.2), 1.0), 30, seed=1)
    return integrate(make_state(cube, cloud), 0.02, 0.1, "rk2")


def test_streaming_monitor_matches_batch(small_traj):
    mon = StreamingMonitor()
    for s in small_traj.states:
        mon.push(s)
    rows = mon.finish()
    assert len(rows) == len(small_traj.states)
    st_ = small_traj.states
    assert rows[2] == monitor_row(st_[1:4], 1)
    assert rows[0] == monitor_row(st_[0:3], 0)
    assert rows[-1] == monitor_row(st_[-3:], 2)


def test_report_round_trip(tmp_path, small_traj):
    rep = build_report(small_traj, {"name": "x"}, check_numeric_inequality(samples=1000))
    p = tmp_path / "r.json"
    rep.write(p)
    back = DiagnosticsReport.read(p)
    assert back.to_json() == rep.to_json()
    assert rep.max_margin() <= 1e-12
    assert rep.max_vertical_drift() == 0.0
    d = json.loads(p.read_text())
    d["schema"] = 99
    p.write_text(json.dumps(d))
    with pytest.raises(ValueError):
        DiagnosticsReport.read(p)
