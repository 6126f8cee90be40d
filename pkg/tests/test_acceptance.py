"""End-to-end acceptance criteria 1 to 11.

Each test appends one ``criterion k: PASS|FAIL ...`` line that is printed in
the terminal summary.  Tolerances are pinned to the acceptance text.
"""

import json
import time

import numpy as np
import pytest

from sgdual.cli import main
from sgdual.decay import dilation_field, rotation_field, verify_decay_bounds, zero_field
from sgdual.density import Gaussian, PowerTailBump, UniformBall, UniformOnDomain, mollify_truncate, quantize
from sgdual.diagnostics import check_numeric_inequality
from sgdual.eulerian import (TestFunctionBattery, change_of_variables_check, recover_trajectory, residual_sg1,
                             residual_sg2)
from sgdual.flow import integrate, make_state, velocity
from sgdual.geometry import make_domain
from sgdual.ot import solve_weights, transport_forward

pytestmark = pytest.mark.acceptance

UNIT_CUBE = {"kind": "box", "center": [0.5, 0.5, 0.5], "half_widths": [0.5, 0.5, 0.5]}
FAMILY_SEED = 0
FAMILY_N = (250, 500, 1000)
FAMILY_DT, FAMILY_T = 0.01, 0.1


def gaussian_spec():
    return mollify_truncate(Gaussian(center=[0.5, 0.5, 0.5], sigma=0.2), 1.0)


def emit(verdicts, k, ok, msg):
    verdicts.append(f"criterion {k}: {'PASS' if ok else 'FAIL'} {msg}")
    return ok


def battery_stats(states, battery):
    """Median over the battery of per-test statistics."""
    snaps = [recover_trajectory(states, k) for k in range(len(states))]
    sg2 = [np.median([abs(residual_sg2(s, b)) for s in snaps]) for b in battery]
    sg1 = [np.linalg.norm(residual_sg1(snaps, b)) for b in battery]
    gap = [np.median([change_of_variables_check(s.diagram, s.cloud.masses, b)[2] for s in states])
           for b in battery]
    return {"sg2": float(np.median(sg2)), "sg1": float(np.median(sg1)), "gap": float(np.median(gap))}


# --------------------------------------------------------------------------- shared runs


@pytest.fixture(scope="module")
def unit_cube():
    return make_domain(UNIT_CUBE)


@pytest.fixture(scope="module")
def steady_run(unit_cube):
    t0 = time.perf_counter()
    cloud = quantize(UniformOnDomain(unit_cube), 512, seed=0, tol=1e-6, max_iter=1000)
    state = make_state(unit_cube, cloud, 0.0, 1e-8)
    speed = float(np.linalg.norm(velocity(state), axis=1).max())
    traj = integrate(state, 1e-2, 1.0, "rk2")
    return {"traj": traj, "speed": speed, "runtime": time.perf_counter() - t0, "y0": cloud.positions}


@pytest.fixture(scope="module")
def rotation_run():
    ball = make_domain({"kind": "ball", "center": [0, 0, 0], "radius": 1.0, "facets": 320})
    from sgdual.density import WeightedPointCloud

    state = make_state(ball, WeightedPointCloud([[0.3, 0.0, 0.2]], [1.0]), 0.0, 1e-8)
    return integrate(state, 1e-2, 2 * np.pi, "rk4")


@pytest.fixture(scope="module")
def family(unit_cube):
    out = {}
    battery = TestFunctionBattery.seeded(unit_cube, 12, 0, T=FAMILY_T)
    for n in FAMILY_N:
        cloud = quantize(gaussian_spec(), n, seed=FAMILY_SEED)
        traj = integrate(make_state(unit_cube, cloud, 0.0, 1e-8), FAMILY_DT, FAMILY_T, "rk2")
        out[n] = {"traj": traj, **battery_stats(traj.states, battery)}
    return out


@pytest.fixture(scope="module")
def refinement(unit_cube):
    cloud = quantize(gaussian_spec(), 100, seed=0)
    dt = 0.04
    return {h: integrate(make_state(unit_cube, cloud, 0.0, 1e-10), h, 1.0, "rk2", keep_states=False)
            for h in (dt, dt / 2, dt / 4)}


# --------------------------------------------------------------------------- criteria


def test_c01_steady_state(steady_run, verdicts):
    r = steady_run
    disp = max(np.linalg.norm(s.positions - r["y0"], axis=1).max() for s in r["traj"].states)
    ok = r["speed"] <= 1e-5 and disp <= 1e-4 and r["runtime"] <= 300
    emit(verdicts, 1, ok, f"max|U|={r['speed']:.2e} (<=1e-5), max displacement={disp:.2e} (<=1e-4), "
                          f"runtime={r['runtime']:.0f}s (<=300)")
    assert ok


def test_c02_single_particle_rotation(rotation_run, verdicts):
    tr = rotation_run
    y0, y1 = tr.states[0].positions[0], tr.states[-1].positions[0]
    ret = float(np.linalg.norm(y1 - y0))
    dz = max(r.vertical_drift for r in tr.records)
    e = [r.geostrophic_energy for r in tr.records]
    de = max(abs(v - e[0]) for v in e)
    ok = ret <= 1e-5 and dz <= 1e-12 and de <= 1e-10
    emit(verdicts, 2, ok, f"return error={ret:.2e} (<=1e-5), y3 drift={dz:.1e} (<=1e-12), "
                          f"energy drift={de:.2e} (<=1e-10)")
    assert ok


def test_c03_ot_correctness(unit_cube, verdicts):
    cloud = quantize(gaussian_spec(), 1000, seed=0)
    sol = solve_weights(unit_cube, cloud, tol=1e-8)
    d = sol.diagram
    rng = np.random.default_rng(0)
    X = rng.uniform(0.0, 1.0, (10 ** 6, 3))
    lab = transport_forward(d, X)
    p = np.bincount(lab, minlength=d.n) / len(X)
    se = np.sqrt(p * (1 - p) / len(X))
    z = np.abs(d.volumes - p) / np.maximum(se, 1e-300)
    outside = int(np.count_nonzero(np.abs(d.volumes - p) > 3 * se))
    # monotonicity on cross-cell pairs
    a, b = rng.integers(0, len(X), (2, 10 ** 4))
    sel = lab[a] != lab[b]
    Y = d.positions
    margin = float(np.einsum("ij,ij->i", Y[lab[a[sel]]] - Y[lab[b[sel]]], X[a[sel]] - X[b[sel]]).min())
    ok = sol.residual <= 1e-8 and sol.iterations <= 30 and outside == 0 and margin >= -1e-12
    emit(verdicts, 3, ok, f"residual={sol.residual:.1e} in {sol.iterations} iterations (<=30); "
                          f"cells outside 3 SE={outside}/{d.n} (max z {z.max():.2f}); "
                          f"monotonicity margin={margin:.2e} on {int(sel.sum())} pairs")
    assert ok


def test_c04_c05_invariants_over_runs(steady_run, rotation_run, family, refinement, verdicts):
    runs = [steady_run["traj"], rotation_run] + [f["traj"] for f in family.values()] + list(refinement.values())
    margin = max(r.bound_margin for tr in runs for r in tr.records)
    ok4 = margin <= 1e-12
    emit(verdicts, 4, ok4, f"max(|U|-|y|-d) over {len(runs)} runs = {margin:.3e} (<=1e-12)")
    ratio = max(r.vertical_drift / max(r.step, 1) for tr in runs for r in tr.records)
    ok5 = ratio <= 1e-12
    emit(verdicts, 5, ok5, f"max y3 drift per step = {ratio:.1e} (<=1e-12)")
    assert ok4 and ok5


def test_c06_decay_lab(verdicts):
    t0 = time.perf_counter()
    times = (0.1, 0.5, 1.0)
    cases = [(zero_field(), PowerTailBump(), ("i", "ii")), (zero_field(), UniformBall(1.0), ("iii",)),
             (dilation_field(), PowerTailBump(), ("i", "ii")), (rotation_field(), PowerTailBump(), ("i", "ii"))]
    res = [r for f, rho, bnd in cases for r in verify_decay_bounds(f, rho, times, samples=10 ** 4, seed=0, bounds=bnd)]
    runtime = time.perf_counter() - t0
    worst = max(r.max_violation for r in res)
    ok = all(r.verdict == "PASS" for r in res) and worst <= 1e-9 and runtime <= 60
    emit(verdicts, 6, ok, f"{len(res)} bound checks, max relative violation={worst:.2e} (<=1e-9), "
                          f"runtime={runtime:.1f}s (<=60)")
    assert ok


def test_c07_inequality(verdicts):
    r = check_numeric_inequality(samples=10 ** 5, seed=0, ks=(1, 2, 3, 4, 5))
    ok = r.violations == 0
    emit(verdicts, 7, ok, f"{r.violations} violations in {r.samples} samples x 5 exponents")
    assert ok


def test_c08_change_of_variables(family, verdicts):
    gaps = [family[n]["gap"] for n in FAMILY_N]
    ok = all(b < a for a, b in zip(gaps, gaps[1:]))
    emit(verdicts, 8, ok, "median gap " + ", ".join(f"N={n}: {g:.3e}" for n, g in zip(FAMILY_N, gaps))
         + " (strictly decreasing)")
    assert ok


def test_c09_weak_residuals(family, steady_run, unit_cube, verdicts):
    sg2 = [family[n]["sg2"] for n in FAMILY_N]
    sg1 = [family[n]["sg1"] for n in FAMILY_N]
    mono = all(b <= a for a, b in zip(sg2, sg2[1:])) and all(b <= a for a, b in zip(sg1, sg1[1:]))
    steady = battery_stats(steady_run["traj"].states, TestFunctionBattery.seeded(unit_cube, 12, 0, T=1.0))
    ok = mono and steady["sg2"] <= 1e-8 and steady["sg1"] <= 1e-8
    emit(verdicts, 9, ok, "median |sg2| " + ", ".join(f"{v:.2e}" for v in sg2)
         + "; median |sg1| " + ", ".join(f"{v:.2e}" for v in sg1)
         + f" (nonincreasing: {mono}); steady |sg2|={steady['sg2']:.2e}, |sg1|={steady['sg1']:.2e} (<=1e-8)")
    assert ok


def test_c10_self_convergence(refinement, verdicts):
    h = sorted(refinement, reverse=True)
    ref = refinement[h[2]].states[-1].positions
    e1 = float(np.abs(refinement[h[0]].states[-1].positions - ref).max())
    e2 = float(np.abs(refinement[h[1]].states[-1].positions - ref).max())
    order = float(np.log2(e1 / e2))

    def drift(key, tr):
        e = [getattr(r, key) for r in tr.records]
        return max(abs(v - e[0]) for v in e)

    g1, g2 = drift("geostrophic_energy", refinement[h[0]]), drift("geostrophic_energy", refinement[h[1]])
    t1, t2 = drift("transport_energy", refinement[h[0]]), drift("transport_energy", refinement[h[1]])
    ok = order >= 1.8 and g1 / g2 >= 3
    emit(verdicts, 10, ok, f"position errors {e1:.2e}, {e2:.2e} (order {order:.2f} >= 1.8); geostrophic drift "
                           f"{g1:.2e} -> {g2:.2e} (factor {g1 / g2:.2f} >= 3); transport-energy drift factor "
                           f"{t1 / t2:.2f} (info)")
    assert ok


def test_c11_determinism(tmp_path, verdicts):
    cfg = {"name": "det", "domain": UNIT_CUBE, "N": 100, "seed": 0, "dt": 0.04, "T": 0.4, "scheme": "rk2",
           "density": {"kind": "gaussian", "center": [0.5, 0.5, 0.5], "sigma": 0.2, "mollify": 1.0},
           "checkpoint_every": 5}
    outs = []
    for rep in ("a", "b"):
        p = tmp_path / f"{rep}.json"
        p.write_text(json.dumps({**cfg, "output_dir": str(tmp_path / rep)}))
        assert main(["run", "--config", str(p)]) == 0
        assert main(["recover", "--config", str(p)]) == 0
        assert main(["report", "--run-dir", str(tmp_path / rep / "det")]) == 0
        d = tmp_path / rep / "det"
        outs.append({f.relative_to(d).as_posix(): f.read_bytes() for f in sorted(d.rglob("*")) if f.is_file()})
    same = outs[0].keys() == outs[1].keys() and all(outs[0][k] == outs[1][k] for k in outs[0])
    emit(verdicts, 11, same, f"{len(outs[0])} output files byte-identical across repeats: {same}")
    assert same
