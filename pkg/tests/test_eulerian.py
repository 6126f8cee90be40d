import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sgdual.density import WeightedPointCloud, mollify_truncate, quantize, Gaussian
from sgdual.eulerian import (Bump, CellField, EulerianSnapshot, SupportError, TestFunctionBattery, TrajectoryError,
                             cell_quadrature, change_of_variables_check, dt_grad_pstar, fit_affine, fit_hessian,
                             fit_hessians, face_quadrature, llogl_monitor, recover_trajectory, recover_velocity,
                             residual_sg1, residual_sg2, tet_rule, tri_rule)
from sgdual.flow import J, integrate, make_state, velocity
from sgdual.ot import build_laguerre, solve_weights


def lattice(n, half=0.5):
    g = (np.arange(n) + 0.5) / n * 2 * half - half
    return np.array(np.meshgrid(g, g, g, indexing="ij")).reshape(3, -1).T


def interior(Y, n, half=0.5):
    return np.all(np.abs(Y) < half - 1.0 / n, axis=1)


@pytest.fixture(scope="module")
def lattice_state(cube):
    return make_state(cube, WeightedPointCloud.equal_mass(lattice(6)))


# --------------------------------------------------------------------------- time derivative


def test_dt_grad_pstar_quadratic_exact():
    t = np.array([0.0, 0.1, 0.25, 0.3])
    B = [np.array([[1 + 2 * s + 3 * s * s, s, 0.0]]) for s in t]
    for k, s in enumerate(t):
        assert np.allclose(dt_grad_pstar(t, B, k), [[2 + 6 * s, 1, 0]], atol=1e-12)


def test_dt_grad_pstar_errors():
    with pytest.raises(TrajectoryError):
        dt_grad_pstar([0.0], [np.zeros((2, 3))], 0)
    with pytest.raises(TrajectoryError):
        dt_grad_pstar([0, 1, 2], [np.zeros((2, 3)), np.zeros((3, 3)), np.zeros((2, 3))], 1)
    assert np.array_equal(dt_grad_pstar([0, 2], [np.zeros((1, 3)), np.ones((1, 3))], 0), np.full((1, 3), 0.5))


# --------------------------------------------------------------------------- Hessian fit


def test_hessian_identity_on_lattice(lattice_state):
    d = lattice_state.diagram
    H, low = fit_hessians(d)
    assert not low.any()
    sel = interior(d.positions, 6)
    assert np.abs(H[sel] - np.eye(3)).max() <= 0.1
    assert np.allclose(H, np.swapaxes(H, 1, 2), atol=1e-12)


@pytest.mark.parametrize("s", [0.5, 0.8])
def test_hessian_scales_inversely(cube, lattice_state, s):
    Y = lattice(6)
    st_ = make_state(cube, WeightedPointCloud.equal_mass(s * Y), tol=1e-11)
    assert np.abs(st_.barycenters - Y).max() < 1e-8
    H0, _ = fit_hessians(lattice_state.diagram)
    H1, _ = fit_hessians(st_.diagram)
    assert np.abs(H1 - H0 / s).max() < 1e-6


@given(st.floats(0.1, 10.0), st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_fit_affine_scaling_exact(s, seed):
    r = np.random.default_rng(seed)
    dy, db, w = r.normal(size=(8, 3)), r.normal(size=(8, 3)), r.uniform(0.1, 1, 8)
    assert np.allclose(fit_affine(s * dy, db, w), fit_affine(dy, db, w) / s, rtol=1e-9, atol=1e-12)


def test_hessian_single_cell_fallback(cube):
    d = build_laguerre(cube, (np.array([[0.1, 0, 0]]), [1.0]))
    f = fit_hessian(d, 0)
    assert f.low_confidence and f.neighbours == 0
    assert np.allclose(f.H, np.eye(3) * 1.0 / np.sqrt(3))


# --------------------------------------------------------------------------- quadrature


@pytest.mark.parametrize("deg", [1, 2, 3, 5])
def test_tet_rule_exact(deg):
    P, W = tet_rule(deg)
    assert W.sum() == pytest.approx(1 / 6, abs=1e-15)
    # int_simplex u^a v^b w^c = a! b! c! / (a+b+c+3)!
    from math import factorial
    for a in range(deg + 1):
        for b in range(deg + 1 - a):
            for c in range(deg + 1 - a - b):
                exact = factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 3)
                got = np.sum(W * P[:, 0] ** a * P[:, 1] ** b * P[:, 2] ** c)
                assert got == pytest.approx(exact, rel=1e-12)


@pytest.mark.parametrize("deg", [2, 5])
def test_tri_rule_exact(deg):
    P, W = tri_rule(deg)
    from math import factorial
    for a in range(deg + 1):
        for b in range(deg + 1 - a):
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)
            assert np.sum(W * P[:, 0] ** a * P[:, 1] ** b) == pytest.approx(exact, rel=1e-12)


def test_cell_quadrature_affine_exact_and_monte_carlo(cube, rng):
    Y = rng.uniform(-0.5, 0.5, (20, 3))
    d = solve_weights(cube, WeightedPointCloud.equal_mass(Y)).diagram
    q = cell_quadrature(d, 3)
    vol = np.bincount(q.cell, q.weights, d.n)
    assert np.allclose(vol, d.volumes, atol=1e-13)
    mom = np.array([np.bincount(q.cell, q.weights * q.points[:, j], d.n) for j in range(3)]).T
    assert np.allclose(mom, d.volumes[:, None] * d.barycenters, atol=1e-13)
    # Monte-Carlo oracle on x1^2 over each cell
    X = rng.uniform(-0.5, 0.5, (400_000, 3))
    lab = np.argmin(((X[:, None] - Y[None]) ** 2).sum(-1) - d.psi[None], axis=1)
    f = X[:, 0] ** 2
    for i in range(d.n):
        sel = lab == i
        mc = f[sel].sum() / len(X)
        se = np.sqrt(np.var(np.where(sel, f, 0.0)) / len(X))
        got = np.sum(q.weights[q.cell == i] * q.points[q.cell == i, 0] ** 2)
        assert abs(got - mc) <= 4 * se


def test_face_quadrature_divergence_theorem(cube, rng):
    Y = rng.uniform(-0.5, 0.5, (15, 3))
    d = build_laguerre(cube, (Y, np.full(15, 1 / 15)))
    q = face_quadrature(d, 3)
    # int_{boundary} x . n = 3 |cell|
    flux = np.bincount(q.cell, q.weights * np.einsum("ij,ij->i", q.points, q.normals), d.n)
    assert np.allclose(flux, 3 * d.volumes, atol=1e-13)


# --------------------------------------------------------------------------- test functions


def test_bump_gradient_and_support(cube):
    b = Bump((0.1, 0.0, -0.1), 0.3, 0.1, 0.8)
    x = np.array([[0.15, 0.05, -0.02]])
    h = 1e-6
    fd = np.array([(b.psi(x + h * e) - b.psi(x - h * e))[0] / (2 * h) for e in np.eye(3)])
    assert np.allclose(b.grad_psi(x)[0], fd, atol=1e-8)
    assert b.psi([[0.45, 0, -0.1]])[0] == 0.0 and np.all(b.grad_psi([[0.45, 0, -0.1]]) == 0)
    assert b.chi(0.1) == 0.0 and b.chi(0.8) == 0.0 and b.chi(0.45) == 1.0
    assert b.dchi(0.3) == pytest.approx((b.chi(0.3 + h) - b.chi(0.3 - h)) / (2 * h), abs=1e-7)
    assert b.supported_in(cube) and not Bump((0.4, 0, 0), 0.2).supported_in(cube)


def test_battery_seeded(cube):
    a = TestFunctionBattery.seeded(cube, 12, 0, T=1.0)
    assert a == TestFunctionBattery.seeded(cube, 12, 0, T=1.0) and len(a) == 12
    assert all(b.supported_in(cube) for b in a)


# --------------------------------------------------------------------------- reconstruction


def closed_form_snapshot(diagram, A, c):
    """Snapshot whose affine field is ``c + A x`` on every cell."""
    n = diagram.n
    H = np.broadcast_to(-A @ J.matrix.T, (n, 3, 3)).copy()  # A = -H J, J^T = -J^{-1} on the plane
    anchors = np.nan_to_num(diagram.barycenters)
    bdot = c - np.einsum("nij,nj->ni", H @ J.matrix, anchors)
    f = CellField(diagram.positions, bdot, H, np.zeros(n, bool), diagram.empty.copy(), anchors)
    return EulerianSnapshot(0.0, diagram, f)


def test_sg2_closed_form_divergence_free(cube):
    cloud = quantize(mollify_truncate(Gaussian(sigma=0.2), 1.0), 200, seed=3)
    d = solve_weights(cube, cloud).diagram
    x0 = np.array([0.05, -0.1, 0.0])
    snap = closed_form_snapshot(d, J.matrix, -J.matrix @ x0)
    X = np.random.default_rng(0).uniform(-0.5, 0.5, (50, 3))
    assert np.allclose(snap.velocity(X), J.apply(X - x0), atol=1e-12)
    for b in TestFunctionBattery.seeded(cube, 12, 0):
        assert abs(residual_sg2(snap, b)) <= 1e-8


def test_sg2_zero_field_and_support_error(lattice_state, cube):
    snap = closed_form_snapshot(lattice_state.diagram, np.zeros((3, 3)), np.zeros(3))
    b = Bump((0, 0, 0), 0.3)
    assert residual_sg2(snap, b) == 0.0 and residual_sg2(snap, b, method="volume") == 0.0
    with pytest.raises(SupportError):
        residual_sg2(snap, Bump((0.4, 0, 0), 0.3))


def test_recover_single_particle(ball):
    s = make_state(ball, WeightedPointCloud([[0.3, 0.0, 0.2]], [1.0]))
    tr = integrate(s, 0.1, 0.2, "rk4")
    snap = recover_trajectory(tr.states, 1)
    assert snap.field.low_confidence.all()
    assert np.abs(snap.field.bdot).max() < 1e-12
    assert np.allclose(snap.geostrophic_wind([[0.0, 0.0, 0.0]])[0, 2], 0.0)
    assert snap.density([[0.1, 0.1, 0.1]])[0] == pytest.approx(0.2)


def test_steady_lattice_cell_means_vanish(cube, lattice_state):
    tr = integrate(lattice_state, 0.05, 0.2, "rk2")
    for k in range(len(tr.states)):
        snap = recover_trajectory(tr.states, k)
        assert np.abs(snap.field.bdot).max() <= 1e-10
        assert np.abs(snap.cell_mean_velocity()).max() <= 1e-10
        assert abs(residual_sg2(snap, Bump((0.02, -0.01, 0.03), 0.3))) <= 1e-10
    snaps = [recover_trajectory(tr.states, k) for k in range(len(tr.states))]
    # u = 0 and the chi' term telescopes, so only the quadrature error of
    # int psi J(y - x) remains; it falls with the rule degree
    for lo in (0.02, -0.1):
        b = Bump((0.0, 0.0, 0.0), 0.35, lo, 0.18)
        r3 = np.linalg.norm(residual_sg1(snaps, b))
        r7 = np.linalg.norm(residual_sg1(snaps, b, degree=7))
        assert r3 <= 1e-6 and r7 <= 1e-8 and r7 < r3
    with pytest.raises(SupportError):
        residual_sg1(snaps, Bump((0.0, 0.0, 0.0), 0.35, 0.0, 0.5))


def test_manufactured_rotation(ball):
    """Targets ``S x`` rigidly rotated: ``u = (J - S^{-1} J) x`` in the continuum."""
    S = np.diag([1.4, 0.75, 1.0])
    g = np.linspace(-0.9, 0.9, 14)
    X = np.array(np.meshgrid(g, g, g, indexing="ij")).reshape(3, -1).T
    X = X[np.linalg.norm(X, axis=1) < 0.92]
    vor = build_laguerre(ball, (X, np.full(len(X), 1.0 / len(X))))
    keep = ~vor.empty
    X, m = X[keep], vor.volumes[keep]
    m = m / m.sum()
    dt = 0.01
    states = []
    for th in (-dt, 0.0, dt):
        R = np.array([[np.cos(th), -np.sin(th), 0], [np.sin(th), np.cos(th), 0], [0, 0, 1]])
        states.append(make_state(ball, WeightedPointCloud(X @ S.T @ R.T, m), th, tol=1e-11))
    mid = states[1]
    bdot = dt_grad_pstar([s.t for s in states], [s.barycenters for s in states], 1)
    snap = recover_velocity(0.0, mid.diagram, bdot, target_velocity=J.apply(mid.positions))
    b = snap.diagram.barycenters
    inner = np.linalg.norm(b, axis=1) < 0.6
    exact = b @ (J.matrix - np.linalg.inv(S) @ J.matrix).T
    got = snap.cell_mean_velocity()
    err = np.linalg.norm(got[inner] - exact[inner]) / np.linalg.norm(exact[inner])
    assert err <= 0.1


# --------------------------------------------------------------------------- change of variables


def test_change_of_variables_single_cell(cube):
    y0 = np.array([0.2, -0.1, 0.3])
    d = build_laguerre(cube, (y0[None], [1.0]))
    b = Bump((0.05, 0.0, 0.0), 0.4)
    dual, euler, gap = change_of_variables_check(d, [1.0], b, degree=9)
    assert np.allclose(dual, y0 * b.psi(d.barycenters)[0], atol=1e-15)
    # direct evaluation of int psi by Monte-Carlo over the single cell
    X = np.random.default_rng(1).uniform(-0.5, 0.5, (1_000_000, 3))
    f = b.psi(X)
    integral, se = f.mean(), f.std() / 1e3
    direct = np.linalg.norm(y0) * abs(b.psi(d.barycenters)[0] - integral)
    assert abs(gap - direct) <= 4 * np.linalg.norm(y0) * se


def test_change_of_variables_wide_bump(lattice_state):
    d = lattice_state.diagram
    dual, euler, gap = change_of_variables_check(d, lattice_state.cloud.masses, Bump((0, 0, 0), 1e4))
    assert gap <= 1e-8


# --------------------------------------------------------------------------- monitors


def test_llogl_monitor():
    out = llogl_monitor([0.5, 0.5], np.array([[np.e, 0, 0], [0.5, 0, 0]]), np.stack([np.eye(3) * 0.1] * 2))
    assert out["bdot_k1"] == pytest.approx(0.5 * np.e)
    assert out["bdot_k2"] == pytest.approx(0.5 * np.e)
    assert out["hess_k1"] == 0.0 and out["hess_k2"] == 0.0
