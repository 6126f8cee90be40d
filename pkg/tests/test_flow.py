import numpy as np
import pytest

from sgdual.density import WeightedPointCloud, mollify_truncate, quantize, Gaussian
from sgdual.flow import (J, StalenessError, DualState, geostrophic_energy, integrate, make_state, step,
                         transport_energy, velocity)
from sgdual.ot import build_laguerre


def test_rotation_operator():
    M = J.matrix
    assert np.array_equal(M @ J.e3, np.zeros(3))
    assert np.array_equal(M.T, -M)
    assert np.array_equal((M @ M)[:2, :2], -np.eye(2))
    v = np.random.default_rng(0).normal(size=(5, 3))
    assert np.array_equal(J.apply(v), v @ M.T)
    assert np.all(J.apply(v)[:, 2] == 0.0)


def test_single_particle_ball_velocity(ball):
    s = make_state(ball, WeightedPointCloud([[0.3, 0.0, 0.2]], [1.0]))
    assert np.allclose(s.barycenters, 0, atol=1e-14)
    assert np.allclose(velocity(s), [[0.0, 0.3, 0.0]], atol=1e-14)
    assert geostrophic_energy(s) == pytest.approx(0.5 * 0.09, abs=1e-14)


def test_staleness(cube):
    cloud = WeightedPointCloud([[-0.2, 0, 0], [0.2, 0.1, 0]], [0.5, 0.5])
    s = make_state(cube, cloud)
    other = build_laguerre(cube, (np.array([[-0.1, 0, 0], [0.2, 0.1, 0]]), [0.5, 0.5]))
    with pytest.raises(StalenessError):
        velocity(DualState(0.0, cloud, s.potentials, other, s.residual, s.tol))
    with pytest.raises(StalenessError):
        velocity(DualState(0.0, cloud, s.potentials, s.diagram, 1.0, s.tol))


def test_zero_velocity_state_is_fixed(cube):
    # a symmetric 2x2x2 lattice is centroidal in the cube
    g = np.array([-0.25, 0.25])
    Y = np.array(np.meshgrid(g, g, g, indexing="ij")).reshape(3, -1).T
    s = make_state(cube, WeightedPointCloud.equal_mass(Y))
    assert np.abs(velocity(s)).max() < 1e-14
    s1 = step(s, 0.1, "rk4")
    assert np.abs(s1.positions - Y).max() <= 1e-12


@pytest.mark.parametrize("scheme", ["euler", "rk2", "rk4"])
def test_step_invariants(cube, scheme):
    cloud = quantize(mollify_truncate(Gaussian(sigma=0.2), 1.0), 30, seed=2)
    s = make_state(cube, cloud)
    s1 = step(s, 0.05, scheme)
    assert s1.t == pytest.approx(0.05)
    assert np.array_equal(s1.cloud.masses, cloud.masses)
    assert np.array_equal(s1.positions[:, 2], cloud.positions[:, 2])
    assert s1.residual <= s1.tol
    U = velocity(s1)
    assert np.all(U[:, 2] == 0.0)
    assert np.all(np.linalg.norm(U, axis=1) <= np.linalg.norm(s1.positions, axis=1) + cube.d_Omega + 1e-12)
    with pytest.raises(ValueError):
        step(s, -1.0, scheme)


def test_integrate_zero_time(cube):
    cloud = quantize(mollify_truncate(Gaussian(sigma=0.2), 1.0), 10, seed=2)
    s = make_state(cube, cloud)
    tr = integrate(s, 0.1, 0.0)
    assert len(tr.states) == 1 and tr.states[0] is s and len(tr.records) == 1


def test_integrate_lands_on_T_and_resumes_bitwise(cube):
    cloud = quantize(mollify_truncate(Gaussian(sigma=0.2), 1.0), 25, seed=4)
    s = make_state(cube, cloud)
    full = integrate(s, 0.03, 0.1, "rk2")
    assert full.states[-1].t == 0.1
    assert [r.step for r in full.records] == [0, 1, 2, 3, 4]
    mid = full.states[2]
    resumed = integrate(make_state(cube, mid.cloud, mid.t, warm_start=mid.potentials.psi), 0.03, 0.1, "rk2",
                        start_step=2, t_origin=0.0, y3_0=cloud.positions[:, 2])
    assert np.array_equal(resumed.states[-1].positions, full.states[-1].positions)
    assert resumed.states[-1].t == full.states[-1].t


def test_weak_continuity(cube):
    cloud = quantize(mollify_truncate(Gaussian(sigma=0.2), 1.0), 40, seed=6)
    s = make_state(cube, cloud)
    dt = 0.02
    s1 = step(s, dt, "rk2")
    c, r = np.array([0.05, 0.0, 0.0]), 0.4

    def phi(y):
        q = ((y - c) ** 2).sum(1) / r ** 2
        return np.where(q < 1, np.exp(1 - 1 / np.maximum(1 - q, 1e-300)), 0.0)

    # sup |grad phi| of the bump, bounded on a fine radial grid
    s_ = np.linspace(0, 1, 100001)[:-1]
    grad = (2 * np.sqrt(s_) / r) * np.exp(1 - 1 / (1 - s_)) / (1 - s_) ** 2
    lhs = abs(np.sum(cloud.masses * (phi(s1.positions) - phi(s.positions))))
    umax = max(np.linalg.norm(velocity(s), axis=1).max(), np.linalg.norm(velocity(s1), axis=1).max())
    assert lhs <= dt * grad.max() * umax * (1 + 10 * dt)


def test_single_particle_rotation_energy(ball):
    s = make_state(ball, WeightedPointCloud([[0.3, 0.0, 0.2]], [1.0]))
    tr = integrate(s, 0.05, 1.0, "rk4")
    e = [r.geostrophic_energy for r in tr.records]
    # rk4 damps a rotation by dt^6/144 per step in squared amplitude
    bound = 20 * 0.05 ** 6 / 144 * e[0] * 2
    assert max(abs(v - e[0]) for v in e) < bound
    te = [r.transport_energy for r in tr.records]
    assert max(abs(v - te[0]) for v in te) < 1e-8
    assert transport_energy(s) > 0
