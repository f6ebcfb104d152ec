import numpy as np
import pytest

from mixfunn import autodiff as ad
from mixfunn.physics import FunctionModel, LossContext, icbc_loss, jcos, jexp, jsin, residual_loss, total_loss
from mixfunn.problems import (BurgersParams, OscillatorParams, WellParams, burgers, burgers_reference,
                              burgers_stable_dt, damped_oscillator, forced_oscillator, oscillator_reference,
                              oscillator_rk4, quantum_well, steady_state_amplitude, well_eigenfunction,
                              well_eigenvalues)


class TestOscillatorReference:
    def test_initial_conditions(self):
        p = OscillatorParams()
        assert oscillator_reference(p, 0.0) == pytest.approx(1.0)
        h = 1e-6
        v = (oscillator_reference(p, h) - oscillator_reference(p, -h)) / (2 * h)
        assert abs(v) < 1e-8

    def test_matches_rk4_long_horizon(self):
        p = OscillatorParams()
        ts, xs = oscillator_rk4(p, 150.0, 1e-3)
        assert np.max(np.abs(xs - oscillator_reference(p, ts))) < 1e-6

    def test_forced_matches_rk4(self):
        p = OscillatorParams(F0=1.0, omega=0.9)
        ts, xs = oscillator_rk4(p, 60.0, 1e-3)
        assert np.max(np.abs(xs - oscillator_reference(p, ts))) < 1e-6

    def test_near_lightly_damped_cosine(self):
        # x ~ sin(t + pi/2) e^{-0.05 t}; phase drift from omega_d = 0.99875 grows linearly
        p = OscillatorParams()
        t = np.linspace(0, 50, 5001)
        env = np.exp(-0.05 * t)
        ratio = np.abs(oscillator_reference(p, t) - np.sin(t + np.pi / 2) * env) / (env * (1 + t))
        assert ratio.max() <= 0.025

    def test_forced_steady_state_amplitude(self):
        p = OscillatorParams(F0=1.0, omega=0.9)
        t = np.linspace(400, 450, 20001)
        amp = 0.5 * (oscillator_reference(p, t).max() - oscillator_reference(p, t).min())
        assert amp == pytest.approx(steady_state_amplitude(p), rel=1e-4)

    def test_overdamped_rejected(self):
        with pytest.raises(ValueError):
            oscillator_reference(OscillatorParams(gamma=3.0), 1.0)

    def test_forced_requires_force(self):
        with pytest.raises(ValueError):
            forced_oscillator(OscillatorParams())
        with pytest.raises(ValueError):
            damped_oscillator(OscillatorParams(F0=1.0, omega=1.0))


class TestOscillatorProblem:
    def test_reference_annihilates_total_loss(self):
        p = OscillatorParams()
        mu, wd = p.gamma / 2, np.sqrt(1 - (p.gamma / 2) ** 2)
        stub = FunctionModel(lambda c: jexp(c[0] * (-mu)) * (jcos(c[0] * wd) + jsin(c[0] * wd) * (mu / wd)))
        X = np.linspace(0, 20, 300)[:, None]
        assert float(total_loss(stub, damped_oscillator(p), X).value) < 1e-8

    def test_forced_residual_has_source(self):
        prob = forced_oscillator()
        X = np.array([[np.pi / (2 * 0.9)]])
        # zero model: residual = -F0 sin(omega t) = -1 at the crest
        assert float(residual_loss(FunctionModel(lambda c: 0.0), prob, X).value) == pytest.approx(1.0)

    def test_forced_reference_annihilates(self):
        p = OscillatorParams(F0=1.0, omega=0.9)
        prob = forced_oscillator(p)
        X = np.linspace(0, 20, 64)[:, None]
        h = 1e-3
        t = X[:, 0]
        x = oscillator_reference(p, t)
        xd = (oscillator_reference(p, t + h) - oscillator_reference(p, t - h)) / (2 * h)
        xdd = (oscillator_reference(p, t + h) - 2 * x + oscillator_reference(p, t - h)) / h**2
        r = xdd + p.gamma * xd + p.k * x - p.F0 * np.sin(p.omega * t)
        assert np.max(np.abs(r)) < 1e-5
        assert prob.test_domain == ((20.0, 50.0),)


class TestBurgers:
    def test_initial_and_boundary_values(self):
        p = BurgersParams()
        s = burgers_reference(p, 0.1, nx=256)
        np.testing.assert_allclose(s.u[0], -np.sin(np.pi * s.x), atol=1e-15)
        assert np.all(s.u[:, 0] == 0.0) and np.all(s.u[:, -1] == 0.0)

    def test_energy_decays(self):
        s = burgers_reference(BurgersParams(), 1.0, nx=512)
        energy = (s.u**2).sum(axis=1)
        assert np.all(np.diff(energy) <= 1e-12)

    def test_second_order_convergence(self):
        p = BurgersParams()
        ref = burgers_reference(p, 0.2, nx=2048)
        errs = []
        for nx in (64, 128, 256):
            s = burgers_reference(p, 0.2, nx=nx)
            errs.append(np.max(np.abs(s.u[-1] - ref.u[-1][:: 2048 // nx])))
        for a, b in zip(errs, errs[1:]):
            assert 3.5 <= a / b <= 4.5

    def test_grid_residual_small(self):
        s = burgers_reference(BurgersParams(), 1.0)
        assert np.mean(s.grid_residual(BurgersParams().k) ** 2) < 1e-3

    def test_unstable_step_rejected(self):
        with pytest.raises(ValueError, match="stability"):
            burgers_reference(BurgersParams(), 0.1, nx=256, dt=0.1)

    def test_coarse_grid_divergence_reported(self):
        with pytest.raises(FloatingPointError, match="Peclet"):
            burgers_reference(BurgersParams(), 1.0, nx=128)

    def test_stable_dt(self):
        assert burgers_stable_dt(0.1, 1.0, 0.0) == pytest.approx(0.1)
        assert burgers_stable_dt(0.1, 1.0, 1.0) == pytest.approx(0.005)
        assert burgers_stable_dt(0.1, 0.0, 0.0) == np.inf

    def test_interpolation_hits_nodes(self):
        s = burgers_reference(BurgersParams(), 0.1, nx=64)
        X = np.column_stack([s.x, np.full_like(s.x, s.t[3])])
        np.testing.assert_allclose(s(X), s.u[3], atol=1e-14)

    def test_problem_icbc(self):
        prob = burgers(BurgersParams(n_ic=16, n_bc=8))
        stub = FunctionModel(lambda c: jsin(c[0] * np.pi) * (-1.0), n_inputs=2)
        assert float(icbc_loss(stub, prob).value) < 1e-28
        assert prob.inputs == ("x", "t")

    def test_stationary_zero_annihilates(self):
        prob = burgers(BurgersParams(ic=lambda x: np.zeros_like(x)))
        X = np.random.default_rng(0).uniform([-1, 0], [1, 1], (64, 2))
        assert float(total_loss(FunctionModel(lambda c: 0.0, 2), prob, X).value) == 0.0


class TestWell:
    def test_eigenvalues(self):
        np.testing.assert_allclose(well_eigenvalues([1, 2, 3, 4]), np.pi / 2 * np.arange(1, 5))
        with pytest.raises(ValueError):
            well_eigenvalues(0)

    def test_eigenfunction_boundaries_and_norm(self):
        x = np.linspace(-1, 1, 20001)
        for n in range(1, 5):
            psi = well_eigenfunction(n, x)
            assert abs(psi[0]) < 1e-15 and abs(psi[-1]) < 1e-12
            assert np.trapezoid(psi**2, x) == pytest.approx(1.0, abs=1e-8)

    def test_parity(self):
        x = np.linspace(-1, 1, 101)
        for n in range(1, 5):
            sign = 1.0 if n % 2 else -1.0
            np.testing.assert_allclose(well_eigenfunction(n, -x), sign * well_eigenfunction(n, x), atol=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_eigenstate_annihilates(self, n):
        prob = quantum_well(WellParams(n_norm=2001), sqrt_e=well_eigenvalues(n))
        k = n * np.pi / 2
        stub = FunctionModel(lambda c: jsin((c[0] + 1.0) * k), 2)
        X = np.column_stack([np.linspace(-1, 1, 50), np.full(50, k)])
        assert float(total_loss(stub, prob, X, LossContext.fresh(stub)).value) < 1e-8

    def test_off_eigenvalue_residual(self):
        prob = quantum_well(sqrt_e=2.0)
        stub = FunctionModel(lambda c: jsin((c[0] + 1.0) * (np.pi / 2)), 2)
        X = np.column_stack([np.linspace(-1, 1, 50), np.full(50, 2.0)])
        assert float(residual_loss(stub, prob, X).value) > 1e-2

    def test_training_levels_sampled(self):
        prob = quantum_well()
        pts = prob.sampler(1000, np.random.default_rng(0))
        assert set(np.round(pts[:, 1], 12)) == {round(np.pi, 12), round(1.5 * np.pi, 12)}

    def test_zero_function_penalised(self):
        prob = quantum_well(sqrt_e=np.pi)
        X = np.column_stack([np.linspace(-1, 1, 10), np.full(10, np.pi)])
        lc = LossContext(ad.Tape(), None)
        assert float(total_loss(FunctionModel(lambda c: 0.0, 2), prob, X, lc).value) == pytest.approx(1.0)

    def test_bad_grid_rejected(self):
        with pytest.raises(ValueError):
            WellParams(sqrt_e_grid=(2.0, 1.0))
