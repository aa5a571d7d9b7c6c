import math
import numpy as np
import pytest

from nustab.errors import ConfigurationError, InsufficientData
from nustab.modal_core import FractionalDiag, ModalSystem, Weak
from nustab.operator_assembly import assemble
from nustab.rate_calculus import RateFunction
from nustab.semigroup_sim import (DecayTrace, damped_output_energy, decay_trace, eig_decompose,
                                  energy_balance, fit_decay_exponent, orbit_decay, propagator_norm,
                                  semigroup_norms, time_grid, validity_horizon)

from conftest import make_system
from oracles import expm_norm, trapezoid_output_energy

PI = math.pi


def undamped(N):
    return assemble(ModalSystem.from_arrays(PI * np.arange(1, N + 1), np.zeros(N)))


class TestFactorization:
    def test_undamped_exact(self):
        dg = undamped(6)
        sf = eig_decompose(dg)
        assert sf.condition == 1.0
        expected = np.sort_complex(np.concatenate([1j * dg.frequencies, -1j * dg.frequencies]))
        np.testing.assert_array_equal(np.sort_complex(sf.eigenvalues), expected)
        recon = (sf.vectors * sf.eigenvalues) @ sf.inverse_vectors
        np.testing.assert_allclose(recon, dg.matrix, atol=1e-14)

    def test_damped_strictly_stable(self):
        _, dg = make_system("wave1d", Weak(), 40)
        sf = eig_decompose(dg)
        assert not sf.fallback
        assert np.all(sf.eigenvalues.real < 0)
        assert sf.reconstruction_error <= 1e-8

    def test_golden_factorizations(self, golden_system):
        _, dg = golden_system
        sf = eig_decompose(dg)
        assert sf.max_real_part <= 1e-12
        assert sf.reconstruction_error <= 1e-8


class TestPropagatorNorm:
    def test_time_zero(self, wave_weak_60):
        _, dg = wave_weak_60
        inv = np.linalg.inv(dg.matrix)
        assert propagator_norm(eig_decompose(dg), inv, 0.0) == pytest.approx(
            np.linalg.norm(inv, 2), rel=1e-10)

    def test_undamped_constant(self):
        dg = undamped(10)
        sf = eig_decompose(dg)
        inv = np.linalg.inv(dg.matrix)
        for t in (0.0, 0.7, 13.0, 400.0):
            assert propagator_norm(sf, inv, t) == pytest.approx(1 / PI, rel=1e-12)

    def test_matches_expm(self, wave_weak_60):
        _, dg = wave_weak_60
        inv = np.linalg.inv(dg.matrix)
        val = propagator_norm(eig_decompose(dg), inv, 100.0)
        assert val == pytest.approx(expm_norm(dg.matrix, 100.0, inv), rel=1e-6)

    def test_negative_time(self, wave_weak_60):
        _, dg = wave_weak_60
        with pytest.raises(ConfigurationError):
            propagator_norm(eig_decompose(dg), np.eye(120), -1.0)

    def test_forced_fallback_agrees(self, wave_weak_60):
        _, dg = wave_weak_60
        sf = eig_decompose(dg)
        fb = type(sf)(sf.eigenvalues, sf.vectors, sf.inverse_vectors, sf.condition,
                      sf.reconstruction_error, sf.max_real_part, True, sf.matrix)
        inv = np.linalg.inv(dg.matrix)
        assert propagator_norm(fb, inv, 30.0) == pytest.approx(propagator_norm(sf, inv, 30.0),
                                                               rel=1e-8)

    def test_contraction(self, golden_system):
        _, dg = golden_system
        norms = semigroup_norms(eig_decompose(dg), np.geomspace(0.01, 500, 40))
        assert np.all(norms <= 1 + 1e-10)


class TestDecayTrace:
    def test_undamped_flat(self):
        dg = undamped(8)
        tr = decay_trace(dg, np.geomspace(1, 1000, 20))
        np.testing.assert_allclose(tr.values, 1 / PI, rtol=1e-12)
        assert tr.horizon == math.inf

    @pytest.mark.filterwarnings("ignore:time grid reaches")
    def test_fractional_half_tracks_inverse_t(self):
        _, dg = make_system("wave1d", FractionalDiag(0.5), 60)
        tr = decay_trace(dg, time_grid(10, 300, 40))
        scaled = tr.values * tr.t
        assert scaled.max() / scaled.min() < 1.5
        fit = fit_decay_exponent(tr, (10, 300))
        assert fit.exponent == pytest.approx(-1.0, abs=0.05)

    @pytest.mark.filterwarnings("ignore:time grid reaches")
    def test_non_increasing(self, golden_system):
        _, dg = golden_system
        tr = decay_trace(dg, time_grid(0.5, 200, 60))
        assert np.all(np.diff(tr.values) <= 1e-12 * tr.values[0])

    def test_predicted_curve(self, wave_weak_60):
        _, dg = wave_weak_60
        tr = decay_trace(dg, time_grid(10, 300, 20), M=RateFunction.power(2.0))
        np.testing.assert_allclose(tr.predicted, tr.t ** -0.5, rtol=1e-12)
        ratio = tr.values / tr.predicted
        assert ratio[-1] / ratio[0] < 3

    def test_horizon_warning(self, wave_weak_60):
        _, dg = wave_weak_60
        horizon = validity_horizon(dg)
        # The [10, 300] fit window must sit inside the horizon at N = 60.
        assert 300 < horizon < math.inf
        with pytest.warns(UserWarning, match="validity horizon"):
            tr = decay_trace(dg, time_grid(10, 2 * horizon, 10))
        assert tr.beyond_horizon

    def test_grid_validation(self, wave_weak_60):
        _, dg = wave_weak_60
        with pytest.raises(ConfigurationError):
            decay_trace(dg, [1.0, 0.5])
        with pytest.raises(ConfigurationError):
            time_grid(0, 10, 5)
        with pytest.raises(ConfigurationError):
            time_grid(1, 10, 5, spacing="cubic")

    def test_csv(self, tmp_path, wave_weak_60):
        _, dg = wave_weak_60
        tr = decay_trace(dg, [1.0, 2.0])
        lines = tr.to_csv(tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "t,opnorm,predicted"
        assert lines[1].startswith("1,") and lines[1].endswith(",")
        tr = decay_trace(dg, [1.0, 4.0], M=RateFunction.power(2.0))
        lines = tr.to_csv(tmp_path / "p.csv").read_text().splitlines()
        assert lines[2].endswith(",0.5")

    def test_workers_identical(self, wave_weak_60):
        _, dg = wave_weak_60
        grid = time_grid(1, 100, 30)
        np.testing.assert_array_equal(decay_trace(dg, grid).values,
                                      decay_trace(dg, grid, workers=4).values)


class TestFitDecay:
    def synthetic(self, t, values, floor=0.0):
        return DecayTrace(t, values, None, math.inf, False, floor)

    def test_synthetic_half(self):
        t = np.geomspace(1, 1000, 50)
        fit = fit_decay_exponent(self.synthetic(t, 3.0 * t ** -0.5))
        assert fit.exponent == pytest.approx(-0.5, abs=1e-12)

    def test_default_window_skips_transient(self):
        t = np.geomspace(1, 1000, 60)
        vals = np.where(t < 10, 1.0, 10 * t ** -1.0)
        fit = fit_decay_exponent(self.synthetic(t, vals))
        assert fit.exponent == pytest.approx(-1.0, abs=1e-12)

    def test_tail_dropped(self):
        t = np.geomspace(10, 1000, 60)
        vals = np.where(t < 300, t ** -0.5, 1e-9)
        fit = fit_decay_exponent(self.synthetic(t, vals, floor=0.01))
        assert fit.exponent == pytest.approx(-0.5, abs=1e-12)

    def test_too_few(self):
        t = np.geomspace(10, 100, 7)
        with pytest.raises(InsufficientData):
            fit_decay_exponent(self.synthetic(t, t ** -1.0))

    def test_wave_one_minus_xi(self, wave_weak_60):
        _, dg = wave_weak_60
        fit = fit_decay_exponent(decay_trace(dg, time_grid(10, 300, 40)), (10, 300))
        assert -0.57 <= fit.exponent <= -0.43

    @pytest.mark.filterwarnings("ignore:time grid reaches")
    def test_beam_one_minus_xi(self):
        _, dg = make_system("beam1d", Weak(), 40)
        fit = fit_decay_exponent(decay_trace(dg, time_grid(5, 200, 40)), (5, 200))
        assert -1.1 <= fit.exponent <= -0.9


class TestOrbits:
    def test_eigenvector_orbit(self, wave_weak_60):
        _, dg = wave_weak_60
        sf = eig_decompose(dg)
        k = int(np.argmax(sf.eigenvalues.real))
        x0 = sf.vectors[:, k]
        t = np.linspace(0, 50, 11)
        expected = np.abs(np.exp(t * sf.eigenvalues[k])) * np.linalg.norm(x0)
        np.testing.assert_allclose(orbit_decay(sf, x0, t), expected, rtol=1e-8)

    def test_monotone_and_smooth_data(self, wave_weak_60, rng):
        _, dg = wave_weak_60
        sf = eig_decompose(dg)
        t = time_grid(1, 300, 40)
        y = rng.standard_normal(120)
        x0 = np.linalg.solve(dg.matrix, y)
        orbit = orbit_decay(sf, x0, t)
        assert np.all(np.diff(orbit) <= 1e-12 * orbit[0])
        trace = decay_trace(dg, t, sf=sf).values
        assert np.all(orbit <= trace * np.linalg.norm(y) * (1 + 1e-10))

    def test_zero_state(self, wave_weak_60):
        _, dg = wave_weak_60
        with pytest.raises(ConfigurationError):
            orbit_decay(eig_decompose(dg), np.zeros(120), [1.0])


class TestEnergy:
    def test_balance(self, wave_weak_60, rng):
        _, dg = wave_weak_60
        x = rng.standard_normal(120)
        bal = energy_balance(dg, x, 20.0)
        assert bal.relative_error <= 1e-6
        assert bal.energy_loss > 0

    def test_output_energy_against_exponential(self, rng):
        _, dg = make_system("wave1d", Weak(), 6)
        x = rng.standard_normal(12)
        val = damped_output_energy(dg, x, 3.0)
        ref = trapezoid_output_energy(dg.matrix, dg.damping.B, x, 3.0, points=20001)
        assert val == pytest.approx(ref, rel=1e-8)

    def test_zero_state_and_bad_tau(self, wave_weak_60):
        _, dg = wave_weak_60
        assert damped_output_energy(dg, np.zeros(120), 1.0) == 0.0
        with pytest.raises(ConfigurationError):
            damped_output_energy(dg, np.ones(120), 0.0)
