import math
import warnings

import numpy as np
import pytest

from vlasov_echo.echo import EchoChainConfig, peak_of
from vlasov_echo.linear import VolterraKernel, duhamel_rate
from vlasov_echo.nonlinear import (ExperimentConfig, FrozenProfile, NonlinearState, StabilityError,
                                   conserved_quantities, initial_state, integrate,
                                   linear_deviation, packet_response, profile_l2, relative_drift,
                                   rhs_profile, run_echo_experiment, solve_backward, step,
                                   time_reversal_probe)
from vlasov_echo.nonlinear import _traces
from vlasov_echo.spectral import (TWO_PI, BackgroundProfile, DistributionSpectrum, PotentialLaw,
                                  make_grid)

ATTRACTIVE = PotentialLaw.power(-1, 2.0)


def packet_state(grid, k=1, centre=0.0, t=0.0, background=None, self_interaction=True, amp=1e-3):
    def fn(kk, eta):
        if abs(kk) != k:
            return np.zeros_like(eta, dtype=complex)
        # real profile in (z, v) requires F(-k, -eta) = conj F(k, eta)
        c = centre if kk > 0 else -centre
        return amp * np.exp(-(eta - c) ** 2) * (1.0 + 0.5j * np.sign(kk))
    g = DistributionSpectrum.from_function(grid, fn, t)
    return NonlinearState(g, background, ATTRACTIVE, t, None, self_interaction)


def chain_config(eps, eta0=10.0, dt=0.05, n_eta=1801, eta_max=90.0, tf=11.0, k_max=6, **kw):
    g = make_grid(k_max=k_max, eta_max=eta_max, n_eta=n_eta, dt=dt, t_final=tf)
    return EchoChainConfig.build(eps, 3, eta0, g, t_in=1.0, **kw)


class TestRhs:
    def test_zero_perturbation(self):
        g = make_grid(3, 40, 401, 0.05, 10)
        st = NonlinearState(DistributionSpectrum.zeros(g, 2.0), BackgroundProfile.lorentzian(0.1),
                            ATTRACTIVE, 2.0)
        assert not np.any(rhs_profile(st).values)

    def test_convolution_support(self):
        g = make_grid(3, 40, 801, 0.05, 10)
        st = packet_state(g, k=1, centre=5.0, t=5.0)
        r = rhs_profile(st).values
        assert np.max(np.abs(r[g.row(2)])) > 1e-9
        assert not np.any(r[g.row(3)]) and not np.any(r[g.row(-3)])
        assert not np.any(r[g.row(1)])

    def test_linearization_matches_duhamel(self):
        g = make_grid(3, 40, 801, 0.05, 10)
        bg = BackgroundProfile.lorentzian(0.05)
        st = packet_state(g, k=2, centre=6.0, t=3.0, background=bg, self_interaction=False)
        r = rhs_profile(st).values
        rho = st.densities()
        kernel = VolterraKernel(ATTRACTIVE, bg)
        for k in (1, 2, 3):
            ref = duhamel_rate(kernel, k, rho[k - 1], 3.0, g.eta)
            assert np.max(np.abs(r[g.row(k)] - ref)) <= 1e-10

    def test_hermitian_output(self):
        g = make_grid(3, 40, 801, 0.05, 10)
        r = rhs_profile(packet_state(g, k=1, centre=5.0, t=5.0,
                                     background=BackgroundProfile.lorentzian(0.1))).values
        np.testing.assert_allclose(r[::-1, ::-1], np.conj(r), atol=1e-15)


class TestStep:
    def test_zero_field(self):
        g = make_grid(2, 30, 301, 0.05, 10)
        st = NonlinearState(DistributionSpectrum.zeros(g), None, ATTRACTIVE, 0.0)
        out = step(st, 0.05)
        assert out.time == 0.05
        assert not np.any(out.g.values)

    def test_fourth_order(self):
        # linear run on a smooth background; eta nodes align with every stage's sampling line
        grid = make_grid(3, 40, 6401, 0.1, 4)
        st = packet_state(grid, k=1, centre=2.0, t=0.0, background=BackgroundProfile.maxwellian(2.0),
                          self_interaction=False, amp=0.01)

        def run(dt):
            return integrate(st, 3.0, dt)[0].g.values

        ref = run(0.00625)
        e1 = np.max(np.abs(run(0.1) - ref))
        e2 = np.max(np.abs(run(0.05) - ref))
        assert 16 * 0.7 <= e1 / e2 <= 16 * 1.3

    def test_hermitian_preserved(self):
        g = make_grid(3, 40, 801, 0.05, 10)
        st = packet_state(g, k=1, centre=2.0, background=BackgroundProfile.lorentzian(0.05), amp=0.1)
        out, _ = integrate(st, 4.0, 0.05)
        v = out.g.values
        assert np.max(np.abs(v[::-1, ::-1] - np.conj(v))) <= 1e-10

    def test_stability_guard(self):
        g = make_grid(3, 40, 801, 0.05, 10)
        st = packet_state(g, k=1, centre=10.0, t=10.0, amp=50.0)
        with pytest.raises(StabilityError):
            step(st, 2.0)


class TestConservation:
    def test_zero_state(self):
        g = make_grid(2, 30, 301, 0.05, 10)
        bg = BackgroundProfile.maxwellian(1.0)
        q = conserved_quantities(NonlinearState(DistributionSpectrum.zeros(g), bg, ATTRACTIVE, 0.0))
        # integrals over the torus of length 2 pi
        assert q.mass == pytest.approx(TWO_PI * bg.density, rel=1e-12)
        assert q.energy == pytest.approx(0.5 * TWO_PI * bg.density * 1.0, rel=1e-12)
        q0 = conserved_quantities(NonlinearState(DistributionSpectrum.zeros(g), None, ATTRACTIVE, 0.0))
        assert (q0.mass, q0.l2, q0.energy) == (0.0, 0.0, 0.0)

    def test_infinite_moment_flag(self):
        g = make_grid(2, 30, 301, 0.05, 10)
        q = conserved_quantities(NonlinearState(DistributionSpectrum.zeros(g),
                                                BackgroundProfile.lorentzian(0.01), ATTRACTIVE, 0.0))
        assert q.infinite_moment

    def test_free_transport_l2_exact(self):
        # packet far from every sampling line: densities vanish and g is frozen
        g = make_grid(2, 60, 1201, 0.05, 10)
        st = packet_state(g, k=1, centre=-40.0, t=0.0, amp=1.0)
        out, rec = integrate(st, 5.0, 0.05, conserved_every=10)
        assert relative_drift([c.l2 for c in rec.conserved]) == 0.0
        assert np.array_equal(out.g.values, st.g.values)

    def test_mass_and_l2(self):
        c = chain_config(0.05)
        st = initial_state(ExperimentConfig(c, compare_reduced=False))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            _, rec = integrate(st, 11.0, 0.05, conserved_every=20)
        assert relative_drift([q.mass for q in rec.conserved]) <= 1e-8
        assert relative_drift([q.l2 for q in rec.conserved]) <= 1e-6

    def test_profile_l2_closed_form(self):
        # |eps exp(-|eta|)|^2 on k = +-1 integrates to eps^2 each; the background row
        # 4 pi^2 delta exp(-|eta|) to (4 pi^2 delta)^2
        c = chain_config(0.05)
        st = initial_state(ExperimentConfig(c, compare_reduced=False))
        lo = 2 * 0.05 ** 2
        a = c.packet_amplitude * math.pi / 8
        hi = 2 * a ** 2 * (4.0 + 2 * math.exp(-10.0) * (2 * 10.0 + 2))
        bg = (4 * math.pi ** 2 * c.delta) ** 2
        exact = lo + hi + bg
        # trapezoid across the kinks: second order in the refined spacing
        errs = [abs(profile_l2(st, refine=r) / exact - 1) for r in (32, 128)]
        assert errs[0] <= 1e-5
        assert 16 * 0.7 <= errs[0] / errs[1] <= 16 * 1.3

    def test_time_reversal(self):
        c = chain_config(0.02, eta_max=160, n_eta=2001, tf=12.5)
        st = initial_state(ExperimentConfig(c, compare_reduced=False))
        st, _ = integrate(st, 3.0, 0.05)
        round_trip, one_step = time_reversal_probe(st, 0.05, 100)
        assert one_step > 0
        assert round_trip <= 10 * one_step


class TestLinearConsistency:
    def test_self_interaction_off_matches_volterra(self):
        # dt = 4 d_eta: every stage's line eta = k t sits on a node
        g = make_grid(k_max=4, eta_max=80, n_eta=12801, dt=0.025, t_final=11.0)
        c = EchoChainConfig.build(0.05, 3, 10.0, g, delta=0.01, t_in=1.0)
        st = initial_state(ExperimentConfig(c, compare_reduced=False, self_interaction=False))
        _, rec = integrate(st, 11.0, 0.025)
        for tr in _traces(rec.times, rec.rho, rec.alert):
            if tr.k <= 0:
                continue
            refs = []
            for r in (16, 32):
                fine = tr.times[0] + (0.025 / r) * np.arange(r * (tr.times.size - 1) + 1)
                lin = packet_response(c, fine, tr.k)
                refs.append(np.interp(tr.times, fine, lin.real) + 1j * np.interp(tr.times, fine, lin.imag))
            ref = (4 * refs[1] - refs[0]) / 3
            assert np.max(np.abs(tr.values - ref)) <= 1e-8

    def test_short_window_eps_squared(self):
        devs = []
        for eps in (0.02, 0.01):
            c = chain_config(eps)
            st = initial_state(ExperimentConfig(c, compare_reduced=False))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                _, rec = integrate(st, 11.0, 0.05)
            devs.append(linear_deviation(_traces(rec.times, rec.rho, rec.alert), c))
        slope = math.log(devs[0] / devs[1]) / math.log(2.0)
        assert abs(slope - 2.0) <= 0.2
        consts = [d / (e * e * 10.0) for d, e in zip(devs, (0.02, 0.01))]
        assert abs(consts[0] - consts[1]) / consts[1] <= 0.1


class TestExperiment:
    def test_zero_epsilon(self):
        c = chain_config(0.0, eta0=5.0, tf=6.0, n_eta=1081)
        res = run_echo_experiment(ExperimentConfig(c))
        assert not np.any(res.final_state.g.values)
        assert all(not np.any(tr.values) for tr in res.traces)
        assert math.isnan(res.error_vs_reduced)

    def test_rejects_coarse_records(self):
        c = chain_config(0.05)
        with pytest.raises(ValueError, match="critical-time gap"):
            ExperimentConfig(c, record_every=40)
        with pytest.raises(ValueError):
            ExperimentConfig(c, integrator="euler")

    def test_frozen_support(self):
        c = chain_config(0.05)
        f = FrozenProfile.echo_data(c)
        assert f.support == frozenset({1, -1, 3, -3})
        assert f(1, 0.0) == pytest.approx(0.05)
        assert not np.any(f(2, np.linspace(-5, 5, 11)))

    def test_packet_response_free_limit(self):
        c = chain_config(0.05, delta=0.0)
        t = np.linspace(1.0, 11.0, 201)
        np.testing.assert_allclose(packet_response(c, t, 1), TWO_PI * 0.05 * np.exp(-t))

    def test_backward_mode(self):
        c = chain_config(0.02, eta_max=160, n_eta=2001, tf=12.5)
        back = solve_backward(ExperimentConfig(c, compare_reduced=False), 0.5)
        assert back.time == pytest.approx(0.5)
        fwd, _ = integrate(back, 1.0, 0.05)
        assert np.max(np.abs(fwd.g.values)) <= 1e-8
        with pytest.raises(ValueError):
            solve_backward(ExperimentConfig(c, compare_reduced=False), 2.0)

    def test_short_run_summary(self):
        c = chain_config(0.05, eta_max=160, n_eta=2001, tf=12.5)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = run_echo_experiment(ExperimentConfig(c))
        assert res.mass_drift <= 1e-8
        assert res.l2_drift <= 1e-6
        assert np.isfinite(res.error_vs_reduced) and res.error_vs_reduced < 1.0
        # the packet's own mode peaks at its Orr time
        tr = {t.k: t for t in res.traces}[3]
        assert peak_of(tr.times, tr.values)[1] == pytest.approx(10.0 / 3, abs=0.1)
        traces, report, err = res
        assert err == res.error_vs_reduced and report is res.report
