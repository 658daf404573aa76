import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vlasov_echo.free_transport import AnalyticInitialDatum, free_density_traces
from vlasov_echo.linear import DensityTrace
from vlasov_echo.nonlinear import ExperimentConfig, run_echo_experiment
from vlasov_echo.norms import (EXP_CAP, MONITORS, MultiplierSpec, WeightPolicy, apply_multiplier,
                               bootstrap_monitor, bracket, default_bootstrap_multipliers,
                               density_weighted_norm, l2_quadrature, norm_hsm, parse_multiplier,
                               product_estimate_constant, product_estimate_ratio)
from vlasov_echo.echo import EchoChainConfig
from vlasov_echo.spectral import DistributionSpectrum, make_grid


def single_mode(grid, k, j, amp=1.0):
    v = np.zeros((grid.n_k, grid.n_eta), dtype=complex)
    v[grid.row(k), j] = amp
    return DistributionSpectrum(grid, v)


def random_field(grid, seed=0):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(grid.n_k, grid.n_eta)) + 1j * rng.normal(size=(grid.n_k, grid.n_eta))
    return DistributionSpectrum(grid, v, 1.5)


GRID = make_grid(3, 20, 401, 0.1, 5)


class TestSymbols:
    def test_sobolev_identity(self):
        f = random_field(GRID)
        assert np.array_equal(apply_multiplier(MultiplierSpec("sobolev"), f).values, f.values)

    def test_gevrey_single_mode(self):
        j = int(np.argmin(np.abs(GRID.eta - 2.0)))
        f = single_mode(GRID, 1, j, 0.7)
        spec = MultiplierSpec("gevrey", lam=0.4, s=0.5)
        out = apply_multiplier(spec, f)
        assert out.values[GRID.row(1), j] == pytest.approx(0.7 * math.exp(0.4 * 6 ** 0.25), rel=1e-14)

    def test_big_a_collapse(self):
        spec = MultiplierSpec("big_A", beta=1.5, mu=2.0, K=1.0, r=0.0, epsilon=0.01)
        k, eta = 2.0, 7.0
        br = math.sqrt(1 + k * k + eta * eta)
        expected = 2 * br ** 1.5 * math.exp(2.0 * 0.01 ** (1 / 3) * br ** (1 / 3))
        assert spec.symbol(k, eta)[0] == pytest.approx(expected, rel=1e-14)

    def test_big_a_dominates_big_b(self):
        A = MultiplierSpec("big_A", beta=2.0, mu=3.0, r=0.5, w=WeightPolicy("echo", 2.0, 4), epsilon=0.05)
        B = MultiplierSpec("big_B", gamma=1.0, nu=2.0, epsilon=0.05)
        kk, ee = np.meshgrid(np.arange(-5, 6), np.linspace(-200, 200, 801), indexing="ij")
        for t in (0.0, 30.0, 150.0):
            assert np.all(A.symbol(kk, ee, t)[0] >= B.symbol(kk, ee, t)[0])

    def test_density_weight(self):
        spec = MultiplierSpec("density_weight", sigma=2.0)
        assert spec.symbol(3, 0.0, 2.0)[0] == pytest.approx(1 + 9 + 36, rel=1e-14)

    def test_time_dependent_mu(self):
        spec = MultiplierSpec("big_B", gamma=0.0, nu=lambda t: 1.0 + t, epsilon=1.0)
        assert spec.symbol(0, 0, 2.0)[0] == pytest.approx(math.exp(3.0), rel=1e-14)

    def test_saturation(self):
        spec = MultiplierSpec("gevrey", lam=1.0, s=1.0)
        val, sat = spec.symbol(0, 1000.0)
        assert sat and val == math.exp(EXP_CAP)
        _, flag = apply_multiplier(spec, make_grid_field(), return_flag=True)
        assert flag

    @given(st.floats(0, 2), st.floats(0, 2), st.integers(-4, 4), st.floats(-50, 50))
    def test_gevrey_monotone_in_lambda(self, l1, l2, k, eta):
        lo, hi = sorted((l1, l2))
        a = MultiplierSpec("gevrey", lam=lo, s=1 / 3).symbol(k, eta)[0]
        b = MultiplierSpec("gevrey", lam=hi, s=1 / 3).symbol(k, eta)[0]
        assert b >= a >= 1.0

    def test_echo_weight_steps(self):
        w = WeightPolicy("echo", 3.0, 4)
        # |eta| = 12: critical times 12/4, 12/3, 12/2, 12
        vals = [w.log_inverse(t, 12.0) for t in (2.9, 3.0, 4.5, 6.5, 12.0)]
        assert np.allclose(vals, np.log(3.0) * np.array([0, 1, 2, 3, 4]))
        assert w.minimum == 3.0 ** -4

    def test_parse(self):
        spec = parse_multiplier("gevrey:lambda=0.3,s=0.333")
        assert spec == MultiplierSpec("gevrey", lam=0.3, s=0.333)
        a = parse_multiplier("big_A:beta=1,mu=2,r=0.5,w=echo,a=2,kcap=6,eps=0.01")
        assert a.w == WeightPolicy("echo", 2.0, 6) and a.epsilon == 0.01
        for bad in ("nope:s=1", "gevrey:lambda", "gevrey:zeta=1", "big_A:w=other"):
            with pytest.raises(ValueError):
                parse_multiplier(bad)


def make_grid_field():
    g = make_grid(1, 1200, 2401, 0.1, 5)
    return random_field(g, 1)


class TestComposition:
    def test_commutes_bit_exact(self):
        f = random_field(GRID, 2)
        a = MultiplierSpec("gevrey", lam=0.3, s=1 / 3)
        b = MultiplierSpec("big_A", beta=1.0, mu=2.0, r=0.5, w=WeightPolicy("echo"), epsilon=0.02)
        c = MultiplierSpec("sobolev", s=1.5)
        ab = apply_multiplier([a, b, c], f).values
        ba = apply_multiplier([c, b, a], f).values
        assert np.array_equal(ab, ba)

    def test_sequential_matches_composite(self):
        f = random_field(GRID, 3)
        a = MultiplierSpec("gevrey", lam=0.3, s=1 / 3)
        c = MultiplierSpec("sobolev", s=1.5)
        seq = apply_multiplier(c, apply_multiplier(a, f)).values
        np.testing.assert_allclose(seq, apply_multiplier([a, c], f).values, rtol=1e-14)


class TestNorms:
    def test_zero(self):
        assert norm_hsm(DistributionSpectrum.zeros(GRID), 2.0, 2) == 0.0

    def test_plain_l2_bit_exact(self):
        f = random_field(GRID, 4)
        assert norm_hsm(f, 0, 0) == l2_quadrature(f)
        assert l2_quadrature(f) == math.sqrt(GRID.d_eta * float(np.sum(np.abs(f.values) ** 2)))

    def test_single_mode(self):
        j = int(np.argmin(np.abs(GRID.eta - 3.0)))
        f = single_mode(GRID, 2, j, 0.5)
        expected = 0.5 * bracket(2, GRID.eta[j]) ** 1.5 * math.sqrt(GRID.d_eta)
        assert norm_hsm(f, 1.5, 0) == pytest.approx(expected, rel=1e-14)

    def test_refinement(self):
        vals = []
        for n in (401, 801):
            g = make_grid(2, 20, n, 0.1, 5)
            f = DistributionSpectrum.from_function(g, lambda k, eta: np.exp(-(eta - k) ** 2) + 0j)
            vals.append([norm_hsm(f, 1.0, m) for m in (0, 1, 2)])
        for a, b in zip(*vals):
            assert abs(a - b) / b < 0.01

    def test_moment_closed_form(self):
        # ||d_eta exp(-eta^2)||^2 = sqrt(pi/2)
        g = make_grid(1, 20, 4001, 0.1, 5)
        f = DistributionSpectrum.from_function(g, lambda k, eta: np.exp(-eta ** 2) * (k == 0) + 0j)
        base = (math.pi / 2) ** 0.25
        assert norm_hsm(f, 0, 1) == pytest.approx(base + math.sqrt(math.sqrt(math.pi / 2)), rel=1e-4)

    def test_rejects_m(self):
        with pytest.raises(ValueError):
            norm_hsm(DistributionSpectrum.zeros(GRID), 0, 3)


class TestDensityNorm:
    def test_zero(self):
        t = np.linspace(0, 5, 11)
        assert density_weighted_norm(DensityTrace(1, t, np.zeros(11, complex)), 1.0) == 0.0

    def test_constant(self):
        t = np.linspace(0, 7, 71)
        assert density_weighted_norm(DensityTrace(1, t, np.ones(71, complex)), 0.0) \
            == pytest.approx(math.sqrt(7.0), rel=1e-14)

    def test_orr_dt_halving(self):
        vals = []
        for dt in (0.05, 0.025):
            g = make_grid(1, 110, 4401, dt, 80)
            d = AnalyticInitialDatum.orr_packet(0.5, 40.0, 1)
            times = np.arange(0, 80 + dt / 2, dt)
            rho = free_density_traces(d.on_grid(g), times)[g.row(1)]
            vals.append(density_weighted_norm(DensityTrace(1, times, rho), 1.0))
        assert np.isfinite(vals[0]) and abs(vals[0] - vals[1]) / vals[1] < 0.01


class TestProductEstimate:
    def test_random_pairs(self):
        A, B = default_bootstrap_multipliers(0.01)
        C = product_estimate_constant(A)
        rng = np.random.default_rng(7)
        n = 10_000
        k1, k2 = rng.integers(-50, 51, n), rng.integers(-50, 51, n)
        e1, e2 = rng.uniform(-2000, 2000, n), rng.uniform(-2000, 2000, n)
        for t in (0.0, 50.0, 500.0):
            assert np.max(product_estimate_ratio(A, B, (k1, e1), (k2, e2), t)) <= C

    def test_near_diagonal_pairs(self):
        # equal halves are the tight configuration for the 2^beta factor
        A, B = default_bootstrap_multipliers(0.05)
        C = product_estimate_constant(A)
        x = np.linspace(0, 5000, 2001)
        assert np.max(product_estimate_ratio(A, B, (x * 0, x), (x * 0, x), 10.0)) <= C

    def test_constant(self):
        A, _ = default_bootstrap_multipliers(0.01)
        assert product_estimate_constant(A) == 2.0 * 2.0 ** 8


def _short_run(eps):
    g = make_grid(k_max=6, eta_max=160, n_eta=2001, dt=0.05, t_final=12.5)
    c = EchoChainConfig.build(eps, 3, 10.0, g, t_in=1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = run_echo_experiment(ExperimentConfig(c, compare_reduced=False), snapshot_every=10)
    A, B = default_bootstrap_multipliers(eps)
    return bootstrap_monitor(res.record.snapshots, res.traces, A, B, eps)


@pytest.fixture(scope="module")
def sweep():
    return {eps: _short_run(eps) for eps in (0.02, 0.01)}


class TestBootstrap:
    def test_zero_run(self):
        g = make_grid(2, 30, 301, 0.1, 5)
        snaps = [DistributionSpectrum.zeros(g, t) for t in (0.0, 1.0, 2.0)]
        t = np.linspace(0, 2, 21)
        traces = [DensityTrace(k, t, np.zeros(21, complex)) for k in (1, 2)]
        A, B = default_bootstrap_multipliers(0.01)
        rep = bootstrap_monitor(snaps, traces, A, B, 0.01)
        for name in MONITORS:
            assert not np.any(rep.raw[name]) and not np.any(rep.normalized[name])
        assert len(rep.rows()) == 3

    def test_mid_within_constant_factor(self, sweep):
        a, b = sweep[0.02].normalized["mid"], sweep[0.01].normalized["mid"]
        ratio = b / a
        assert np.all(np.isfinite(ratio))
        assert ratio.max() / ratio.min() < 1.25

    def test_high_grows_across_critical_times(self, sweep):
        rep = sweep[0.02]
        hi = rep.raw["high"]
        for tc in (10 / 3, 5.0, 10.0):
            before = np.interp(tc - 1.0, rep.times, hi)
            after = np.interp(tc + 1.0, rep.times, hi)
            assert after > 1.2 * before

    def test_low_stays_flat(self, sweep):
        lo = sweep[0.02].raw["low"]
        assert (lo.max() - lo.min()) / lo.max() < 1e-3
