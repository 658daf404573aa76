import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from vlasov_echo.spectral import (TWO_PI, AliasingWarning, BackgroundProfile, DistributionSpectrum,
                                  GridDomainError, PotentialLaw, background_symbol,
                                  hermitian_defect, interp_rows, make_grid, parse_background,
                                  parse_potential, potential_symbol, read_snapshot, sample_density,
                                  shift_rows, write_snapshot)


def lorentzian_quadrature(delta, eta):
    # (1/2pi) int 4 pi delta / (1 + v^2) cos(v eta) dv, Fourier-weighted quad
    if eta == 0:
        val, _ = integrate.quad(lambda v: 4 * math.pi * delta / (1 + v * v), -np.inf, np.inf)
    else:
        val, _ = integrate.quad(lambda v: 4 * math.pi * delta / (1 + v * v), 0, np.inf,
                                weight="cos", wvar=eta)
        val *= 2.0
    return val / TWO_PI


class TestGrid:
    def test_spacing(self):
        g = make_grid(4, 200, 4001, 0.01, 50)
        assert g.d_eta == pytest.approx(0.1, abs=1e-15)

    def test_rejects_short_eta(self):
        with pytest.raises(GridDomainError, match="eta_max < k_max"):
            make_grid(4, 100, 1001, 0.01, 50)

    def test_three_nodes(self):
        g = make_grid(1, 10, 3, 0.1, 10)
        assert list(g.eta) == [-10.0, 0.0, 10.0]

    def test_rejects_small_n_eta(self):
        with pytest.raises(GridDomainError):
            make_grid(1, 10, 2, 0.1, 10)

    def test_eta_symmetric_bit_exact(self):
        g = make_grid(3, 60, 1201, 0.05, 20)
        assert np.array_equal(g.eta, -g.eta[::-1])
        assert np.array_equal(g.eta, make_grid(3, 60, 1201, 0.05, 20).eta)
        assert g.eta[600] == 0.0


class TestBackground:
    def test_lorentzian_value_at_zero(self):
        bg = BackgroundProfile.lorentzian(0.01)
        assert background_symbol(bg, 0.0) == pytest.approx(TWO_PI * 0.01, rel=1e-14)
        assert abs(background_symbol(bg, 0.0) - lorentzian_quadrature(0.01, 0.0)) <= 1e-8

    @pytest.mark.parametrize("eta", [0.5, 1.0, 3.0])
    def test_lorentzian_against_quadrature(self, eta):
        bg = BackgroundProfile.lorentzian(0.01)
        assert abs(background_symbol(bg, eta) - lorentzian_quadrature(0.01, eta)) <= 1e-8

    def test_lorentzian_ratio(self):
        bg = BackgroundProfile.lorentzian(0.3)
        ratio = lorentzian_quadrature(0.3, 1.0) / lorentzian_quadrature(0.3, 0.0)
        assert background_symbol(bg, 1.0) / background_symbol(bg, 0.0) == pytest.approx(ratio, rel=1e-8)
        assert ratio == pytest.approx(math.exp(-1.0), rel=1e-8)

    def test_maxwellian_against_quadrature(self):
        bg = BackgroundProfile.maxwellian(0.7)
        f0 = lambda v: math.exp(-v * v / 1.4) / math.sqrt(TWO_PI * 0.7)
        for eta in (0.0, 0.8, 2.5):
            val, _ = integrate.quad(lambda v: f0(v) * math.cos(v * eta), -np.inf, np.inf)
            assert background_symbol(bg, eta) == pytest.approx(val / TWO_PI, abs=1e-10)

    def test_density(self):
        assert BackgroundProfile.lorentzian(0.2).density == pytest.approx(4 * math.pi ** 2 * 0.2)
        assert BackgroundProfile.maxwellian(2.0).density == pytest.approx(1.0)

    @given(st.floats(1e-6, 10.0), st.floats(-50.0, 50.0))
    def test_even_and_pure(self, delta, eta):
        bg = BackgroundProfile.lorentzian(delta)
        assert background_symbol(bg, eta) == background_symbol(bg, -eta)
        assert background_symbol(bg, eta) == background_symbol(bg, eta)
        assert background_symbol(bg, 0.0) > 0

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            BackgroundProfile.lorentzian(0.0)


class TestPotential:
    def test_coulomb(self):
        assert potential_symbol(PotentialLaw.coulomb(1.0), 2) == 0.25

    def test_power(self):
        assert potential_symbol(PotentialLaw.power(-1, 2.0), 3) == pytest.approx(-1 / 9, rel=1e-15)

    def test_shielded_at_zero(self):
        assert potential_symbol(PotentialLaw.shielded(1.0, 1.0), 0) == 1.0

    def test_shifted_power(self):
        assert potential_symbol(PotentialLaw.shifted_power(1, 3.0), 1) == pytest.approx(1 / 8)

    @pytest.mark.parametrize("law", [PotentialLaw.coulomb(), PotentialLaw.power(1, 2.0)])
    def test_singular_rejects_zero(self, law):
        with pytest.raises(GridDomainError):
            potential_symbol(law, 0)

    @given(st.integers(1, 500))
    def test_even(self, k):
        for law in (PotentialLaw.coulomb(2.0), PotentialLaw.shielded(1.0, 0.5),
                    PotentialLaw.power(-1, 2.5), PotentialLaw.shifted_power(1, 2.0)):
            assert potential_symbol(law, k) == potential_symbol(law, -k)

    def test_gamma_bound(self):
        with pytest.raises(ValueError):
            PotentialLaw.power(-1, 1.5)

    def test_parsers(self):
        assert parse_potential("power:-1,2") == PotentialLaw.power(-1, 2.0)
        assert parse_potential("shielded:2,0.5") == PotentialLaw.shielded(2.0, 0.5)
        assert parse_background("lorentzian:0.01") == BackgroundProfile.lorentzian(0.01)
        with pytest.raises(ValueError):
            parse_potential("yukawa:1")


class TestSampling:
    def test_zero_field(self):
        g = make_grid(2, 40, 801, 0.1, 20)
        assert sample_density(DistributionSpectrum.zeros(g), 3.7, 1) == 0

    def test_orr_peak(self):
        g = make_grid(1, 150, 3001, 0.1, 150)
        f = DistributionSpectrum.from_function(g, lambda k, eta: np.exp(-np.abs(eta - 100.0 * np.sign(k)))
                                               * (abs(k) == 1))
        assert sample_density(f, 100.0, 1) == pytest.approx(TWO_PI, rel=1e-14)

    @staticmethod
    def _worst_gaussian_error(h):
        # shift the grid so t = 2 falls at every fractional node offset
        worst = 0.0
        for off in np.linspace(0.0, 1.0, 41)[:-1]:
            eta_max = 20.0 + off * h
            g = make_grid(1, eta_max, int(round(2 * eta_max / h)) + 1, 0.1, 20)
            f = DistributionSpectrum.from_function(g, lambda k, eta: np.exp(-eta ** 2) + 0j)
            worst = max(worst, abs(sample_density(f, 2.0, 1) - TWO_PI * math.exp(-4.0)))
        return worst

    def test_gaussian_interpolation_fine(self):
        assert self._worst_gaussian_error(0.045) <= 1e-6

    @pytest.mark.xfail(strict=True, reason="four-node cubic error constant exceeds 1e-6 at h = 0.05")
    def test_gaussian_interpolation_worst_offset(self):
        assert self._worst_gaussian_error(0.05) <= 1e-6

    def test_cubic_convergence(self):
        errs = []
        for n in (401, 801):
            g = make_grid(1, 20, n, 0.1, 20)
            f = DistributionSpectrum.from_function(g, lambda k, eta: np.exp(-eta ** 2) + 0j)
            t = 1.0 + 1.0 / 3.0 * g.d_eta
            errs.append(abs(sample_density(f, t, 1) - TWO_PI * math.exp(-t * t)))
        assert errs[0] / errs[1] >= 8.0

    def test_off_grid(self):
        g = make_grid(1, 10, 101, 0.1, 10)
        with pytest.raises(GridDomainError):
            sample_density(DistributionSpectrum.zeros(g), 11.0, 1)

    def test_node_returns_node_value(self):
        rows = np.array([1.0, 5.0, -2.0, 7.0])
        assert interp_rows(rows, 2.0) == -2.0
        assert interp_rows(rows, 1.0, order=1) == 5.0


class TestShift:
    def test_matches_interp(self):
        rng = np.random.default_rng(3)
        rows = rng.normal(size=(3, 64)) + 1j * rng.normal(size=(3, 64))
        d = 0.25
        for shift in (0.0, 0.6, -1.37, 3.0):
            got, _ = shift_rows(rows, shift, d)
            pos = np.arange(64) - shift / d
            ref = np.stack([interp_rows(r, pos) for r in rows])
            np.testing.assert_allclose(got, ref, rtol=0, atol=1e-13)

    def test_clip_flag(self):
        rows = np.ones((1, 20))
        assert shift_rows(rows, 1.0, 0.5)[1]
        rows = np.zeros((1, 40))
        rows[0, 20] = 1.0
        assert not shift_rows(rows, 1.0, 0.5)[1]


def test_hermitian_defect():
    g = make_grid(2, 20, 201, 0.1, 10)
    f = DistributionSpectrum.from_function(g, lambda k, eta: np.exp(-(eta - k) ** 2 + 1j * eta))
    assert hermitian_defect(f.values) < 1e-12
    bad = f.values.copy()
    bad[0, 3] += 1e-3
    assert hermitian_defect(bad) > 1e-4


def test_snapshot_round_trip(tmp_path):
    g = make_grid(2, 30, 61, 0.1, 15)
    rng = np.random.default_rng(0)
    f = DistributionSpectrum(g, rng.normal(size=(5, 61)) + 1j * rng.normal(size=(5, 61)), 3.25)
    path = tmp_path / "s.bin"
    write_snapshot(path, f)
    raw = path.read_bytes()
    assert raw[:4] == b"VEL1"
    assert len(raw) == 4 + 4 + 4 + 8 + 8 + 5 * 61 * 16
    back = read_snapshot(path)
    assert back.time == 3.25
    assert np.array_equal(back.values, f.values)
    assert back.grid.eta_max == 30 and back.grid.k_max == 2


def test_snapshot_bad_magic(tmp_path):
    path = tmp_path / "x.bin"
    path.write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(ValueError):
        read_snapshot(path)


def test_aliasing_warning_type():
    assert issubclass(AliasingWarning, RuntimeWarning)
