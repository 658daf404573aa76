"""Linearized Vlasov dynamics through the density Volterra equation.

For each mode k the density obeys

    rho(t) = F(t) - int_0^t K(k, t - tau) rho(tau) dtau,
    K(k, s) = 2pi W_hat(k) |k|^2 s f0_hat(k s),

with F the free-streaming density of the initial datum.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np
from scipy import integrate

from .free_transport import AnalyticInitialDatum, density_free, weighted_velocity_norm
from .spectral import (TWO_PI, BackgroundProfile, DistributionSpectrum, PotentialLaw,
                       SpectralGrid, interp_rows)

ALERT_THRESHOLD = 1e12


class InstabilityWarning(RuntimeWarning):
    pass


class ResolutionError(RuntimeError):
    """Nyquist sampling too coarse to track the argument of D."""


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class VolterraKernel:
    """K(k, s) built from a potential and a background.

    ``override`` replaces the physical formula with an arbitrary callable
    ``(k, s_array) -> array``; the zero and constant kernels used in tests
    are built that way.
    """

    potential: Optional[PotentialLaw] = None
    background: Optional[BackgroundProfile] = None
    override: Optional[Callable] = field(default=None, compare=False)
    label: str = ""

    @classmethod
    def zero(cls):
        return cls(override=lambda k, s: np.zeros_like(np.asarray(s, dtype=float)), label="zero")

    @classmethod
    def constant(cls, c: float):
        return cls(override=lambda k, s: np.full_like(np.asarray(s, dtype=float), c),
                   label=f"constant:{c}")

    @property
    def is_zero(self) -> bool:
        return self.label == "zero"

    @property
    def physical(self) -> bool:
        return self.override is None

    def coefficient(self, k: int) -> float:
        """2 pi W_hat(k) k^2, the prefactor shared by the kernel and the Duhamel update."""
        return TWO_PI * self.potential.symbol(k) * k * k

    def evaluate(self, k: int, s):
        s = np.asarray(s, dtype=float)
        if self.override is not None:
            return self.override(k, s)
        return self.coefficient(k) * s * self.background.symbol(k * s)

    def lorentzian_constant(self, k: int) -> Optional[float]:
        """c_k with K = c_k s exp(-|k| s) for a lorentzian background, else None."""
        if self.physical and self.background.kind == "lorentzian":
            return self.coefficient(k) * TWO_PI * self.background.param
        return None


@dataclass
class DensityTrace:
    k: int
    times: np.ndarray
    values: np.ndarray
    alert: bool = False

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=complex)
        if self.times.shape != self.values.shape:
            raise ValueError("times and values differ in length")
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")


@dataclass(frozen=True)
class StabilityVerdict:
    k: int
    stable: bool
    winding_number: int
    nearest_root_real_part: Optional[float] = None

    def __post_init__(self):
        if self.stable != (self.winding_number == 0):
            raise ValueError("stable must coincide with zero winding")

    def as_record(self) -> dict:
        return {"k": self.k, "stable": self.stable, "winding_number": self.winding_number,
                "nearest_root_real_part": self.nearest_root_real_part}


# ---------------------------------------------------------------------------
# marching


def _significant_length(kvec: np.ndarray) -> int:
    """Length beyond which the tabulated kernel is negligible (< 1e-18 of its peak)."""
    mag = np.abs(kvec)
    peak = mag.max() if mag.size else 0.0
    if peak == 0:
        return 1
    big = np.nonzero(mag > 1e-18 * peak)[0]
    return int(big[-1]) + 1


def march_convolution(kvec: np.ndarray, forcing: np.ndarray, dt: float,
                      threshold: float = ALERT_THRESHOLD):
    """Product-trapezoid solve of rho = F - K * rho on a uniform grid.

    ``kvec[j] = K(j dt)``.  Returns ``(rho, alert)``; on alert the returned
    array stops at the offending step.
    """
    n = forcing.size
    rho = np.zeros(n, dtype=complex)
    width = min(_significant_length(kvec), n)
    krev = kvec[:width][::-1].astype(complex)
    diag = 1.0 + 0.5 * dt * kvec[0]
    for j in range(n):
        if j == 0:
            rho[0] = forcing[0]
        else:
            lo = max(0, j - width + 1)
            # sum_{i=lo}^{j-1} w_i K(t_j - t_i) rho_i, endpoint weight 1/2 at i = 0
            seg = rho[lo:j]
            kk = krev[width - (j - lo) - 1: width - 1]
            acc = np.dot(kk, seg)
            if lo == 0:
                acc -= 0.5 * kvec[j] * rho[0]
            rho[j] = (forcing[j] - dt * acc) / diag
        if not np.isfinite(rho[j]) or abs(rho[j]) > threshold:
            return rho[: j + 1], True
    return rho, False


def solve_linear_volterra(kernel: VolterraKernel, forcing, grid: SpectralGrid, k: int,
                          t0: float = 0.0) -> DensityTrace:
    """March the density Volterra equation for mode k on [t0, t0 + t_final].

    ``forcing`` is a callable ``(k, t_array) -> array`` or an
    AnalyticInitialDatum (whose free-streaming density is used).
    """
    n = grid.n_steps
    times = t0 + grid.dt * np.arange(n + 1)
    if isinstance(forcing, AnalyticInitialDatum):
        force = density_free(forcing, times, k) if k != 0 else np.zeros(n + 1, complex)
    else:
        force = np.asarray(forcing(k, times), dtype=complex) * np.ones(n + 1)
    kvec = np.asarray(kernel.evaluate(k, grid.dt * np.arange(n + 1)), dtype=float)
    rho, alert = march_convolution(kvec, force, grid.dt)
    if alert:
        warnings.warn(f"mode k={k}: |rho| exceeded {ALERT_THRESHOLD:g} at t={times[rho.size - 1]:.6g}",
                      InstabilityWarning, stacklevel=2)
    return DensityTrace(k, times[: rho.size], rho, alert)


# ---------------------------------------------------------------------------
# dispersion function and Penrose-type winding test


def _tail_length(kernel: VolterraKernel, k: int, xi: complex, tol: float = 1e-10) -> float:
    growth = max(float(np.imag(xi)), 0.0)
    s = 8.0 / max(abs(k), 1)
    for _ in range(60):
        probe = np.linspace(s, 2 * s, 257)
        tail = np.trapezoid(np.abs(kernel.evaluate(k, probe)) * np.exp(growth * probe), probe)
        if tail < tol and np.all(np.abs(kernel.evaluate(k, probe[-8:])) * np.exp(growth * probe[-8:]) < tol):
            return s
        s *= 1.5
    raise ConvergenceError(f"kernel tail for k={k}, xi={xi} does not fall below {tol:g}")


def dispersion_function(kernel: VolterraKernel, k: int, xi: complex) -> complex:
    """D(k, xi) = 1 + int_0^inf K(k, s) exp(-i xi s) ds.

    Closed form for the lorentzian background, ``1 + c_k / (|k| + i xi)^2``;
    truncated adaptive quadrature otherwise.
    """
    xi = complex(xi)
    if kernel.is_zero:
        return 1.0 + 0j
    c = kernel.lorentzian_constant(k)
    if c is not None:
        return 1.0 + c / (abs(k) + 1j * xi) ** 2
    s_max = _tail_length(kernel, k, xi)

    def re(s):
        return float(kernel.evaluate(k, s) * (np.exp(-1j * xi * s)).real)

    def im(s):
        return float(kernel.evaluate(k, s) * (np.exp(-1j * xi * s)).imag)

    opts = dict(limit=400, epsabs=1e-13, epsrel=1e-11)
    a, _ = integrate.quad(re, 0.0, s_max, **opts)
    b, _ = integrate.quad(im, 0.0, s_max, **opts)
    return 1.0 + a + 1j * b


def dispersion_roots(kernel: VolterraKernel, k: int) -> np.ndarray:
    """Zeros of D(k, .) for the lorentzian background (a quadratic in xi)."""
    c = kernel.lorentzian_constant(k)
    if c is None:
        raise ValueError("closed-form roots need a lorentzian background")
    a = abs(k)
    # (a + i xi)^2 + c = -xi^2 + 2 i a xi + a^2 + c
    return np.roots([-1.0, 2j * a, a * a + c])


def penrose_check(kernel: VolterraKernel, k: int, n_samples: int = 4096,
                  max_samples: int = 1 << 20) -> StabilityVerdict:
    """Count zeros of D(k, .) in Im xi < 0 (growing modes) by the argument principle.

    xi runs over the real line via xi = |k| tan(theta); D -> 1 at both ends and on
    the closing arc, so the winding along the line is the zero count.
    """
    if kernel.is_zero:
        return StabilityVerdict(k, True, 0, None)
    scale = max(abs(k), 1)
    n = n_samples
    while True:
        theta = np.linspace(-0.5 * math.pi, 0.5 * math.pi, n + 2)[1:-1]
        xi = scale * np.tan(theta)
        d = np.array([dispersion_function(kernel, k, x) for x in xi])
        if np.any(d == 0):
            raise ResolutionError(f"D vanishes on the real line for k={k}")
        jumps = np.angle(d[1:] / d[:-1])
        if np.max(np.abs(jumps)) <= 0.5 * math.pi:
            break
        if 2 * n > max_samples:
            raise ResolutionError(f"argument jumps exceed pi/2 at {n} samples for k={k}")
        n *= 2
    # closing arc: from D(+inf) back to D(-inf), both ~1
    total = float(np.sum(jumps)) + float(np.angle(d[0] / d[-1]))
    zeros = -int(round(total / TWO_PI))
    growth = None
    if kernel.lorentzian_constant(k) is not None:
        roots = dispersion_roots(kernel, k)
        growth = float(np.max(-roots.imag))
    return StabilityVerdict(k, zeros == 0, zeros, growth)


def nyquist_curve(kernel: VolterraKernel, k: int, n_samples: int = 1024) -> np.ndarray:
    """D(k, xi) along xi = |k| tan(theta), theta in (-pi/2, pi/2)."""
    theta = np.linspace(-0.5 * math.pi, 0.5 * math.pi, n_samples + 2)[1:-1]
    xi = max(abs(k), 1) * np.tan(theta)
    return np.array([dispersion_function(kernel, k, x) for x in xi])


# ---------------------------------------------------------------------------
# profile reconstruction and scattering


def duhamel_rate(kernel: VolterraKernel, k: int, rho: complex, t: float, eta) -> np.ndarray:
    """d/dt g_hat(t, k, eta) of the linearized profile equation driven by rho_hat(t, k)."""
    eta = np.asarray(eta, dtype=float)
    if kernel.is_zero or k == 0:
        return np.zeros(eta.shape, dtype=complex)
    if not kernel.physical:
        raise ValueError("profile reconstruction needs a physical kernel")
    shifted = eta - k * t
    # -k W_hat(k) rho (eta - k t) f0_hat(eta - k t)
    return -(kernel.coefficient(k) / (k * TWO_PI)) * rho * shifted * kernel.background.symbol(shifted)


@dataclass
class ScatteringResult:
    times: np.ndarray
    h_infty: DistributionSpectrum
    distances: Dict[int, np.ndarray]
    tail_bound: Dict[int, float]
    traces: Dict[int, DensityTrace]
    alert: bool = False

    @property
    def convergence_rates(self) -> Dict[int, float]:
        """Exponential decay rate of ||g(t) - g(T)|| fitted over the middle half of the run."""
        rates = {}
        for m, d in self.distances.items():
            n = d.size
            sel = slice(n // 4, (3 * n) // 4)
            y, t = d[sel], self.times[sel]
            ok = y > 0
            if ok.sum() < 2:
                rates[m] = 0.0
                continue
            rates[m] = float(-np.polyfit(t[ok], np.log(y[ok]), 1)[0])
        return rates


def linear_profile_scattering(datum, kernel: VolterraKernel, grid: SpectralGrid,
                              m_values: Sequence[int] = (1, 2), record_every: int = 10,
                              ks: Optional[Sequence[int]] = None) -> ScatteringResult:
    """Solve the density equation per mode, rebuild g_hat(t) by Duhamel, and measure
    its approach to g_hat(t_final), the h_infty estimate."""
    if isinstance(datum, AnalyticInitialDatum):
        g0 = datum.on_grid(grid)
        forcing = datum
    else:
        g0 = datum
        forcing = _sampled_forcing(datum)
    eta = grid.eta
    n = grid.n_steps
    dt = grid.dt
    rec = list(range(0, n + 1, record_every))
    if rec[-1] != n:
        rec.append(n)
    snaps = np.repeat(np.array(g0.values)[None], len(rec), axis=0)
    traces: Dict[int, DensityTrace] = {}
    tails: Dict[int, float] = {m: 0.0 for m in m_values}
    alert = False
    ks = [int(k) for k in grid.ks if k > 0] if ks is None else [k for k in ks if k > 0]
    for k in ks:
        if not np.any(g0.mode(k)):
            continue
        tr = solve_linear_volterra(kernel, forcing, grid, k)
        traces[k] = tr
        alert |= tr.alert
        if tr.alert or kernel.is_zero:
            continue
        row = np.array(g0.mode(k))
        prev = duhamel_rate(kernel, k, tr.values[0], 0.0, eta)
        r = 1
        for j in range(1, n + 1):
            cur = duhamel_rate(kernel, k, tr.values[j], tr.times[j], eta)
            row += 0.5 * dt * (prev + cur)
            prev = cur
            if j == rec[r]:
                snaps[r, grid.row(k)] = row
                snaps[r, grid.row(-k)] = np.conj(row[::-1])
                r += 1
        for m in m_values:
            tails[m] += _tail_estimate(kernel, k, tr, grid, m)
    times = dt * np.array(rec, dtype=float)
    final = DistributionSpectrum(grid, snaps[-1], times[-1])
    distances = {}
    for m in m_values:
        distances[m] = np.array([
            weighted_velocity_norm(DistributionSpectrum(grid, snaps[i] - snaps[-1]), m)
            for i in range(len(rec))])
    return ScatteringResult(times, final, distances, tails, traces, alert)


def _sampled_forcing(spec: DistributionSpectrum):
    grid = spec.grid

    def force(k, t):
        return TWO_PI * interp_rows(spec.mode(k), grid.position(k * np.asarray(t)), grid.interp_order)
    return force


def _tail_estimate(kernel, k, trace: DensityTrace, grid: SpectralGrid, m: int) -> float:
    """Bound on ||g(inf) - g(T)||_{H^{0;m}} from the decay of |rho| over the last quarter."""
    mag = np.abs(trace.values)
    n = mag.size
    sel = slice((3 * n) // 4, n)
    t, y = trace.times[sel], mag[sel]
    if np.all(y == 0):
        return 0.0
    ok = y > 0
    slope = np.polyfit(t[ok], np.log(y[ok]), 1)[0] if ok.sum() >= 2 else 0.0
    if slope >= 0:
        return math.inf
    # the rate profile is a pure eta-shift of (eta) f0_hat(eta), so its norm is time independent
    unit = np.zeros((grid.n_k, grid.n_eta), dtype=complex)
    unit[grid.row(k)] = duhamel_rate(kernel, k, 1.0, 0.0, grid.eta)
    per_rho = weighted_velocity_norm(DistributionSpectrum(grid, unit), m)
    return 2.0 * math.sqrt(2.0) * per_rho * float(y.max()) / (-slope)
