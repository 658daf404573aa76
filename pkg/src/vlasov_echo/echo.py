"""Reduced echo-cascade models.

The truncated chain marched here is

    rho(t,k) = F(t,k) - int K_self(k, t - tau) rho(tau,k) dtau
               - eps sum_{l = k +- 1} int rho(tau,l) W(l) l k (t - tau) exp(-|k t - l tau|) dtau

where F is the free-streaming density of the high-frequency packet and
K_self is the linear kernel of the lorentzian background of size delta.
Integrals start at the configuration's t_in.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .linear import (ALERT_THRESHOLD, DensityTrace, InstabilityWarning, VolterraKernel,
                     duhamel_rate)
from .spectral import (TWO_PI, BackgroundProfile, DistributionSpectrum, GridDomainError,
                       PotentialLaw, SpectralGrid)

# e^-40 ~ 4e-18: coupling weights below this are dropped from the memory sums
_CUTOFF = 40.0


class FitError(RuntimeError):
    pass


def backsub_toy(n: int) -> np.ndarray:
    """Back-substitution on the n x n upper-bidiagonal system (1 | 2) x = e_n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    diag = np.ones(n)
    upper = np.full(n - 1, 2.0)
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    x = np.zeros(n)
    for i in range(n - 1, -1, -1):
        acc = rhs[i]
        if i < n - 1:
            acc -= upper[i] * x[i + 1]
        x[i] = acc / diag[i]
    return x


def critical_times(eta0: float, k_max: int) -> List[float]:
    """Orr critical times eta0/k, ordered k = k_max..1 (increasing in time)."""
    if eta0 <= 0 or k_max < 1:
        raise ValueError("need eta0 > 0 and k_max >= 1")
    return [eta0 / k for k in range(k_max, 0, -1)]


def bracket(*xs) -> float:
    return math.sqrt(1.0 + sum(float(x) ** 2 for x in xs))


@dataclass(frozen=True)
class EchoChainConfig:
    epsilon: float
    delta: float
    k0: int
    eta0: float
    sigma: float
    t_in: float
    k_trunc: int
    grid: SpectralGrid
    potential: PotentialLaw = field(default_factory=lambda: PotentialLaw.power(-1, 2.0))
    p_exponent: float = 0.5

    def __post_init__(self):
        if not (self.epsilon >= 0 and self.delta >= 0):
            raise ValueError("epsilon and delta must be nonnegative")
        if self.k0 < 1 or self.k0 > self.k_trunc:
            raise ValueError(f"k0={self.k0} must lie in 1..k_trunc={self.k_trunc}")
        if self.eta0 <= 0 or self.t_in < 0:
            raise ValueError("eta0 must be positive and t_in nonnegative")
        if self.eta0 > self.grid.t_final:
            raise ValueError(f"t_final={self.grid.t_final} < eta0={self.eta0}: the k=1 echo is missed")
        if self.t_in >= self.grid.t_final:
            raise ValueError("t_in must precede t_final")
        if self.epsilon > 0 and self.delta > self.epsilon ** self.p_exponent:
            warnings.warn(f"delta={self.delta} exceeds epsilon^p={self.epsilon ** self.p_exponent:.3g}",
                          stacklevel=2)

    @classmethod
    def build(cls, epsilon: float, k0: int, eta0: float, grid: SpectralGrid,
              delta: Optional[float] = None, sigma: float = 1.0, q: float = 0.5,
              t_in: Optional[float] = None, k_trunc: Optional[int] = None,
              potential: Optional[PotentialLaw] = None) -> "EchoChainConfig":
        """Defaults: delta = epsilon^2, t_in = epsilon^-q, k_trunc = 2 k0."""
        if delta is None:
            delta = epsilon ** 2
        if t_in is None:
            t_in = epsilon ** (-q) if epsilon > 0 else 1.0
        return cls(epsilon, delta, k0, eta0, sigma, t_in, k_trunc or 2 * k0, grid,
                   potential or PotentialLaw.power(-1, 2.0))

    @property
    def packet_amplitude(self) -> float:
        return self.epsilon / bracket(self.k0, self.eta0) ** self.sigma

    @property
    def background(self) -> Optional[BackgroundProfile]:
        return BackgroundProfile.lorentzian(self.delta) if self.delta > 0 else None

    @property
    def self_kernel(self) -> VolterraKernel:
        if self.delta <= 0:
            return VolterraKernel.zero()
        return VolterraKernel(self.potential, self.background)

    def times(self, dt: Optional[float] = None) -> np.ndarray:
        dt = self.grid.dt if dt is None else dt
        n = int(round((self.grid.t_final - self.t_in) / dt))
        return self.t_in + dt * np.arange(n + 1)


def high_packet_symbol(config: EchoChainConfig, k: int, eta):
    """Fourier transform of eps <k0,eta0>^-sigma cos(k0 z) cos(eta0 v) / (1 + 4 v^2)."""
    eta = np.asarray(eta, dtype=float)
    if abs(k) != config.k0:
        return np.zeros(eta.shape)
    a = config.packet_amplitude * math.pi / 8.0
    return a * (np.exp(-0.5 * np.abs(eta - config.eta0)) + np.exp(-0.5 * np.abs(eta + config.eta0)))


def low_mode_symbol(epsilon: float, k: int, eta):
    """Low-frequency profile eps exp(-|eta|) on k = +-1.

    Normalized so that its coupling coefficient in the density chain is
    exactly epsilon.
    """
    eta = np.asarray(eta, dtype=float)
    if abs(k) != 1:
        return np.zeros(eta.shape)
    return epsilon * np.exp(-np.abs(eta))


@dataclass
class EchoChainReport:
    per_mode: List[Tuple[int, float, float]]
    fitted_c: float
    fit_residual: float
    fit_failed: bool = False
    alert: bool = False

    def as_record(self) -> dict:
        return {
            "per_mode": [{"k": k, "t_peak": t, "amplitude": a} for k, t, a in self.per_mode],
            "fitted_c": self.fitted_c,
            "fit_residual": self.fit_residual,
            "fit_failed": self.fit_failed,
            "alert": self.alert,
        }


# ---------------------------------------------------------------------------
# marching


def march_chain(config: EchoChainConfig, forcing: Dict[int, np.ndarray], times: np.ndarray,
                include_self: bool = True, epsilon: Optional[float] = None):
    """March the positive modes 1..k_trunc; returns (rho array [k-1, j], alert, n_done)."""
    eps = config.epsilon if epsilon is None else epsilon
    kmax = config.k_trunc
    n = times.size
    dt = times[1] - times[0]
    rho = np.zeros((kmax + 1, n), dtype=complex)
    force = np.zeros((kmax + 1, n), dtype=complex)
    for k, f in forcing.items():
        if 1 <= k <= kmax:
            force[k] = f
    w_hat = {k: config.potential.symbol(k) for k in range(1, kmax + 1)}
    kernel = config.self_kernel
    self_on = include_self and not kernel.is_zero
    if self_on:
        s = dt * np.arange(n)
        kself = {k: np.asarray(kernel.evaluate(k, s), dtype=float) for k in range(1, kmax + 1)}
        width = {k: min(n, int(_CUTOFF / (k * dt)) + 2) for k in range(1, kmax + 1)}
    rho[:, 0] = force[:, 0]
    for j in range(1, n):
        t = times[j]
        for k in range(1, kmax + 1):
            acc = 0.0 + 0.0j
            if self_on:
                lo = max(0, j - width[k] + 1)
                kk = kself[k][j - lo:0:-1]  # K(t_j - t_i), i = lo..j-1
                part = np.dot(kk, rho[k, lo:j])
                if lo == 0:
                    part -= 0.5 * kself[k][j] * rho[k, 0]
                acc += part
            if eps != 0.0:
                for l in (k - 1, k + 1):
                    if l < 1 or l > kmax:
                        continue
                    # weights exp(-|k t - l tau|) are significant for l tau in k t +- cutoff
                    i_lo = max(0, int(math.floor(((k * t - _CUTOFF) / l - times[0]) / dt)))
                    i_hi = min(j - 1, int(math.ceil(((k * t + _CUTOFF) / l - times[0]) / dt)))
                    if i_hi < i_lo:
                        continue
                    tau = times[i_lo:i_hi + 1]
                    wts = k * (t - tau) * np.exp(-np.abs(k * t - l * tau))
                    part = np.dot(wts, rho[l, i_lo:i_hi + 1])
                    if i_lo == 0:
                        part -= 0.5 * wts[0] * rho[l, 0]
                    acc += eps * w_hat[l] * l * part
            rho[k, j] = force[k, j] - dt * acc
        if not np.all(np.isfinite(rho[:, j])) or np.max(np.abs(rho[:, j])) > ALERT_THRESHOLD:
            return rho, True, j + 1
    return rho, False, n


def _traces_from(rho: np.ndarray, times: np.ndarray, n_done: int, alert: bool,
                 kmax: int) -> List[DensityTrace]:
    out = []
    for k in range(-kmax, kmax + 1):
        if k == 0:
            continue
        vals = rho[abs(k), :n_done]
        out.append(DensityTrace(k, times[:n_done], vals if k > 0 else np.conj(vals), alert))
    return out


def packet_forcing(config: EchoChainConfig, times: np.ndarray) -> Dict[int, np.ndarray]:
    k0 = config.k0
    return {k0: TWO_PI * high_packet_symbol(config, k0, k0 * times) + 0j}


def solve_toy_rho(config: EchoChainConfig, potential: Optional[PotentialLaw] = None,
                  dt: Optional[float] = None) -> List[DensityTrace]:
    """Nearest-neighbour echo system without the background self-interaction."""
    if potential is not None and potential != config.potential:
        config = _with(config, potential=potential)
    times = config.times(dt)
    rho, alert, n_done = march_chain(config, packet_forcing(config, times), times, include_self=False)
    if alert:
        warnings.warn("toy echo system exceeded the instability threshold", InstabilityWarning,
                      stacklevel=2)
    return _traces_from(rho, times, n_done, alert, config.k_trunc)


def _with(config: EchoChainConfig, **changes) -> EchoChainConfig:
    fields = dict(config.__dict__)
    fields.update(changes)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return EchoChainConfig(**fields)


def solve_echo_chain(config: EchoChainConfig, dt: Optional[float] = None,
                     residual_bound: float = 1.0, resolve_rel: float = 1e-6):
    """March the truncated chain and summarize its echoes.

    Returns ``(traces, report)``.  The report lists resolved peaks from the
    highest mode down, the fitted growth constant c of
    ``log amplitude ~ c (eps t_peak)^(1/3)`` and its RMS residual.
    """
    times = config.times(dt)
    rho, alert, n_done = march_chain(config, packet_forcing(config, times), times)
    if alert:
        warnings.warn("echo chain exceeded the instability threshold", InstabilityWarning,
                      stacklevel=2)
    traces = _traces_from(rho, times, n_done, alert, config.k_trunc)
    per_mode = extract_peaks([tr for tr in traces if tr.k > 0], resolve_rel)
    report = EchoChainReport(per_mode, math.nan, math.nan, True, alert)
    if len(per_mode) >= 3 and not alert:
        try:
            c, res = fit_growth_exponent(report, config.epsilon, residual_bound)
            report.fitted_c, report.fit_residual, report.fit_failed = c, res, False
        except FitError:
            pass
    return traces, report


def peak_of(times: np.ndarray, values: np.ndarray) -> Tuple[int, float, float]:
    """Discrete argmax of |values| refined by a parabola through its neighbours."""
    mag = np.abs(values)
    i = int(np.argmax(mag))
    if 0 < i < mag.size - 1:
        ym, y0, yp = mag[i - 1], mag[i], mag[i + 1]
        denom = ym - 2 * y0 + yp
        if denom < 0:
            off = 0.5 * (ym - yp) / denom
            dt = times[i + 1] - times[i]
            return i, float(times[i] + off * dt), float(y0 - 0.25 * (ym - yp) * off)
    return i, float(times[i]), float(mag[i])


def extract_peaks(traces: Sequence[DensityTrace], resolve_rel: float = 1e-6):
    """(k, t_peak, amplitude) for modes whose maximum is interior and not negligible."""
    found = []
    top = max((float(np.max(np.abs(tr.values))) for tr in traces if tr.values.size), default=0.0)
    for tr in sorted(traces, key=lambda tr: -tr.k):
        if tr.values.size < 3:
            continue
        i, t_peak, amp = peak_of(tr.times, tr.values)
        if i == 0 or i == tr.values.size - 1 or amp <= resolve_rel * top or amp == 0:
            continue
        found.append((tr.k, t_peak, amp))
    return found


def fit_growth_exponent(report: EchoChainReport, epsilon: float,
                        residual_bound: float = math.inf) -> Tuple[float, float]:
    """Least squares of log amplitude against (eps t_peak)^(1/3) with intercept.

    Returns ``(c, rms_residual)``; raises FitError with fewer than three echoes
    or a residual above ``residual_bound``.
    """
    if len(report.per_mode) < 3:
        raise FitError(f"need >= 3 resolved echoes, got {len(report.per_mode)}")
    t = np.array([p[1] for p in report.per_mode], dtype=float)
    a = np.array([p[2] for p in report.per_mode], dtype=float)
    x = np.cbrt(epsilon * t)
    y = np.log(a)
    design = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = float(np.sqrt(np.mean((design @ coef - y) ** 2)))
    if resid > residual_bound:
        raise FitError(f"fit residual {resid:.3g} exceeds bound {residual_bound:.3g}")
    return float(coef[0]), resid


# ---------------------------------------------------------------------------
# distribution-side toy


@dataclass
class GToyResult:
    times: np.ndarray
    values: np.ndarray  # (n_records, n_k, n_eta)
    rates: np.ndarray   # d/dt g_hat at the recorded times
    grid: SpectralGrid

    def spectrum(self, i: int) -> DistributionSpectrum:
        return DistributionSpectrum(self.grid, self.values[i], float(self.times[i]))


def gtoy_rate(config: EchoChainConfig, rho_now: Dict[int, complex], t: float) -> np.ndarray:
    """d/dt g_hat(t, k, eta) on every grid row, driven by the chain densities at time t."""
    grid = config.grid
    eta = grid.eta
    out = np.zeros((grid.n_k, grid.n_eta), dtype=complex)
    kernel = config.self_kernel
    for k in range(1, grid.k_max + 1):
        row = np.zeros(grid.n_eta, dtype=complex)
        for l in (k - 1, k + 1):
            r = rho_now.get(l, 0.0)
            if l < 1 or r == 0:
                continue
            # low-mode profile sits at k - l = -+1 with coefficient eps
            row += -(config.epsilon / TWO_PI) * r * config.potential.symbol(l) * l \
                * (eta - k * t) * np.exp(-np.abs(eta - l * t))
        if not kernel.is_zero and rho_now.get(k, 0.0) != 0:
            row += duhamel_rate(kernel, k, rho_now[k], t, eta)
        out[grid.row(k)] = row
        out[grid.row(-k)] = np.conj(row[::-1])
    return out


def solve_gtoy(config: EchoChainConfig, rho_traces: Sequence[DensityTrace],
               record_every: int = 10) -> GToyResult:
    """Integrate the forced profile equation in (k, eta) from the packet at t_in.

    Trapezoid in time on the traces' own steps; the trace sampling
    ``2 pi g_hat(t, k, k t)`` reproduces the chain densities.
    """
    grid = config.grid
    by_k = {tr.k: tr for tr in rho_traces if tr.k > 0}
    if not by_k:
        raise ValueError("no positive-mode traces given")
    times = next(iter(by_k.values())).times
    active = [k for k, tr in by_k.items() if np.any(tr.values)]
    if active and max(active) * times[-1] > grid.eta_max:
        raise GridDomainError("eta = l t leaves the grid for an active mode")
    if max(by_k) > grid.k_max + 1 and any(np.any(by_k[k].values) for k in by_k if k > grid.k_max + 1):
        warnings.warn("traces above k_max + 1 do not feed any grid row", stacklevel=2)
    g = np.zeros((grid.n_k, grid.n_eta), dtype=complex)
    for k in range(-grid.k_max, grid.k_max + 1):
        g[grid.row(k)] = high_packet_symbol(config, k, grid.eta)

    def rho_at(j):
        return {k: tr.values[j] for k, tr in by_k.items()}

    n = times.size
    rec_idx = list(range(0, n, record_every))
    if rec_idx[-1] != n - 1:
        rec_idx.append(n - 1)
    vals = np.zeros((len(rec_idx),) + g.shape, dtype=complex)
    rates = np.zeros_like(vals)
    prev = gtoy_rate(config, rho_at(0), times[0])
    vals[0], rates[0] = g, prev
    r = 1
    for j in range(1, n):
        cur = gtoy_rate(config, rho_at(j), times[j])
        g = g + 0.5 * (times[j] - times[j - 1]) * (prev + cur)
        prev = cur
        if r < len(rec_idx) and j == rec_idx[r]:
            vals[r], rates[r] = g, cur
            r += 1
    return GToyResult(times[rec_idx], vals, rates, grid)
