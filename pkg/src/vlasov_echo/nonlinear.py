"""Pseudo-spectral integrator for the full nonlinear profile equation.

The profile is carried as ``F = 2pi f0_hat (k = 0) + frozen + g`` where
``frozen`` is a closed-form part (the initial data at t_in, constant in the
gliding frame) and ``g`` lives on the grid with ``g(t_in) = 0``.  Only ``g``
evolves, under

    d/dt F(k, eta) = -(1/2pi) sum_{l != 0} rho(l) W(l) l (eta - k t) F(k - l, eta - l t)

with ``rho(l) = 2pi F(l, l t)``.  Closed-form parts are evaluated exactly at
shifted points, the grid part by cubic interpolation with zero extension.
"""

from __future__ import annotations

import math
import time as _time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, List, Optional, Sequence

import numpy as np

from .echo import (EchoChainConfig, EchoChainReport, FitError, extract_peaks,
                   fit_growth_exponent, high_packet_symbol, low_mode_symbol, solve_echo_chain)
from .linear import (ALERT_THRESHOLD, DensityTrace, InstabilityWarning,
                     march_convolution)
from .spectral import (TWO_PI, AliasingWarning, BackgroundProfile, DistributionSpectrum,
                       GridDomainError, PotentialLaw, SpectralGrid, background_symbol,
                       interp_rows, shift_rows)

STABILITY_CONSTANT = 2.8


class StabilityError(RuntimeError):
    pass


@dataclass(frozen=True)
class FrozenProfile:
    """Closed-form profile part ``fn(k, eta)``, nonzero only on ``support`` modes."""

    fn: Callable
    support: FrozenSet[int]

    def __call__(self, k: int, eta) -> np.ndarray:
        eta = np.asarray(eta, dtype=float)
        if k not in self.support:
            return np.zeros(eta.shape, dtype=complex)
        return np.asarray(self.fn(k, eta), dtype=complex) * np.ones(eta.shape)

    @classmethod
    def echo_data(cls, chain: EchoChainConfig) -> "FrozenProfile":
        """f^L + f^H_in of the two-packet echo experiment."""
        k0 = chain.k0

        def fn(k, eta):
            out = np.zeros(np.shape(eta))
            if abs(k) == 1:
                out = out + low_mode_symbol(chain.epsilon, k, eta)
            if abs(k) == k0:
                out = out + high_packet_symbol(chain, k, eta)
            return out

        return cls(fn, frozenset({1, -1, k0, -k0}))


@dataclass(frozen=True)
class NonlinearState:
    g: DistributionSpectrum
    background: Optional[BackgroundProfile]
    potential: PotentialLaw
    time: float
    frozen: Optional[FrozenProfile] = None
    self_interaction: bool = True

    @property
    def grid(self) -> SpectralGrid:
        return self.g.grid

    def with_values(self, values: np.ndarray, time: float) -> "NonlinearState":
        return NonlinearState(self.g.replace(values=values, time=time), self.background,
                              self.potential, time, self.frozen, self.self_interaction)

    def full_values(self) -> np.ndarray:
        """Complete profile on the grid (background, frozen part and g)."""
        grid = self.grid
        out = np.array(self.g.values, dtype=complex)
        if self.background is not None:
            out[grid.row(0)] += TWO_PI * background_symbol(self.background, grid.eta)
        if self.frozen is not None:
            for k in self.frozen.support:
                if abs(k) <= grid.k_max:
                    out[grid.row(k)] += self.frozen(k, grid.eta)
        return out

    def perturbation_values(self) -> np.ndarray:
        """Profile minus the background row."""
        out = self.full_values()
        if self.background is not None:
            out[self.grid.row(0)] -= TWO_PI * background_symbol(self.background, self.grid.eta)
        return out

    def densities(self, t: Optional[float] = None) -> np.ndarray:
        """rho_hat(t, l) for l = 1..k_max."""
        t = self.time if t is None else t
        return _densities(self.grid, self.g.values, self.frozen, t)


def _densities(grid: SpectralGrid, values: np.ndarray, frozen: Optional[FrozenProfile],
               t: float) -> np.ndarray:
    K = grid.k_max
    ls = np.arange(1, K + 1)
    pos_eta = ls * t
    if np.max(np.abs(pos_eta)) > grid.eta_max * (1 + 1e-12):
        raise GridDomainError(f"sampling line eta = l t leaves the grid at t={t:.6g}")
    rows = values[grid.row(1):grid.row(K) + 1]
    rho = interp_rows(rows, grid.position(pos_eta), grid.interp_order)
    if frozen is not None:
        for l in frozen.support:
            if 1 <= l <= K:
                rho[l - 1] += frozen(l, l * t)
    return TWO_PI * rho


@dataclass
class _Context:
    grid: SpectralGrid
    background: Optional[BackgroundProfile]
    w_hat: np.ndarray  # W(l) for l = 1..K
    frozen: Optional[FrozenProfile]
    self_interaction: bool
    clipped: bool = False


def _context(state: NonlinearState) -> _Context:
    K = state.grid.k_max
    w = np.array([state.potential.symbol(l) for l in range(1, K + 1)], dtype=float)
    return _Context(state.grid, state.background, w, state.frozen, state.self_interaction)


def _rates(ctx: _Context, values: np.ndarray, t: float):
    """d/dt g on every row and the densities used; rows k > 0 computed, k < 0 mirrored."""
    grid = ctx.grid
    K = grid.k_max
    n = grid.n_eta
    eta = grid.eta
    rho = _densities(grid, values, ctx.frozen, t)
    out = np.zeros((K + 1, n), dtype=complex)  # rows k = 0..K
    fac = eta[None, :] - np.arange(K + 1)[:, None] * t
    for l in range(-K, K + 1):
        if l == 0:
            continue
        r = rho[l - 1] if l > 0 else np.conj(rho[-l - 1])
        c = -r * ctx.w_hat[abs(l) - 1] * l / TWO_PI
        if c == 0:
            continue
        shift = l * t
        k_lo, k_hi = max(0, l - K), min(K, K + l)
        if k_hi < k_lo:
            continue
        if ctx.self_interaction:
            m_lo, m_hi = k_lo - l, k_hi - l
            block, clipped = shift_rows(values[grid.row(m_lo):grid.row(m_hi) + 1], shift,
                                        grid.d_eta, grid.interp_order)
            ctx.clipped |= clipped
            if ctx.frozen is not None:
                for m in ctx.frozen.support:
                    if m_lo <= m <= m_hi:
                        block[m - m_lo] += ctx.frozen(m, eta - shift)
        else:
            block = np.zeros((k_hi - k_lo + 1, n), dtype=complex)
        if ctx.background is not None and k_lo <= l <= k_hi:
            block[l - k_lo] += TWO_PI * background_symbol(ctx.background, eta - shift)
        block *= fac[k_lo:k_hi + 1]
        block *= c
        out[k_lo:k_hi + 1] += block
    full = np.empty((grid.n_k, n), dtype=complex)
    full[K:] = out
    full[:K] = np.conj(out[:0:-1, ::-1])
    full[K] = 0.5 * (out[0] + np.conj(out[0, ::-1]))
    return full, rho


def rhs_profile(state: NonlinearState, t: Optional[float] = None) -> DistributionSpectrum:
    """Time derivative of the grid part of the profile at time t."""
    t = state.time if t is None else t
    ctx = _context(state)
    rates, _ = _rates(ctx, state.g.values, t)
    if ctx.clipped:
        warnings.warn("shifted read left the eta grid; zero extension used", AliasingWarning,
                      stacklevel=2)
    return DistributionSpectrum(state.grid, rates, t)


def stability_bound(grid: SpectralGrid, rho: np.ndarray, w_hat: np.ndarray, t: float) -> float:
    """dt limit c / (1 + |t| k_max ||E||_1), both signs of l counted."""
    ls = np.arange(1, grid.k_max + 1)
    e_l1 = 2.0 * float(np.sum(np.abs(ls * w_hat * rho)))
    return STABILITY_CONSTANT / (1.0 + abs(t) * grid.k_max * e_l1)


def _rk4(ctx: _Context, values: np.ndarray, t: float, dt: float):
    k1, rho = _rates(ctx, values, t)
    bound = stability_bound(ctx.grid, rho, ctx.w_hat, t)
    if abs(dt) > bound:
        raise StabilityError(f"|dt|={abs(dt):.3g} exceeds stability bound {bound:.3g} at t={t:.6g}")
    k2, _ = _rates(ctx, values + 0.5 * dt * k1, t + 0.5 * dt)
    k3, _ = _rates(ctx, values + 0.5 * dt * k2, t + 0.5 * dt)
    k4, _ = _rates(ctx, values + dt * k3, t + dt)
    return values + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), rho


def step(state: NonlinearState, dt: float) -> NonlinearState:
    """One classical fourth-order Runge-Kutta step (dt < 0 steps backward)."""
    ctx = _context(state)
    values, _ = _rk4(ctx, state.g.values, state.time, dt)
    if ctx.clipped:
        warnings.warn("shifted read left the eta grid; zero extension used", AliasingWarning,
                      stacklevel=2)
    return state.with_values(values, state.time + dt)


@dataclass
class IntegrationRecord:
    times: np.ndarray
    rho: np.ndarray  # (n_records, k_max) for l = 1..k_max
    conserved: List["ConservedQuantities"]
    alert: bool
    snapshots: List[DistributionSpectrum] = field(default_factory=list)
    conserved_times: np.ndarray = field(default_factory=lambda: np.zeros(0))


def integrate(state: NonlinearState, t_end: float, dt: float, record_every: int = 1,
              snapshot_every: int = 0, conserved_every: int = 0):
    """Step from state.time to t_end (either direction) with |dt|.

    Returns ``(final_state, IntegrationRecord)``.  Densities are recorded at
    every ``record_every``-th step including both ends.
    """
    span = t_end - state.time
    n = int(round(abs(span) / abs(dt)))
    h = math.copysign(abs(dt), span) if n else abs(dt)
    ctx = _context(state)
    values = np.array(state.g.values)
    t0 = state.time
    times, rhos, cons, snaps, ctimes = [], [], [], [], []
    alert = False
    for j in range(n + 1):
        t = t0 + j * h
        rec = j % record_every == 0 or j == n
        if j < n:
            new, rho = _rk4(ctx, values, t, h)
        else:
            rho = _densities(ctx.grid, values, ctx.frozen, t)
        if rec:
            times.append(t)
            rhos.append(rho)
        if conserved_every and (j % conserved_every == 0 or j == n):
            cons.append(conserved_quantities(state.with_values(values, t)))
            ctimes.append(t)
        if snapshot_every and (j % snapshot_every == 0 or j == n):
            snaps.append(DistributionSpectrum(ctx.grid, state.with_values(values, t).perturbation_values(), t))
        if np.max(np.abs(rho)) > ALERT_THRESHOLD or not np.all(np.isfinite(rho)):
            alert = True
            warnings.warn(f"density exceeded {ALERT_THRESHOLD:g} at t={t:.6g}", InstabilityWarning,
                          stacklevel=2)
            n = j
            break
        if j < n:
            values = new
    if ctx.clipped:
        warnings.warn("shifted read left the eta grid; zero extension used", AliasingWarning,
                      stacklevel=2)
    final = state.with_values(values, t0 + n * h)
    return final, IntegrationRecord(np.array(times), np.array(rhos), cons, alert, snaps,
                                    np.array(ctimes))


# ---------------------------------------------------------------------------
# conservation


@dataclass(frozen=True)
class ConservedQuantities:
    mass: float
    l2: float
    energy: float
    infinite_moment: bool = False

    def __iter__(self):
        return iter((self.mass, self.l2, self.energy))

    def as_record(self) -> dict:
        return {"mass": self.mass, "l2": self.l2, "energy": self.energy,
                "infinite_moment": self.infinite_moment}


def _closed_form_rows(state: NonlinearState) -> Dict[int, Callable]:
    rows: Dict[int, Callable] = {}
    grid = state.grid
    if state.frozen is not None:
        for k in state.frozen.support:
            if abs(k) <= grid.k_max:
                rows[k] = (lambda kk: lambda eta: state.frozen(kk, eta))(k)
    if state.background is not None:
        prev = rows.get(0)
        bg = state.background

        def row0(eta, prev=prev):
            out = TWO_PI * background_symbol(bg, eta) + 0j
            return out + prev(eta) if prev is not None else out

        rows[0] = row0
    return rows


def profile_l2(state: NonlinearState, refine: int = 32) -> float:
    """Squared L^2 norm of the full profile, int sum_k |F(k, eta)|^2 d eta.

    ``F = A + g`` with A in closed form; A has kinks (exp(-|eta|) shapes), so
    |A|^2 and the cross term 2 Re <A, g> are integrated on a grid ``refine``
    times finer, with g interpolated onto it.  |g|^2 uses the grid itself.
    """
    grid = state.grid
    vals = state.g.values
    total = grid.d_eta * float(np.sum(np.abs(vals) ** 2))
    rows = _closed_form_rows(state)
    if not rows:
        return total
    n_f = refine * (grid.n_eta - 1) + 1
    pos = np.arange(n_f) / refine
    eta_f = grid.eta[0] + grid.d_eta * pos
    h = grid.d_eta / refine
    for k, fn in rows.items():
        a = np.asarray(fn(eta_f), dtype=complex)
        g_f = interp_rows(vals[grid.row(k)], pos, grid.interp_order)
        integrand = np.abs(a) ** 2 + 2.0 * (np.conj(a) * g_f).real
        total += h * float(np.sum(integrand) - 0.5 * (integrand[0] + integrand[-1]))
    return total


def conserved_quantities(state: NonlinearState) -> ConservedQuantities:
    """Mass, L^2 Casimir and energy of the reconstructed distribution.

    The kinetic energy uses the background's exact second moment; for a
    lorentzian it is infinite, so only the perturbation's energy is reported
    and the flag is set.
    """
    grid = state.grid
    full = state.full_values()
    c = (grid.n_eta - 1) // 2
    mass = TWO_PI * float(full[grid.row(0), c].real)
    l2 = profile_l2(state)
    pert = full[grid.row(0)].copy()
    if state.background is not None:
        pert = pert - TWO_PI * background_symbol(state.background, grid.eta)
    h = grid.d_eta
    d2 = (pert[c + 1] - 2.0 * pert[c] + pert[c - 1]).real / (h * h)
    kinetic = 0.5 * TWO_PI * (-d2)
    infinite = False
    if state.background is not None:
        m2 = state.background.second_moment
        if math.isinf(m2):
            infinite = True
        else:
            kinetic += 0.5 * TWO_PI ** 2 * m2 * float(background_symbol(state.background, 0.0))
    rho = state.densities()
    ls = np.arange(1, grid.k_max + 1)
    w = np.array([state.potential.symbol(l) for l in ls], dtype=float)
    # both signs of l; Parseval on the torus carries 1/2pi
    potential = 0.5 * 2.0 * float(np.sum(w * np.abs(rho) ** 2)) / TWO_PI
    return ConservedQuantities(mass, l2, kinetic + potential, infinite)


def relative_drift(series: Sequence[float]) -> float:
    s = np.asarray(series, dtype=float)
    ref = abs(s[0]) if s[0] != 0 else 1.0
    return float(np.max(np.abs(s - s[0])) / ref)


def time_reversal_probe(state: NonlinearState, dt: float, n_steps: int = 100):
    """Integrate n_steps forward and back; returns (round_trip_error, one_step_error).

    The one-step truncation error is the Richardson estimate
    ``|y_dt - y_{dt/2,dt/2}| * 16/15`` at the starting state.
    """
    ctx = _context(state)
    y0 = np.array(state.g.values)
    t0 = state.time
    y = y0
    for j in range(n_steps):
        y, _ = _rk4(ctx, y, t0 + j * dt, dt)
    for j in range(n_steps):
        y, _ = _rk4(ctx, y, t0 + (n_steps - j) * dt, -dt)
    round_trip = float(np.max(np.abs(y - y0)))
    one, _ = _rk4(ctx, y0, t0, dt)
    half, _ = _rk4(ctx, y0, t0, 0.5 * dt)
    half, _ = _rk4(ctx, half, t0 + 0.5 * dt, 0.5 * dt)
    one_step = float(np.max(np.abs(one - half))) * 16.0 / 15.0
    return round_trip, one_step


# ---------------------------------------------------------------------------
# the two-packet echo experiment


@dataclass(frozen=True)
class ExperimentConfig:
    chain: EchoChainConfig
    integrator: str = "rk4"
    record_every: int = 1
    self_interaction: bool = True
    compare_reduced: bool = True
    reduced_refine: int = 4

    def __post_init__(self):
        if self.integrator != "rk4":
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.record_every < 1:
            raise ValueError("record_every must be positive")
        k0 = self.chain.k0
        if k0 > 1:
            gap = self.chain.eta0 / (k0 * (k0 - 1))
            if self.record_every * self.chain.grid.dt > gap:
                raise ValueError(f"record_every*dt={self.record_every * self.chain.grid.dt:.3g} "
                                 f"exceeds the critical-time gap {gap:.3g}")
        if self.chain.grid.k_max < k0:
            raise ValueError("grid k_max must cover k0")


@dataclass
class ExperimentResult:
    traces: List[DensityTrace]
    report: EchoChainReport
    error_vs_reduced: float
    record: IntegrationRecord
    final_state: NonlinearState
    reduced_traces: Optional[List[DensityTrace]] = None
    wall_time: float = 0.0

    def __iter__(self):
        return iter((self.traces, self.report, self.error_vs_reduced))

    @property
    def mass_drift(self) -> float:
        return relative_drift([c.mass for c in self.record.conserved])

    @property
    def l2_drift(self) -> float:
        return relative_drift([c.l2 for c in self.record.conserved])


def initial_state(config: ExperimentConfig) -> NonlinearState:
    chain = config.chain
    grid = chain.grid
    return NonlinearState(DistributionSpectrum.zeros(grid, chain.t_in), chain.background,
                          chain.potential, chain.t_in, FrozenProfile.echo_data(chain),
                          config.self_interaction)


def _traces(times: np.ndarray, rho: np.ndarray, alert: bool) -> List[DensityTrace]:
    K = rho.shape[1] if rho.ndim == 2 else 0
    out = []
    for k in range(-K, K + 1):
        if k == 0:
            continue
        vals = rho[:, abs(k) - 1]
        out.append(DensityTrace(k, times, vals if k > 0 else np.conj(vals), alert))
    return out


def packet_response(chain: EchoChainConfig, times: np.ndarray, k: int,
                    high: bool = True) -> np.ndarray:
    """Linear density response on mode k of the two-packet data, zero off k = 1 and k0."""
    force = np.zeros(times.size, dtype=complex)
    if k == 1:
        force += TWO_PI * low_mode_symbol(chain.epsilon, 1, times)
    if high and k == chain.k0:
        force += TWO_PI * high_packet_symbol(chain, k, k * times)
    kernel = chain.self_kernel
    if kernel.is_zero or not np.any(force):
        return force
    dt = times[1] - times[0]
    kvec = np.asarray(kernel.evaluate(k, dt * np.arange(times.size)), dtype=float)
    rho, _ = march_convolution(kvec, force, dt)
    out = np.zeros(times.size, dtype=complex)
    out[:rho.size] = rho
    return out


def low_mode_response(chain: EchoChainConfig, times: np.ndarray) -> np.ndarray:
    """Linear density response of the low-frequency packet on k = 1."""
    return packet_response(chain, times, 1, high=False)


def _refined(times: np.ndarray, refine: int) -> np.ndarray:
    dt = (times[1] - times[0]) / refine
    return times[0] + dt * np.arange(refine * (times.size - 1) + 1)


def _on(coarse: np.ndarray, fine: np.ndarray, values: np.ndarray) -> np.ndarray:
    return np.interp(coarse, fine, values.real) + 1j * np.interp(coarse, fine, values.imag)


def linear_deviation(traces: Sequence[DensityTrace], chain: EchoChainConfig,
                     refine: int = 4) -> float:
    """max_k sup_t |rho_nonlinear - rho_linear| over the positive modes.

    The linear reference is the Volterra response of each packet on its own
    mode, marched on a grid ``refine`` times finer than the recorded one.
    """
    out = 0.0
    for tr in traces:
        if tr.k <= 0 or tr.times.size < 2:
            continue
        fine = _refined(tr.times, refine)
        lin = _on(tr.times, fine, packet_response(chain, fine, tr.k))
        out = max(out, float(np.max(np.abs(tr.values - lin))))
    return out


def reduced_deviation(result_traces: Sequence[DensityTrace], reduced: Sequence[DensityTrace],
                      chain: EchoChainConfig, refine: int) -> float:
    """max_k sup_t |rho_full - rho_low - rho_red| / max_k sup_t |rho_red| over k = 1..k0."""
    full = {tr.k: tr for tr in result_traces}
    red = {tr.k: tr for tr in reduced}
    num = den = 0.0
    for k in range(1, chain.k0 + 1):
        if k not in full or k not in red:
            continue
        tf = full[k].times
        rr = red[k]
        # reduced times are a refinement of the full ones
        r_on = np.interp(tf, rr.times, rr.values.real) + 1j * np.interp(tf, rr.times, rr.values.imag)
        diff = full[k].values - r_on
        if k == 1:
            t_fine = rr.times
            low = low_mode_response(chain, t_fine)
            diff = diff - (np.interp(tf, t_fine, low.real) + 1j * np.interp(tf, t_fine, low.imag))
        num = max(num, float(np.max(np.abs(diff))))
        den = max(den, float(np.max(np.abs(rr.values))))
    return num / den if den > 0 else math.nan


def echo_part(traces: Sequence[DensityTrace], chain: EchoChainConfig,
              refine: int = 4) -> List[DensityTrace]:
    """Positive-mode traces with the low packet's linear response removed from k = 1."""
    out = []
    for tr in traces:
        if tr.k <= 0:
            continue
        vals = tr.values
        if tr.k == 1 and tr.times.size > 1:
            dt = (tr.times[1] - tr.times[0]) / refine
            fine = tr.times[0] + dt * np.arange(refine * (tr.times.size - 1) + 1)
            low = low_mode_response(chain, fine)
            vals = vals - (np.interp(tr.times, fine, low.real) + 1j * np.interp(tr.times, fine, low.imag))
        out.append(DensityTrace(tr.k, tr.times, vals, tr.alert))
    return out


def run_echo_experiment(config: ExperimentConfig, conserved_every: int = 0,
                        residual_bound: float = 1.0, snapshot_every: int = 0) -> ExperimentResult:
    """Integrate the two-packet data from t_in to t_final and summarize echoes.

    Peaks are extracted after removing the low packet's own linear response
    from k = 1, which otherwise dominates that mode near t_in.
    """
    start = _time.perf_counter()
    chain = config.chain
    grid = chain.grid
    state = initial_state(config)
    final, record = integrate(state, grid.t_final, grid.dt, config.record_every,
                              snapshot_every=snapshot_every,
                              conserved_every=conserved_every or max(1, grid.n_steps // 50))
    traces = _traces(record.times, record.rho, record.alert)
    pos = echo_part(traces, chain, config.reduced_refine)
    report = EchoChainReport(extract_peaks(pos), math.nan, math.nan, True, record.alert)
    if len(report.per_mode) >= 3:
        try:
            c, res = fit_growth_exponent(report, chain.epsilon, residual_bound)
            report.fitted_c, report.fit_residual, report.fit_failed = c, res, False
        except FitError:
            pass
    err = math.nan
    reduced = None
    if config.compare_reduced and chain.epsilon > 0:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", InstabilityWarning)
            reduced, _ = solve_echo_chain(chain, dt=grid.dt / config.reduced_refine)
        err = reduced_deviation(traces, reduced, chain, config.reduced_refine)
    return ExperimentResult(traces, report, err, record, final, reduced,
                            _time.perf_counter() - start)


def solve_backward(config: ExperimentConfig, t_target: float) -> NonlinearState:
    """Final-time mode: integrate the t_in data backward to t_target < t_in."""
    state = initial_state(config)
    if t_target >= state.time:
        raise ValueError("t_target must precede t_in")
    final, _ = integrate(state, t_target, config.chain.grid.dt)
    return final
