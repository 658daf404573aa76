"""Free streaming, Orr unmixing and velocity-averaging checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .spectral import (TWO_PI, DistributionSpectrum, GridDomainError, SpectralGrid,
                       interp_rows)


@dataclass(frozen=True)
class AnalyticInitialDatum:
    """Closed-form initial data ``h_in_hat(k, eta)``.

    ``orr_packet`` is ``exp(-lam |eta - eta0|)`` on k = k0 and its Hermitian
    mirror on k = -k0.  ``gaussian`` is ``exp(-eta^2 / width^2)`` on k = +-k0.
    ``custom`` wraps any callable ``fn(k, eta)``; the caller vouches for
    Hermitian symmetry.
    """

    kind: str
    lam: float = 1.0
    eta0: float = 0.0
    k0: int = 1
    width: float = 1.0
    fn: Optional[Callable] = field(default=None, compare=False)
    amplitude: float = 1.0
    mean_zero: bool = True

    def __post_init__(self):
        if self.kind not in ("orr_packet", "gaussian", "custom", "zero"):
            raise ValueError(f"unknown datum kind {self.kind!r}")
        if not self.mean_zero:
            raise ValueError("initial data must be mean zero")
        if self.kind in ("orr_packet", "gaussian") and self.k0 == 0:
            raise ValueError("k0 = 0 would carry mass; data must be mean zero")
        if self.kind == "custom" and self.fn is None:
            raise ValueError("custom datum needs fn")

    @classmethod
    def orr_packet(cls, lam: float, eta0: float, k0: int = 1, amplitude: float = 1.0):
        return cls("orr_packet", lam=float(lam), eta0=float(eta0), k0=int(k0), amplitude=amplitude)

    @classmethod
    def gaussian(cls, width: float, k0: int = 1, amplitude: float = 1.0):
        return cls("gaussian", width=float(width), k0=int(k0), amplitude=amplitude)

    @classmethod
    def custom(cls, fn: Callable):
        return cls("custom", fn=fn)

    @classmethod
    def zero(cls):
        return cls("zero")

    def __call__(self, k: int, eta):
        eta = np.asarray(eta, dtype=float)
        if self.kind == "zero":
            out = np.zeros(eta.shape, dtype=complex)
        elif self.kind == "custom":
            out = np.asarray(self.fn(k, eta), dtype=complex) * np.ones(eta.shape)
        elif abs(k) != abs(self.k0):
            out = np.zeros(eta.shape, dtype=complex)
        elif self.kind == "orr_packet":
            center = self.eta0 if k == self.k0 else -self.eta0
            out = self.amplitude * np.exp(-self.lam * np.abs(eta - center)) + 0j
        else:
            out = self.amplitude * np.exp(-(eta / self.width) ** 2) + 0j
        return complex(out) if out.ndim == 0 else out

    def velocity_flipped(self) -> "AnalyticInitialDatum":
        """Datum of ``h(x, -v)``: ``h_hat(k, -eta)``."""
        base = self
        return AnalyticInitialDatum.custom(lambda k, eta: base(k, -np.asarray(eta)))

    def on_grid(self, grid: SpectralGrid, time: float = 0.0) -> DistributionSpectrum:
        return DistributionSpectrum.from_function(grid, self, time)


def evolve_free(datum: AnalyticInitialDatum, t: float, k: int, eta):
    """h_hat(t, k, eta) = h_in_hat(k, eta + k t), exact."""
    return datum(k, np.asarray(eta, dtype=float) + k * t)


def density_free(datum: AnalyticInitialDatum, t, k: int):
    """rho_hat(t, k) = 2 pi h_in_hat(k, k t)."""
    if k == 0:
        raise ValueError("k = 0 density mode vanishes for mean-zero data")
    t = np.asarray(t, dtype=float)
    return TWO_PI * datum(k, k * t)


def japanese(x):
    return np.sqrt(1.0 + np.asarray(x, dtype=float) ** 2)


@dataclass
class DecayCertificate:
    k: int
    times: np.ndarray
    poly_ratios: np.ndarray
    exp_ratios: np.ndarray

    @property
    def max_ratio(self) -> float:
        vals = np.concatenate([self.poly_ratios, self.exp_ratios])
        return float(np.max(vals)) if vals.size else 0.0


def decay_certificate(datum: AnalyticInitialDatum, sigma: float, lam: float,
                      t_samples: Sequence[float], k: Optional[int] = None,
                      eta_span: Optional[float] = None, n_sup: int = 200001) -> DecayCertificate:
    """Ratios of |rho_hat(t,k)|/2pi weighted by <kt>^sigma (resp. exp(lam <kt>^sigma))
    to the matching weighted sup of the datum over a dense eta grid.

    The sup grid covers the sample points ``k t`` as well, so a ratio above one
    can only come from rounding.
    """
    if sigma < 0 or lam < 0:
        raise ValueError("sigma and lambda must be nonnegative")
    if k is None:
        k = datum.k0 if datum.kind in ("orr_packet", "gaussian") else 1
    t = np.asarray(t_samples, dtype=float)
    kt = k * t
    if eta_span is None:
        eta_span = max(float(np.max(np.abs(kt))) if kt.size else 0.0, 50.0) * 1.5
    eta = np.union1d(np.linspace(-eta_span, eta_span, n_sup), kt)
    vals = np.abs(datum(k, eta))
    sup_poly = np.max(japanese(eta) ** sigma * vals)
    with np.errstate(divide="ignore"):
        log_vals = np.log(vals)
    log_sup_exp = np.max(lam * japanese(eta) ** sigma + log_vals)

    rho = np.abs(density_free(datum, t, k)) / TWO_PI
    if sup_poly == 0:
        return DecayCertificate(k, t, np.zeros_like(t), np.zeros_like(t))
    poly = rho * japanese(kt) ** sigma / sup_poly
    with np.errstate(divide="ignore"):
        exp_r = np.exp(np.log(rho) + lam * japanese(kt) ** sigma - log_sup_exp)
    return DecayCertificate(k, t, poly, np.nan_to_num(exp_r, nan=0.0))


def _eta_derivatives(rows: np.ndarray, d_eta: float, order: int):
    """Successive eta-derivatives by centered differences, one-sided at the edges."""
    out = [rows]
    cur = rows
    for _ in range(order):
        cur = np.gradient(cur, d_eta, axis=-1, edge_order=2)
        out.append(cur)
    return out


def weighted_velocity_norm(h: DistributionSpectrum, m: int, s: float = 0.0) -> float:
    """sum_{j<=m} || d^j_eta (<k,eta>^s h_hat) ||, the <v>^m-weighted L^2 equivalent."""
    grid = h.grid
    vals = h.values
    if s != 0:
        kk = grid.ks[:, None].astype(float)
        vals = vals * (1.0 + kk * kk + grid.eta[None, :] ** 2) ** (0.5 * s)
    total = 0.0
    for d in _eta_derivatives(vals, grid.d_eta, m):
        total += math.sqrt(grid.d_eta * float(np.sum(np.abs(d) ** 2)))
    return total


def free_density_traces(h_in: DistributionSpectrum, times: np.ndarray) -> np.ndarray:
    """rho_hat(t, k) for every k on the grid, sampled from the stationary profile."""
    grid = h_in.grid
    out = np.zeros((grid.n_k, times.size), dtype=complex)
    for k in grid.ks:
        if k == 0:
            continue
        kt = k * times
        if np.any(np.abs(kt) > grid.eta_max * (1 + 1e-12)):
            raise GridDomainError(f"sampling line eta = {k} t leaves the grid")
        out[grid.row(k)] = TWO_PI * interp_rows(h_in.mode(k), grid.position(kt), grid.interp_order)
    return out


def velocity_averaging_check(h_in: DistributionSpectrum, m: int,
                             t_final: Optional[float] = None) -> tuple:
    """Return (lhs, rhs): ||rho||_{L^2_t Hdot^1/2_x} over [0, t_final] and ||<v>^m h_in||."""
    if m < 1:
        raise ValueError("m must be >= 1")
    grid = h_in.grid
    t_final = grid.t_final if t_final is None else t_final
    n = int(round(t_final / grid.dt))
    times = np.linspace(0.0, n * grid.dt, n + 1)
    rho = free_density_traces(h_in, times)
    # Parseval on the torus: ||rho||^2_{L^2_x} = (1/2pi) sum_k |rho_hat|^2
    weights = np.abs(grid.ks).astype(float)[:, None] / TWO_PI
    lhs = math.sqrt(float(np.trapezoid(np.sum(weights * np.abs(rho) ** 2, axis=0), times)))
    rhs = weighted_velocity_norm(h_in, m)
    return lhs, rhs
