"""Fourier-multiplier norms and bootstrap monitors.

All multipliers are diagonal symbols in (k, eta) built from the bracket
``<k, eta> = (1 + k^2 + eta^2)^(1/2)``.  Exponents are evaluated in log form
and capped at ``EXP_CAP`` with a saturation flag.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .linear import DensityTrace
from .spectral import DistributionSpectrum

EXP_CAP = 700.0

KINDS = ("sobolev", "gevrey", "big_A", "big_B", "density_weight")


def bracket(*xs):
    total = 1.0
    for x in xs:
        x = np.asarray(x, dtype=float)
        total = total + x * x
    return np.sqrt(total)


@dataclass(frozen=True)
class WeightPolicy:
    """Weight w(t, eta) <= 1 dividing the eta-part of the A multiplier.

    ``one`` is w = 1.  ``echo`` divides by ``amplification`` once for every
    critical time |eta|/k (k = 1..k_cap) already passed, so w drops across
    each window [|eta|/(k+1), |eta|/k].
    """

    kind: str = "one"
    amplification: float = 2.0
    k_cap: int = 8

    def __post_init__(self):
        if self.kind not in ("one", "echo"):
            raise ValueError(f"unknown weight policy {self.kind!r}")
        if self.amplification < 1 or self.k_cap < 1:
            raise ValueError("need amplification >= 1 and k_cap >= 1")

    def log_inverse(self, t: float, eta) -> np.ndarray:
        """log(1/w)."""
        eta = np.abs(np.asarray(eta, dtype=float))
        if self.kind == "one":
            return np.zeros(eta.shape)
        ks = np.arange(1, self.k_cap + 1).reshape((-1,) + (1,) * eta.ndim)
        passed = np.sum(eta[None, ...] / ks <= t, axis=0)
        return passed * math.log(self.amplification)

    @property
    def minimum(self) -> float:
        return 1.0 if self.kind == "one" else self.amplification ** (-self.k_cap)


def _as_map(x) -> Callable[[float], float]:
    if callable(x):
        return x
    val = float(x)
    return lambda t: val


@dataclass(frozen=True)
class MultiplierSpec:
    """One diagonal multiplier.

    Parameters used per kind: sobolev(s, m); gevrey(lam, s);
    big_A(beta, mu, K, r, w); big_B(gamma, nu, K); density_weight(sigma).
    ``mu`` and ``nu`` may be constants or callables of t.
    """

    kind: str
    s: float = 0.0
    m: int = 0
    lam: float = 0.0
    beta: float = 0.0
    gamma: float = 0.0
    mu: Union[float, Callable] = 0.0
    nu: Union[float, Callable] = 0.0
    K: float = 1.0
    r: float = 0.0
    w: WeightPolicy = field(default_factory=WeightPolicy)
    sigma: float = 0.0
    epsilon: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown multiplier kind {self.kind!r}")
        if self.kind == "sobolev" and self.m not in (0, 1, 2):
            raise ValueError("m must be 0, 1 or 2")
        if self.epsilon < 0 or self.K < 0:
            raise ValueError("epsilon and K must be nonnegative")

    @property
    def radius(self) -> float:
        """(K eps)^(1/3)."""
        return (self.K * self.epsilon) ** (1.0 / 3.0)

    def log_symbol(self, k, eta, t: float = 0.0) -> np.ndarray:
        k = np.asarray(k, dtype=float)
        eta = np.asarray(eta, dtype=float)
        br = bracket(k, eta)
        if self.kind == "sobolev":
            return self.s * np.log(br)
        if self.kind == "gevrey":
            return self.lam * br ** self.s
        if self.kind == "density_weight":
            return self.sigma * np.log(bracket(k, t * k)) + 0.0 * eta
        c = self.radius
        if self.kind == "big_B":
            return self.gamma * np.log(br) + _as_map(self.nu)(t) * c * np.cbrt(br)
        base = self.beta * np.log(br) + _as_map(self.mu)(t) * c * np.cbrt(br)
        g_eta = self.r * c * np.cbrt(bracket(eta)) + self.w.log_inverse(t, eta)
        g_k = self.r * c * np.cbrt(bracket(k))
        return base + np.logaddexp(g_eta, g_k)

    def symbol(self, k, eta, t: float = 0.0) -> Tuple[np.ndarray, bool]:
        """Symbol values and whether any exponent hit the cap."""
        lg = self.log_symbol(k, eta, t)
        saturated = bool(np.any(lg > EXP_CAP))
        return np.exp(np.minimum(lg, EXP_CAP)), saturated

    def key(self) -> str:
        return repr((self.kind, self.s, self.m, self.lam, self.beta, self.gamma,
                     self.mu if not callable(self.mu) else id(self.mu),
                     self.nu if not callable(self.nu) else id(self.nu),
                     self.K, self.r, self.w, self.sigma, self.epsilon))


def apply_multiplier(spec: Union[MultiplierSpec, Sequence[MultiplierSpec]], f: DistributionSpectrum,
                     t: Optional[float] = None, return_flag: bool = False):
    """Multiply f pointwise by the symbol (or the product of several symbols).

    A sequence of specs is applied as one composite symbol whose factors are
    multiplied in a canonical order, so the result does not depend on the
    order they are given in.
    """
    t = f.time if t is None else t
    specs = [spec] if isinstance(spec, MultiplierSpec) else sorted(spec, key=MultiplierSpec.key)
    grid = f.grid
    kk = grid.ks[:, None].astype(float)
    ee = grid.eta[None, :]
    total = None
    saturated = False
    for sp in specs:
        sym, sat = sp.symbol(kk, ee, t)
        saturated |= sat
        total = sym if total is None else total * sym
    out = f.replace(values=f.values * total) if total is not None else f
    return (out, saturated) if return_flag else out


def parse_multiplier(text: str) -> MultiplierSpec:
    """Parse ``"kind:key=value,..."``, e.g. ``"gevrey:lambda=0.3,s=0.333"``.

    Weight policies use ``w=one`` or ``w=echo`` with ``a=`` and ``kcap=``.
    """
    kind, _, rest = text.strip().partition(":")
    kind = kind.strip()
    if kind not in KINDS:
        raise ValueError(f"unknown multiplier kind {kind!r}")
    alias = {"lambda": "lam", "lam": "lam", "s": "s", "m": "m", "beta": "beta", "gamma": "gamma",
             "mu": "mu", "nu": "nu", "K": "K", "r": "r", "sigma": "sigma", "epsilon": "epsilon",
             "eps": "epsilon"}
    kwargs: Dict[str, object] = {}
    w_kind, w_a, w_cap = "one", 2.0, 8
    for item in filter(None, (p.strip() for p in rest.split(","))):
        key, eq, val = item.partition("=")
        key, val = key.strip(), val.strip()
        if not eq:
            raise ValueError(f"expected key=value, got {item!r}")
        if key == "w":
            w_kind = val
        elif key == "a":
            w_a = float(val)
        elif key == "kcap":
            w_cap = int(val)
        elif key in alias:
            kwargs[alias[key]] = int(val) if key == "m" else float(val)
        else:
            raise ValueError(f"unknown multiplier parameter {key!r}")
    return MultiplierSpec(kind, w=WeightPolicy(w_kind, w_a, w_cap), **kwargs)


# ---------------------------------------------------------------------------
# norms


def l2_quadrature(f: DistributionSpectrum) -> float:
    """Rectangle-rule L^2 norm over the (k, eta) grid."""
    mag = np.abs(f.values)
    with np.errstate(over="ignore"):
        total = float(np.sum(mag ** 2))
    if math.isfinite(total):
        return math.sqrt(f.grid.d_eta * total)
    # saturated symbols: rescale before squaring
    top = float(np.max(mag))
    return top * math.sqrt(f.grid.d_eta * float(np.sum((mag / top) ** 2)))


def norm_hsm(f: DistributionSpectrum, s: float, m: int) -> float:
    """||<v>^m <nabla>^s f|| as sum_{j<=m} ||d_eta^j (<k,eta>^s f_hat)||.

    eta-derivatives are centered differences (second order, one-sided at the
    edges).
    """
    if m not in (0, 1, 2):
        raise ValueError("m must be 0, 1 or 2")
    g = f if s == 0 else apply_multiplier(MultiplierSpec("sobolev", s=s), f)
    total = l2_quadrature(g)
    cur = g.values
    for _ in range(m):
        cur = np.gradient(cur, f.grid.d_eta, axis=-1, edge_order=2)
        total += math.sqrt(f.grid.d_eta * float(np.sum(np.abs(cur) ** 2)))
    return total


def density_weighted_norm(trace: DensityTrace, sigma: float) -> float:
    """L^2_t norm of <k, t k>^sigma rho_hat(t, k), trapezoid in t."""
    if trace.times.size < 2:
        return 0.0
    wts = bracket(trace.k, trace.times * trace.k) ** sigma
    return math.sqrt(float(np.trapezoid(np.abs(wts * trace.values) ** 2, trace.times)))


# ---------------------------------------------------------------------------
# bootstrap monitors

MONITORS = ("high", "density_A", "mid", "density_B", "low")


@dataclass
class BootstrapReport:
    times: np.ndarray
    raw: Dict[str, np.ndarray]
    normalized: Dict[str, np.ndarray]
    saturated: bool

    def rows(self) -> List[dict]:
        out = []
        for i, t in enumerate(self.times):
            rec = {"t": float(t)}
            for name in MONITORS:
                rec[name] = float(self.raw[name][i])
                rec[name + "_normalized"] = float(self.normalized[name][i])
            out.append(rec)
        return out


def _weighted_density_l2(traces: Sequence[DensityTrace], spec: MultiplierSpec,
                         times: np.ndarray) -> Tuple[np.ndarray, bool]:
    """sqrt(int_{t0}^t sum_k |M(tau, k, k tau) rho(tau, k)|^2 dtau) at each of ``times``."""
    if not traces:
        return np.zeros(times.size), False
    tt = traces[0].times
    dens = np.zeros(tt.size)
    saturated = False
    for tr in traces:
        vals = np.empty(tt.size)
        for i, t in enumerate(tt):
            sym, sat = spec.symbol(tr.k, tr.k * t, t)
            saturated |= sat
            vals[i] = float(sym)
        dens += np.abs(vals * tr.values) ** 2
    if tt.size < 2:
        cum = np.zeros(tt.size)
    else:
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(tt))])
    return np.sqrt(np.interp(times, tt, cum)), saturated


def bootstrap_monitor(snapshots: Sequence[DistributionSpectrum], traces: Sequence[DensityTrace],
                      A: MultiplierSpec, B: MultiplierSpec, epsilon: float,
                      sigma: float = 1.0) -> BootstrapReport:
    """The five bootstrap quantities at the snapshot times, raw and over their bound shapes.

    high = ||<v> <nabla>^3 A g||, mid = ||<v> A g||, low = ||<v> B g||, plus
    the A- and B-weighted density L^2_t integrals.  Bound shapes are
    eps^2 <t>^(5/2), eps^2, eps^2, eps^(sigma/5) and eps^(sigma/5).
    """
    times = np.array([s.time for s in snapshots], dtype=float)
    raw = {name: np.zeros(times.size) for name in MONITORS}
    saturated = False
    for i, snap in enumerate(snapshots):
        ag, sat_a = apply_multiplier(A, snap, snap.time, return_flag=True)
        bg, sat_b = apply_multiplier(B, snap, snap.time, return_flag=True)
        saturated |= sat_a or sat_b
        raw["high"][i] = norm_hsm(ag, 3.0, 1)
        raw["mid"][i] = norm_hsm(ag, 0.0, 1)
        raw["low"][i] = norm_hsm(bg, 0.0, 1)
    pos = [tr for tr in traces if tr.k > 0]
    raw["density_A"], sat_a = _weighted_density_l2(pos, A, times)
    raw["density_B"], sat_b = _weighted_density_l2(pos, B, times)
    saturated |= sat_a or sat_b
    eps = float(epsilon)
    shapes = {
        "high": eps ** 2 * bracket(times) ** 2.5,
        "density_A": np.full(times.size, eps ** 2),
        "mid": np.full(times.size, eps ** 2),
        "density_B": np.full(times.size, eps ** (sigma / 5.0)),
        "low": np.full(times.size, eps ** (sigma / 5.0)),
    }
    with np.errstate(divide="ignore", invalid="ignore"):
        normalized = {name: np.where(shapes[name] > 0, raw[name] / shapes[name], np.inf * raw[name])
                      for name in MONITORS}
    for name in MONITORS:
        normalized[name] = np.nan_to_num(normalized[name], nan=0.0)
    return BootstrapReport(times, raw, normalized, saturated)


def product_estimate_ratio(A: MultiplierSpec, B: MultiplierSpec, xi1, xi2, t: float = 0.0):
    """A(xi1 + xi2) / [A(xi1) B'(xi2) + A(xi2) B'(xi1)] with B' = <.>^-1 B, computed in logs."""
    k1, e1 = np.asarray(xi1[0], float), np.asarray(xi1[1], float)
    k2, e2 = np.asarray(xi2[0], float), np.asarray(xi2[1], float)
    la = A.log_symbol(k1 + k2, e1 + e2, t)
    la1, la2 = A.log_symbol(k1, e1, t), A.log_symbol(k2, e2, t)
    lb1 = B.log_symbol(k1, e1, t) - np.log(bracket(k1, e1))
    lb2 = B.log_symbol(k2, e2, t) - np.log(bracket(k2, e2))
    return np.exp(la - np.logaddexp(la1 + lb2, la2 + lb1))


def product_estimate_constant(A: MultiplierSpec) -> float:
    """C = 2^beta / w_min.

    Valid when ``gamma >= 1`` and ``nu >= (2^(1/3) - 1) mu + r``, by
    subadditivity of ``<.>^(1/3)`` applied to the larger of the two frequencies.
    """
    return 2.0 ** A.beta / A.w.minimum


def default_bootstrap_multipliers(epsilon: float) -> Tuple[MultiplierSpec, MultiplierSpec]:
    """A and B used by the runner's monitors.

    mu > nu keeps A >= B pointwise; nu >= (2^(1/3) - 1) mu + r keeps the
    product estimate with constant ``product_estimate_constant(A)``.
    """
    A = MultiplierSpec("big_A", beta=1.0, mu=2.0, K=1.0, r=0.5,
                       w=WeightPolicy("echo", 2.0, 8), epsilon=epsilon)
    B = MultiplierSpec("big_B", gamma=1.0, nu=1.25, K=1.0, epsilon=epsilon)
    return A, B
