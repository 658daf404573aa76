"""Grids, spectra, equilibria and interaction potentials on T x R.

Fourier conventions (one spatial dimension):

* ``g_hat(k, eta) = (1/2pi) * int int exp(-i k z - i v eta) g(z, v) dz dv``
  with ``k`` an integer and ``eta`` real.  The transform is unitary:
  ``int int |g|^2 = sum_k int |g_hat(k, .)|^2 deta``.
* Velocity-only functions use ``f_hat(eta) = (1/2pi) int exp(-i v eta) f(v) dv``.
* Densities are ``rho_hat(k) = int exp(-i k x) rho(x) dx`` so that, for the
  profile ``g(t, z, v) = h(t, z + t v, v)``, ``rho_hat(t, k) = 2pi g_hat(t, k, k t)``.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

TWO_PI = 2.0 * math.pi

SNAPSHOT_MAGIC = b"VEL1"
_HEADER = struct.Struct("<4sIIdd")


class GridDomainError(ValueError):
    """A grid is malformed or a requested frequency lies outside it."""


class AliasingWarning(RuntimeWarning):
    """A shifted read needed values beyond the eta grid (zero-extended)."""


@dataclass(frozen=True)
class SpectralGrid:
    """Truncated (k, eta) grid plus the time stepping shared by all solvers."""

    k_max: int
    eta_max: float
    n_eta: int
    dt: float
    t_final: float
    interp_order: int = 3

    def __post_init__(self):
        if int(self.k_max) != self.k_max or self.k_max < 1:
            raise GridDomainError(f"k_max must be a positive integer, got {self.k_max}")
        if int(self.n_eta) != self.n_eta or self.n_eta < 3:
            raise GridDomainError(f"n_eta must be an integer >= 3, got {self.n_eta}")
        for name in ("eta_max", "dt", "t_final"):
            if not getattr(self, name) > 0:
                raise GridDomainError(f"{name} must be positive, got {getattr(self, name)}")
        if self.eta_max < self.k_max * self.t_final:
            raise GridDomainError(
                f"eta_max < k_max·t_final ({self.eta_max} < {self.k_max * self.t_final}): "
                "the sampling line eta = k t leaves the grid"
            )
        if self.interp_order not in (1, 3):
            raise GridDomainError("interp_order must be 1 (linear) or 3 (cubic)")

    @property
    def d_eta(self) -> float:
        return 2.0 * self.eta_max / (self.n_eta - 1)

    @property
    def eta(self) -> np.ndarray:
        # built from the center so eta = 0 is exact and the grid is mirror-symmetric
        return self.d_eta * (np.arange(self.n_eta) - 0.5 * (self.n_eta - 1))

    @property
    def ks(self) -> np.ndarray:
        return np.arange(-self.k_max, self.k_max + 1)

    @property
    def n_k(self) -> int:
        return 2 * self.k_max + 1

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def row(self, k: int) -> int:
        if abs(k) > self.k_max:
            raise GridDomainError(f"mode k={k} outside |k| <= {self.k_max}")
        return int(k) + self.k_max

    def position(self, eta):
        """Fractional node index of ``eta`` (node i sits at position i)."""
        return (np.asarray(eta, dtype=float) + 0.5 * (self.n_eta - 1) * self.d_eta) / self.d_eta


def make_grid(k_max: int, eta_max: float, n_eta: int, dt: float, t_final: float,
              interp_order: int = 3) -> SpectralGrid:
    return SpectralGrid(k_max, float(eta_max), n_eta, float(dt), float(t_final), interp_order)


@dataclass(frozen=True)
class DistributionSpectrum:
    """Complex profile values ``g_hat(k, eta)``, rows ordered k = -k_max..k_max."""

    grid: SpectralGrid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        vals = np.array(self.values, dtype=complex)
        if vals.shape != (self.grid.n_k, self.grid.n_eta):
            raise GridDomainError(
                f"values shape {vals.shape} != {(self.grid.n_k, self.grid.n_eta)}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, grid: SpectralGrid, time: float = 0.0) -> "DistributionSpectrum":
        return cls(grid, np.zeros((grid.n_k, grid.n_eta), dtype=complex), time)

    @classmethod
    def from_function(cls, grid: SpectralGrid, fn: Callable, time: float = 0.0):
        """Tabulate ``fn(k, eta_array)`` on every row."""
        vals = np.zeros((grid.n_k, grid.n_eta), dtype=complex)
        eta = grid.eta
        for k in grid.ks:
            vals[grid.row(k)] = fn(int(k), eta)
        return cls(grid, vals, time)

    def mode(self, k: int) -> np.ndarray:
        return self.values[self.grid.row(k)]

    def replace(self, values=None, time=None) -> "DistributionSpectrum":
        return DistributionSpectrum(
            self.grid,
            self.values if values is None else values,
            self.time if time is None else time,
        )

    def hermitian_defect(self) -> float:
        return hermitian_defect(self.values)


def hermitian_defect(values: np.ndarray) -> float:
    """max |g(-k,-eta) - conj g(k,eta)|; zero for real-valued g."""
    mirrored = np.conj(values[::-1, ::-1])
    return float(np.max(np.abs(values - mirrored))) if values.size else 0.0


def enforce_hermitian(values: np.ndarray) -> np.ndarray:
    return 0.5 * (values + np.conj(values[::-1, ::-1]))


# ---------------------------------------------------------------------------
# equilibria and potentials


@dataclass(frozen=True)
class BackgroundProfile:
    """Homogeneous equilibrium f0(v).

    ``lorentzian(delta)`` is ``4 pi delta / (1 + v^2)``; ``maxwellian(theta)`` is
    the unit-mass Gaussian of temperature theta.
    """

    kind: str
    param: float

    def __post_init__(self):
        if self.kind not in ("lorentzian", "maxwellian"):
            raise ValueError(f"unknown background kind {self.kind!r}")
        if not self.param > 0:
            raise ValueError(f"background parameter must be positive, got {self.param}")

    @classmethod
    def lorentzian(cls, delta: float) -> "BackgroundProfile":
        return cls("lorentzian", float(delta))

    @classmethod
    def maxwellian(cls, theta: float) -> "BackgroundProfile":
        return cls("maxwellian", float(theta))

    def symbol(self, eta):
        return background_symbol(self, eta)

    @property
    def density(self) -> float:
        """rho0 = int f0 dv = 2 pi f0_hat(0)."""
        return TWO_PI * float(background_symbol(self, 0.0))

    @property
    def second_moment(self) -> float:
        if self.kind == "lorentzian":
            return math.inf
        return self.param


def background_symbol(bg: BackgroundProfile, eta):
    """``f0_hat(eta) = (1/2pi) int exp(-i v eta) f0(v) dv`` (real and even)."""
    eta = np.abs(np.asarray(eta, dtype=float))
    if bg.kind == "lorentzian":
        out = TWO_PI * bg.param * np.exp(-eta)
    else:
        out = np.exp(-0.5 * bg.param * eta * eta) / TWO_PI
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PotentialLaw:
    kind: str
    c_w: float = 1.0
    alpha: float = 1.0
    sign: int = 1
    gamma0: float = 2.0

    def __post_init__(self):
        if self.kind not in ("coulomb", "shielded", "power", "shifted_power"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind in ("power", "shifted_power"):
            if self.sign not in (1, -1):
                raise ValueError("sign must be +1 or -1")
            if self.gamma0 < 2:
                raise ValueError("gamma0 must be >= 2")
        if self.kind == "shielded" and not self.alpha > 0:
            raise ValueError("alpha must be positive")

    @classmethod
    def coulomb(cls, c_w: float = 1.0):
        return cls("coulomb", c_w=float(c_w))

    @classmethod
    def shielded(cls, c_w: float = 1.0, alpha: float = 1.0):
        return cls("shielded", c_w=float(c_w), alpha=float(alpha))

    @classmethod
    def power(cls, sign: int = -1, gamma0: float = 2.0):
        return cls("power", sign=int(sign), gamma0=float(gamma0))

    @classmethod
    def shifted_power(cls, sign: int = -1, gamma0: float = 2.0):
        return cls("shifted_power", sign=int(sign), gamma0=float(gamma0))

    @property
    def singular(self) -> bool:
        return self.kind in ("coulomb", "power")

    def symbol(self, k):
        return potential_symbol(self, k)

    def describe(self) -> str:
        if self.kind == "coulomb":
            return f"coulomb:{self.c_w!r}"
        if self.kind == "shielded":
            return f"shielded:{self.c_w!r},{self.alpha!r}"
        return f"{self.kind}:{self.sign:+d},{self.gamma0!r}"


def potential_symbol(w: PotentialLaw, k):
    """Fourier symbol ``W_hat(k)``; singular kinds reject k = 0."""
    k_arr = np.abs(np.asarray(k, dtype=float))
    if w.singular and np.any(k_arr == 0):
        raise GridDomainError(f"{w.kind} potential is singular at k = 0")
    if w.kind == "coulomb":
        out = w.c_w / (k_arr * k_arr)
    elif w.kind == "shielded":
        out = w.c_w / (w.alpha + k_arr * k_arr)
    elif w.kind == "power":
        out = w.sign * k_arr ** (-w.gamma0)
    else:
        out = w.sign * (1.0 + k_arr) ** (-w.gamma0)
    return float(out) if out.ndim == 0 else out


def parse_background(text: str) -> BackgroundProfile:
    """``"lorentzian:0.01"`` or ``"maxwellian:1.0"``."""
    kind, _, val = text.partition(":")
    if not val:
        raise ValueError(f"background needs a parameter, e.g. lorentzian:0.01 (got {text!r})")
    return BackgroundProfile(kind.strip(), float(val))


def parse_potential(text: str) -> PotentialLaw:
    """``coulomb[:C]``, ``shielded:C,alpha``, ``power:sign,gamma0``, ``shifted_power:sign,gamma0``."""
    kind, _, rest = text.partition(":")
    kind = kind.strip()
    args = [a for a in rest.split(",") if a.strip()] if rest else []
    if kind == "coulomb":
        return PotentialLaw.coulomb(*(float(a) for a in args))
    if kind == "shielded":
        return PotentialLaw.shielded(*(float(a) for a in args))
    if kind in ("power", "shifted_power"):
        sign = int(float(args[0])) if args else -1
        gamma0 = float(args[1]) if len(args) > 1 else 2.0
        return PotentialLaw(kind, sign=sign, gamma0=gamma0)
    raise ValueError(f"unknown potential {text!r}")


# ---------------------------------------------------------------------------
# interpolation along eta


def _cubic_weights(u):
    """Lagrange weights for nodes -1, 0, 1, 2 at fractional offset u in [0, 1)."""
    return (
        -u * (u - 1.0) * (u - 2.0) / 6.0,
        (u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0,
        -(u + 1.0) * u * (u - 2.0) / 2.0,
        (u + 1.0) * u * (u - 1.0) / 6.0,
    )


def interp_rows(rows: np.ndarray, pos, order: int = 3) -> np.ndarray:
    """Evaluate rows at fractional node positions.

    ``rows`` is 1-D (any shape of ``pos``) or 2-D with one position per row.
    Positions exactly on a node return the node value; stencil points off
    the grid read as zero.
    """
    rows = np.asarray(rows)
    pos = np.asarray(pos, dtype=float)
    n = rows.shape[-1]
    base = np.floor(pos)
    u = pos - base
    base = base.astype(np.int64)
    pad = np.zeros(rows.shape[:-1] + (3,), rows.dtype)
    padded = np.concatenate([pad, rows, pad], axis=-1)
    if rows.ndim == 1:
        def take(off):
            return padded[np.clip(base + off + 3, 0, n + 5)]
    else:
        ridx = np.arange(rows.shape[0])

        def take(off):
            return padded[ridx, np.clip(base + off + 3, 0, n + 5)]
    if order == 1:
        return (1.0 - u) * take(0) + u * take(1)
    w = _cubic_weights(u)
    return w[0] * take(-1) + w[1] * take(0) + w[2] * take(1) + w[3] * take(2)


def shift_rows(rows: np.ndarray, shift: float, d_eta: float, order: int = 3):
    """Rows read at ``eta - shift`` for every grid eta (uniform shift).

    Returns ``(values, clipped)``; ``clipped`` is True when non-negligible data
    would have been read from beyond the grid edge.
    """
    s = shift / d_eta
    m = math.floor(s)
    u = s - m
    if u == 0.0:
        terms = [(0, 1.0)]
    elif order == 1:
        # eta - shift sits between nodes i - m - 1 and i - m, at offset 1 - u
        terms = [(1, u), (0, 1.0 - u)]
    else:
        # node base i - m - 1 with offset 1 - u
        w = _cubic_weights(1.0 - u)
        terms = [(2, w[0]), (1, w[1]), (0, w[2]), (-1, w[3])]
    out = np.zeros_like(rows)
    n = rows.shape[-1]
    for off, wt in terms:
        # out[i] += wt * rows[i - m - off]
        d = m + off
        if d >= n or -d >= n:
            continue
        if d >= 0:
            out[..., d:] += wt * rows[..., : n - d]
        else:
            out[..., : n + d] += wt * rows[..., -d:]
    reach = 0 if u == 0.0 else (1 if order == 1 else 2)
    return out, _lost(rows, m, reach)


def _int_shift(rows, m):
    """out[..., i] = rows[..., i - m], zero outside."""
    out = np.zeros_like(rows)
    n = rows.shape[-1]
    if m >= n or -m >= n:
        return out
    if m >= 0:
        out[..., m:] = rows[..., : n - m]
    else:
        out[..., : n + m] = rows[..., -m:]
    return out


def _lost(rows, m, reach):
    # coarse check: data within `reach` nodes of the edge that a shift by m discards
    n = rows.shape[-1]
    if m > 0:
        tail = rows[..., max(n - m - reach, 0):]
    elif m < 0:
        tail = rows[..., : min(-m + reach, n)]
    else:
        return False
    if tail.size == 0:
        return False
    scale = float(np.max(np.abs(rows)))
    return bool(scale > 0 and np.max(np.abs(tail)) > 1e-12 * scale)


def sample_density(f: DistributionSpectrum, t: float, k: int) -> complex:
    """rho_hat(t, k) = 2 pi g_hat(k, k t) read off the spectrum by interpolation."""
    grid = f.grid
    eta = k * t
    if abs(eta) > grid.eta_max * (1 + 1e-12):
        raise GridDomainError(f"k t = {eta} outside |eta| <= eta_max = {grid.eta_max}")
    row = f.mode(k)
    return complex(TWO_PI * interp_rows(row, grid.position(eta), grid.interp_order))


# ---------------------------------------------------------------------------
# snapshot file format


def write_snapshot(path, f: DistributionSpectrum) -> None:
    grid = f.grid
    header = _HEADER.pack(SNAPSHOT_MAGIC, grid.k_max, grid.n_eta, grid.eta_max, f.time)
    body = np.ascontiguousarray(f.values, dtype="<c16").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body)


def read_snapshot(path, dt: float = 1.0, t_final: Optional[float] = None) -> DistributionSpectrum:
    """Load a snapshot; dt/t_final are not stored and default to values consistent with the grid."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError("snapshot truncated")
    magic, k_max, n_eta, eta_max, time = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ValueError(f"bad snapshot magic {magic!r}")
    count = (2 * k_max + 1) * n_eta
    body = np.frombuffer(raw, dtype="<c16", count=count, offset=_HEADER.size)
    if t_final is None:
        t_final = eta_max / k_max
    grid = SpectralGrid(k_max, eta_max, n_eta, dt, t_final)
    return DistributionSpectrum(grid, body.reshape(2 * k_max + 1, n_eta).astype(complex), time)


def warn_aliasing(where: str) -> None:
    warnings.warn(f"{where}: shifted read extends beyond the eta grid (zero-extended)",
                  AliasingWarning, stacklevel=3)
