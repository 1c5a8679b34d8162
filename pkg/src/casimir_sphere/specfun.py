"""Spherical Bessel functions j_l, their derivatives, and the two zero
families that define the cavity spectra.

Evaluation strategy: ascending series for small argument (x < 0.5), explicit
trigonometric forms for l <= 2, upward recurrence when x >= l, and downward
(Miller) recurrence in the remaining band where upward recursion is unstable.
Roots come from interlacing brackets refined by a safeguarded Newton iteration
seeded with McMahon-style guesses.
"""

from __future__ import annotations

import math
import os
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import BracketingError, DomainError, InvariantError

ELL_MAX_DEFAULT = 32
K_MAX_DEFAULT = 64
ZERO_PRECISION = 1e-12

_SERIES_CUTOFF = 0.5
_MILLER_EXTRA = 40  # start order offset for downward recurrence


# ----------------------------------------------------------------------
# function evaluation
# ----------------------------------------------------------------------

def _series_jl(ell: int, x: np.ndarray) -> np.ndarray:
    """Ascending series; accurate (no cancellation) for x < ~1."""
    dfact = 1.0
    for i in range(1, 2 * ell + 2, 2):
        dfact *= i
    term = np.where(x > 0, x, 1.0) ** ell / dfact if ell else np.ones_like(x) / dfact
    if ell:
        term = np.where(x > 0, term, 0.0)
        term = np.where(x == 0, 0.0, term)
    out = term.copy()
    mx2 = -0.5 * x * x
    for k in range(1, 18):
        term = term * mx2 / (k * (2 * ell + 2 * k + 1))
        out += term
    if ell == 0:
        out = np.where(x == 0, 1.0, out)
    return out


def _j0(x):
    return np.where(x == 0, 1.0, np.sin(x) / np.where(x == 0, 1.0, x))


def _j1(x):
    xs = np.where(x == 0, 1.0, x)
    return np.where(x == 0, 0.0, np.sin(xs) / xs**2 - np.cos(xs) / xs)


def _j2(x):
    xs = np.where(x == 0, 1.0, x)
    return np.where(
        x == 0, 0.0, (3.0 / xs**3 - 1.0 / xs) * np.sin(xs) - 3.0 * np.cos(xs) / xs**2
    )


def _upward(ell: int, x: np.ndarray) -> np.ndarray:
    # stable for x >= ell
    jm, jc = _j0(x), _j1(x)
    if ell == 0:
        return jm
    for m in range(1, ell):
        jm, jc = jc, (2 * m + 1) / x * jc - jm
    return jc


def _miller(ell: int, x: np.ndarray) -> np.ndarray:
    # downward recurrence, normalized against j0 (or j1 near zeros of j0)
    start = ell + _MILLER_EXTRA
    fp = np.zeros_like(x)
    fc = np.full_like(x, 1e-280)
    f_ell = np.zeros_like(x)
    f1 = np.zeros_like(x)
    for m in range(start, 0, -1):
        fp, fc = fc, (2 * m + 1) / x * fc - fp
        if m - 1 == ell:
            f_ell = fc.copy()
        if m - 1 == 1:
            f1 = fc.copy()
    f0 = fc
    j0v, j1v = _j0(x), _j1(x)
    use0 = np.abs(f0) * np.abs(j1v) >= np.abs(f1) * np.abs(j0v)
    denom = np.where(use0, f0, f1)
    ref = np.where(use0, j0v, j1v)
    return f_ell * ref / denom


def sph_bessel_j(ell: int, x, *, ell_max: int = ELL_MAX_DEFAULT):
    """Spherical Bessel function j_l(x) for real x >= 0 (scalar or array)."""
    if ell < 0 or ell > ell_max:
        raise DomainError(f"order ell={ell} outside supported range 0..{ell_max}")
    xarr = np.asarray(x, dtype=float)
    scalar = xarr.ndim == 0
    xv = np.atleast_1d(xarr)
    if np.any(xv < 0) or not np.all(np.isfinite(xv)):
        raise DomainError("argument must be finite and non-negative")
    out = np.empty_like(xv)

    small = xv < _SERIES_CUTOFF
    if small.any():
        out[small] = _series_jl(ell, xv[small])
    big = ~small
    if big.any():
        xb = xv[big]
        if ell == 0:
            out[big] = _j0(xb)
        elif ell == 1:
            out[big] = _j1(xb)
        elif ell == 2:
            out[big] = _j2(xb)
        else:
            res = np.empty_like(xb)
            up = xb >= ell
            if up.any():
                res[up] = _upward(ell, xb[up])
            dn = ~up
            if dn.any():
                res[dn] = _miller(ell, xb[dn])
            out[big] = res
    return float(out[0]) if scalar else out.reshape(xarr.shape)


def sph_bessel_j_deriv(ell: int, x, *, ell_max: int = ELL_MAX_DEFAULT):
    """d/dx j_l(x) via the recurrence j_l' = j_{l-1} - (l+1)/x * j_l."""
    if ell < 0 or ell > ell_max:
        raise DomainError(f"order ell={ell} outside supported range 0..{ell_max}")
    xarr = np.asarray(x, dtype=float)
    scalar = xarr.ndim == 0
    xv = np.atleast_1d(xarr).astype(float)
    out = np.empty_like(xv)
    zero = xv == 0
    if zero.any():
        out[zero] = 1.0 / 3.0 if ell == 1 else 0.0
    pos = ~zero
    if pos.any():
        xp = xv[pos]
        if ell == 0:
            out[pos] = -sph_bessel_j(1, xp)
        else:
            out[pos] = sph_bessel_j(ell - 1, xp) - (ell + 1) / xp * sph_bessel_j(ell, xp)
    return float(out[0]) if scalar else out.reshape(xarr.shape)


def riccati_deriv(ell: int, x):
    """d/dx [x j_l(x)] = x j_{l-1}(x) - l j_l(x); equals cos x at l=0."""
    xarr = np.asarray(x, dtype=float)
    if ell == 0:
        r = np.cos(xarr)
        return float(r) if xarr.ndim == 0 else r
    return xarr * sph_bessel_j(ell - 1, xarr) - ell * sph_bessel_j(ell, xarr)


# ----------------------------------------------------------------------
# zero tables
# ----------------------------------------------------------------------

def _newton_bracketed(f, fprime, lo: float, hi: float, seed: float) -> float:
    """Safeguarded Newton: steps leaving [lo, hi] fall back to bisection."""
    flo = f(lo)
    fhi = f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0:
        raise BracketingError(f"no sign change on [{lo!r}, {hi!r}]")
    x = min(max(seed, lo), hi)
    for _ in range(100):
        fx = f(x)
        if fx == 0.0:
            break
        if flo * fx < 0:
            hi = x
        else:
            lo, flo = x, fx
        dfx = fprime(x)
        step_ok = dfx != 0.0
        if step_ok:
            xn = x - fx / dfx
            step_ok = lo < xn < hi
        if not step_ok:
            xn = 0.5 * (lo + hi)
        if abs(xn - x) <= 1e-15 * max(1.0, abs(x)):
            x = xn
            break
        x = xn
    else:
        raise BracketingError(f"Newton failed to converge on [{lo!r}, {hi!r}]")
    return x


@dataclass
class BesselZeroTable:
    """Zeros of j_l (Dirichlet family) and of d/dx[x j_l] (Neumann family).

    Rows are computed lazily using interlacing brackets; reads of completed
    rows are lock-free, extension happens behind a lock.
    """

    ell_max: int = ELL_MAX_DEFAULT
    k_max: int = K_MAX_DEFAULT
    precision: float = ZERO_PRECISION
    _dirichlet: dict = field(default_factory=dict, repr=False)
    _neumann: dict = field(default_factory=dict, repr=False)
    # reentrant: the Neumann builder takes the lock and then brackets with
    # Dirichlet rows through the locked ensure path
    _lock: threading.RLock = field(default_factory=threading.RLock, repr=False)

    # -- row construction -------------------------------------------------
    def _dirichlet_row(self, ell: int, count: int) -> np.ndarray:
        if ell == 0:
            return np.arange(1, count + 1) * math.pi
        prev = self._ensure_dirichlet(ell - 1, count + 1)
        row = np.empty(count)
        for k in range(1, count + 1):
            lo, hi = prev[k - 1], prev[k]
            seed = (k + 0.5 * ell) * math.pi  # McMahon-style first guess
            row[k - 1] = _newton_bracketed(
                lambda t: sph_bessel_j(ell, t),
                lambda t: sph_bessel_j_deriv(ell, t),
                lo, hi, seed,
            )
        return row

    def _neumann_row(self, ell: int, count: int) -> np.ndarray:
        if ell == 0:
            return (2 * np.arange(1, count + 1) - 1) * (math.pi / 2)
        diri = self._ensure_dirichlet(ell, count)
        f = lambda t: riccati_deriv(ell, t)
        # d/dx[x j_l]' = (l(l+1)/x - x) j_l(x)
        fp = lambda t: (ell * (ell + 1) / t - t) * sph_bessel_j(ell, t)
        row = np.empty(count)
        lo = math.sqrt(ell * (ell + 1))  # first extremum sits above the centrifugal point
        row[0] = _newton_bracketed(f, fp, lo + 1e-9, diri[0], 0.5 * (lo + diri[0]))
        for k in range(2, count + 1):
            row[k - 1] = _newton_bracketed(
                f, fp, diri[k - 2] + 1e-12, diri[k - 1], 0.5 * (diri[k - 2] + diri[k - 1])
            )
        return row

    def _ensure_dirichlet(self, ell: int, count: int) -> np.ndarray:
        have = self._dirichlet.get(ell)
        if have is not None and len(have) >= count:
            return have
        with self._lock:
            have = self._dirichlet.get(ell)
            if have is None or len(have) < count:
                self._dirichlet[ell] = self._dirichlet_row(ell, count)
            return self._dirichlet[ell]

    def _ensure_neumann(self, ell: int, count: int) -> np.ndarray:
        have = self._neumann.get(ell)
        if have is not None and len(have) >= count:
            return have
        with self._lock:
            have = self._neumann.get(ell)
            if have is None or len(have) < count:
                self._neumann[ell] = self._neumann_row(ell, count)
            return self._neumann[ell]

    # -- public access -----------------------------------------------------
    def _check(self, ell: int, k: int):
        if ell < 0 or ell > self.ell_max:
            raise DomainError(f"ell={ell} outside table range 0..{self.ell_max}")
        if k < 1 or k > self.k_max:
            raise DomainError(f"k={k} outside table range 1..{self.k_max}")

    def dirichlet(self, ell: int, k: int) -> float:
        self._check(ell, k)
        row = self._ensure_dirichlet(ell, k)
        x = float(row[k - 1])
        if abs(sph_bessel_j(ell, x)) > self.precision:
            raise InvariantError(f"zero residual above precision at (dirichlet, {ell}, {k})")
        return x

    def neumann(self, ell: int, k: int) -> float:
        self._check(ell, k)
        row = self._ensure_neumann(ell, k)
        x = float(row[k - 1])
        if abs(riccati_deriv(ell, x)) > self.precision:
            raise InvariantError(f"zero residual above precision at (neumann, {ell}, {k})")
        if ell >= 1 and x * x <= ell * (ell + 1):
            raise InvariantError(f"neumann zero {x} violates x^2 > l(l+1) at ell={ell}")
        return x

    def zeros(self, bc: str, ell: int, count: int) -> np.ndarray:
        self._check(ell, count)
        if bc == "dirichlet":
            return self._ensure_dirichlet(ell, count)[:count].copy()
        if bc == "neumann":
            arr = self._ensure_neumann(ell, count)[:count].copy()
            if ell >= 1 and np.any(arr**2 <= ell * (ell + 1)):
                raise InvariantError(f"neumann zeros violate x^2 > l(l+1) at ell={ell}")
            return arr
        raise DomainError(f"unknown boundary condition {bc!r}")

    def warm_up(self, ell_max: int, k_max: int):
        """Precompute both families; afterwards reads are contention-free."""
        for ell in range(ell_max + 1):
            self._ensure_dirichlet(ell, k_max)
            self._ensure_neumann(ell, k_max)

    # -- on-disk cache: one line per root, `bc ell k value precision` -------
    def save(self, path: str):
        lines = []
        for name, rows in (("dirichlet", self._dirichlet), ("neumann", self._neumann)):
            for ell in sorted(rows):
                for k, x in enumerate(rows[ell], start=1):
                    lines.append(f"{name} {ell} {k} {x:.17g} {self.precision:.17g}")
        tmp = path + ".tmp"
        with open(tmp, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        os.replace(tmp, path)

    def load(self, path: str):
        rows: dict = {"dirichlet": {}, "neumann": {}}
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                bc, ell_s, k_s, val_s, _prec = line.split()
                rows[bc].setdefault(int(ell_s), {})[int(k_s)] = float(val_s)
        with self._lock:
            for bc, dest in (("dirichlet", self._dirichlet), ("neumann", self._neumann)):
                for ell, kv in rows[bc].items():
                    ks = sorted(kv)
                    if ks == list(range(1, len(ks) + 1)):
                        dest[ell] = np.array([kv[k] for k in ks])


_DEFAULT_TABLE = BesselZeroTable()


def default_table() -> BesselZeroTable:
    """Process-wide zero table, optionally backed by $CASIMIR_CACHE."""
    path = os.environ.get("CASIMIR_CACHE")
    if path and os.path.exists(path) and not getattr(_DEFAULT_TABLE, "_cache_loaded", False):
        _DEFAULT_TABLE.load(path)
        _DEFAULT_TABLE._cache_loaded = True
    return _DEFAULT_TABLE


def dirichlet_zero(ell: int, k: int) -> float:
    """k-th positive zero of j_l; for l = 0 these are k*pi."""
    return default_table().dirichlet(ell, k)


def neumann_zero(ell: int, k: int) -> float:
    """k-th positive zero of d/dx[x j_l(x)]; for l = 0 these are (2k-1)*pi/2."""
    return default_table().neumann(ell, k)


# ----------------------------------------------------------------------
# spectra
# ----------------------------------------------------------------------

def normalize_bc(bc: str) -> str:
    """Map TE/TM and case variants onto 'dirichlet'/'neumann'."""
    key = bc.strip().lower()
    aliases = {
        "dirichlet": "dirichlet", "te": "dirichlet",
        "neumann": "neumann", "tm": "neumann",
    }
    if key not in aliases:
        raise DomainError(f"unknown boundary condition {bc!r} (use TE/Dirichlet or TM/Neumann)")
    return aliases[key]


@dataclass(frozen=True)
class Spectrum:
    """Eigenfrequencies omega_{l k} = x_{l k} / a0 for one boundary condition."""

    bc: str
    a0: float = 1.0
    table: BesselZeroTable = field(default_factory=default_table)

    def __post_init__(self):
        object.__setattr__(self, "bc", normalize_bc(self.bc))
        if self.a0 <= 0:
            raise DomainError("a0 must be positive")

    def zero(self, ell: int, k: int) -> float:
        if self.bc == "dirichlet":
            return self.table.dirichlet(ell, k)
        return self.table.neumann(ell, k)

    def omega(self, ell: int, k: int) -> float:
        return self.zero(ell, k) / self.a0

    def block(self, ell: int, count: int) -> np.ndarray:
        """omega_{l,1..count} as an array."""
        return self.table.zeros(self.bc, ell, count) / self.a0
