"""Wall trajectory, gauge profile for the Neumann coordinate change, mode
normalizations, and the intermode coupling matrices g, s, eta.

All coupling matrices are built at a = a0 in the dimensionless radial
variable xi = r/a, hence independent of a0.  Matrix layout follows the
two-index convention g[p-1, n-1] = g_{p n} (first index = differentiated /
summed mode, second = projected mode).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError, InvariantError, PreconditionError
from .specfun import (
    default_table,
    normalize_bc,
    sph_bessel_j,
    sph_bessel_j_deriv,
)

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def panel_quad(f: Callable[[np.ndarray], np.ndarray], a: float, b: float,
               *, osc_scale: float = 0.0, tol: float = 1e-10, max_panels: int = 4096) -> float:
    """Composite 16-point Gauss-Legendre quadrature with panel doubling.

    Panels start at roughly two per oscillation wavelength of ``osc_scale``
    (a frequency in the integration variable) and double until two successive
    estimates agree within ``tol`` (absolute).
    """
    n = max(4, int(math.ceil((b - a) * max(osc_scale, 1.0) / math.pi)) + 2)

    def estimate(n_panels: int) -> float:
        edges = np.linspace(a, b, n_panels + 1)
        half = 0.5 * (edges[1:] - edges[:-1])
        mid = 0.5 * (edges[1:] + edges[:-1])
        pts = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
        vals = np.asarray(f(pts), dtype=float).reshape(n_panels, -1)
        return float(np.sum(vals @ _GL_WEIGHTS * half))

    prev = estimate(n)
    while n < max_panels:
        n *= 2
        cur = estimate(n)
        if abs(cur - prev) <= tol:
            return cur
        prev = cur
    raise InvariantError(f"quadrature failed to reach tol={tol} within {max_panels} panels")


# ----------------------------------------------------------------------
# wall trajectory
# ----------------------------------------------------------------------

def _smoothstep(u: np.ndarray):
    """C^2 quintic ramp: value and first three derivatives w.r.t. u."""
    s = u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
    ds = 30.0 * u * u * (1.0 - 2.0 * u + u * u)
    d2s = 60.0 * u * (1.0 - 3.0 * u + 2.0 * u * u)
    d3s = 60.0 * (1.0 - 6.0 * u + 6.0 * u * u)
    return s, ds, d2s, d3s


@dataclass(frozen=True)
class Trajectory:
    """Wall motion a(t) = a0 (1 + eps * w(t) * sin(Omega t)) on 0 < t < t_f.

    ``pure_sine`` has w = 1 and t_f snapped to a whole number of drive
    periods so a(t_f) = a0.  ``windowed_sine`` ramps w from 0 to 1 over
    ``window_periods`` drive periods at each end with a C^2 profile; the
    total duration is extended by one window so that the time integral of
    w equals the requested flat-top duration (the accumulated squeeze then
    matches the pure-sine run, isolating the start-up transient).
    """

    a0: float
    epsilon: float
    Omega: float
    t_f: float
    f_kind: str = "pure_sine"
    window_periods: int = 0

    def __post_init__(self):
        if self.a0 <= 0 or self.Omega <= 0 or self.t_f <= 0:
            raise DomainError("a0, Omega and t_f must be positive")
        if self.epsilon < 0:
            raise DomainError("epsilon must be non-negative")
        if self.epsilon > 0.1:
            warnings.warn("epsilon > 0.1: outside the small-amplitude regime",
                          stacklevel=3)

    @classmethod
    def pure_sine(cls, a0: float, epsilon: float, Omega: float, t_f: float) -> "Trajectory":
        period = 2 * math.pi / Omega
        t_snap = max(1, round(t_f / period)) * period
        return cls(a0, epsilon, Omega, t_snap, "pure_sine", 0)

    @classmethod
    def windowed_sine(cls, a0: float, epsilon: float, Omega: float,
                      t_f_flat: float, window_periods: int) -> "Trajectory":
        if window_periods < 1:
            raise DomainError("window_periods must be >= 1 for windowed_sine")
        period = 2 * math.pi / Omega
        flat = max(1, round(t_f_flat / period)) * period
        wt = window_periods * period
        if flat < wt:
            raise DomainError("flat-top duration shorter than the window")
        return cls(a0, epsilon, Omega, flat + wt, "windowed_sine", window_periods)

    @property
    def period(self) -> float:
        return 2 * math.pi / self.Omega

    def _window(self, t: np.ndarray):
        """w(t) and its first three time derivatives."""
        if self.f_kind == "pure_sine":
            one = np.ones_like(t)
            zero = np.zeros_like(t)
            return one, zero, zero, zero
        wt = self.window_periods * self.period
        w = np.ones_like(t)
        dw = np.zeros_like(t)
        d2w = np.zeros_like(t)
        d3w = np.zeros_like(t)
        up = t < wt
        if np.any(up):
            s, ds, d2s, d3s = _smoothstep(t[up] / wt)
            w[up], dw[up], d2w[up], d3w[up] = s, ds / wt, d2s / wt**2, d3s / wt**3
        dn = t > self.t_f - wt
        if np.any(dn):
            u = (self.t_f - t[dn]) / wt
            s, ds, d2s, d3s = _smoothstep(u)
            w[dn], dw[dn], d2w[dn], d3w[dn] = s, -ds / wt, d2s / wt**2, -d3s / wt**3
        return w, dw, d2w, d3w

    def kinematics(self, t):
        """a, adot, addot, adddot at time t (scalar or array)."""
        tarr = np.asarray(t, dtype=float)
        scalar = tarr.ndim == 0
        tv = np.atleast_1d(tarr)
        inside = (tv > 0) & (tv < self.t_f)
        a = np.full_like(tv, self.a0)
        ad = np.zeros_like(tv)
        add = np.zeros_like(tv)
        addd = np.zeros_like(tv)
        if np.any(inside):
            ti = tv[inside]
            w, dw, d2w, d3w = self._window(ti)
            Om = self.Omega
            s, c = np.sin(Om * ti), np.cos(Om * ti)
            f = w * s
            df = dw * s + w * Om * c
            d2f = d2w * s + 2 * dw * Om * c - w * Om**2 * s
            d3f = d3w * s + 3 * d2w * Om * c - 3 * dw * Om**2 * s - w * Om**3 * c
            a[inside] = self.a0 * (1 + self.epsilon * f)
            ad[inside] = self.a0 * self.epsilon * df
            add[inside] = self.a0 * self.epsilon * d2f
            addd[inside] = self.a0 * self.epsilon * d3f
        if scalar:
            return float(a[0]), float(ad[0]), float(add[0]), float(addd[0])
        return a, ad, add, addd

    def lam_terms(self, t: float):
        """a, lambda = adot/a, lambdadot, lambdaddot at a scalar time."""
        a, ad, add, addd = self.kinematics(t)
        lam = ad / a
        lamd = add / a - lam * lam
        lamdd = addd / a - 3 * lam * lamd - lam**3
        return a, lam, lamd, lamdd

    def is_static(self, t: float, tol: float = 1e-12) -> bool:
        return t <= tol or t >= self.t_f - tol


def trajectory_eval(traj: Trajectory, t):
    """(a, adot, lambda, lambdadot) at time t; static outside (0, t_f)."""
    a, ad, add, _ = traj.kinematics(t)
    lam = ad / a
    lamdot = add / a - lam * lam
    return a, ad, lam, lamdot


# ----------------------------------------------------------------------
# gauge profile for the Neumann coordinate change
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class GaugeProfile:
    """Radial profile v(xi) defining g(r,t) = adot * a * v(r/a).

    Must satisfy v(1) = 0 and v'(1) = -1 (checked at construction).
    Derivatives default to high-order one-sided/central differences when not
    supplied analytically.
    """

    name: str
    v: Callable
    dv: Callable | None = None
    d2v: Callable | None = None

    def __post_init__(self):
        if abs(self.value(1.0)) > 1e-10:
            raise InvariantError(f"gauge {self.name!r}: v(1) != 0")
        if abs(self.deriv(1.0) + 1.0) > 1e-10:
            raise InvariantError(f"gauge {self.name!r}: v'(1) != -1")

    def value(self, xi):
        return self.v(np.asarray(xi, dtype=float))

    def deriv(self, xi):
        if self.dv is not None:
            return self.dv(np.asarray(xi, dtype=float))
        return _fd(self.v, np.asarray(xi, dtype=float), order=1)

    def deriv2(self, xi):
        if self.d2v is not None:
            return self.d2v(np.asarray(xi, dtype=float))
        return _fd(self.v, np.asarray(xi, dtype=float), order=2)


def _fd(f, x, order: int, h: float = 1e-3):
    """Five-point finite differences on [0, 1], shifted near the ends."""
    x = np.asarray(x, dtype=float)
    c = np.clip(x, 2 * h, 1 - 2 * h)
    stencil = np.array([-2, -1, 0, 1, 2]) * h
    vals = np.stack([np.asarray(f(c + s), dtype=float) for s in stencil])
    if order == 1:
        w = np.array([1, -8, 0, 8, -1]) / (12 * h)
    else:
        w = np.array([-1, 16, -30, 16, -1]) / (12 * h * h)
    base = np.tensordot(w, vals, axes=(0, 0))
    if order == 1 and np.any(c != x):
        # re-expand around the clipped point: f'(x) ~ f'(c) + (x-c) f''(c)
        w2 = np.array([-1, 16, -30, 16, -1]) / (12 * h * h)
        base = base + (x - c) * np.tensordot(w2, vals, axes=(0, 0))
    return base


_BUILTIN_GAUGES = {
    "parabola": GaugeProfile(
        "parabola",
        v=lambda x: 0.5 * (1.0 - x * x),
        dv=lambda x: -x,
        d2v=lambda x: -np.ones_like(np.asarray(x, dtype=float)),
    ),
    "cubic": GaugeProfile(
        "cubic",
        v=lambda x: (1.0 - x) * x * x,
        dv=lambda x: 2.0 * x - 3.0 * x * x,
        d2v=lambda x: 2.0 - 6.0 * x,
    ),
}


def builtin_gauge(name: str) -> GaugeProfile:
    try:
        return _BUILTIN_GAUGES[name]
    except KeyError:
        raise DomainError(
            f"unknown gauge {name!r}; built-ins: {sorted(_BUILTIN_GAUGES)}"
        ) from None


# ----------------------------------------------------------------------
# couplings
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class CouplingSet:
    """Truncated coupling matrices for one (bc, ell) block.

    ``g`` follows the closed forms; for Neumann, ``s`` and ``eta`` are the
    gauge-dependent radial integrals (evaluated at a = a0, where they enter
    only at first order in epsilon).
    """

    bc: str
    ell: int
    P: int
    g: np.ndarray
    s: np.ndarray | None = None
    eta: np.ndarray | None = None
    gauge_id: str | None = None

    def __post_init__(self):
        if self.P < 2:
            raise DomainError("truncation size P must be >= 2")


def coupling_dirichlet(ell: int, P: int, *, table=None) -> CouplingSet:
    """Dirichlet transfer matrix: g_{pn} = 2 z_n z_p / (z_p^2 - z_n^2), zero diagonal."""
    table = table or default_table()
    z = table.zeros("dirichlet", ell, P)
    zp = z[:, None]
    zn = z[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        g = 2.0 * zn * zp / (zp**2 - zn**2)
    np.fill_diagonal(g, 0.0)
    return CouplingSet(bc="dirichlet", ell=ell, P=P, g=g)


def _neumann_norms(ell: int, kappa: np.ndarray) -> np.ndarray:
    """Signed radial norm factor N_k = j_l(kappa_k) sqrt(1 - l(l+1)/kappa_k^2)."""
    ll1 = ell * (ell + 1)
    return sph_bessel_j(ell, kappa) * np.sqrt(1.0 - ll1 / kappa**2)


def coupling_neumann(ell: int, P: int, gauge: GaugeProfile | None = None,
                     *, table=None, quad_tol: float = 1e-10) -> CouplingSet:
    """Neumann block: closed-form g plus quadrature-built s and eta.

    The angular integrals collapse to one by orthonormality of the spherical
    harmonics, leaving radial integrals over xi in [0, 1].
    """
    gauge = gauge or builtin_gauge("parabola")
    table = table or default_table()
    kap = table.zeros("neumann", ell, P)
    ll1 = ell * (ell + 1)
    if ell >= 1 and np.any(kap**2 - ll1 <= 0):
        raise InvariantError(f"kappa^2 - l(l+1) <= 0 at ell={ell}: wrong zero")

    kp = kap[:, None]
    kn = kap[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        g = kn * kp / (kn**2 - kp**2) * np.sqrt((kp**2 - ll1) / (kn**2 - ll1))
    np.fill_diagonal(g, kap**2 / (kap**2 - ll1))

    norms = _neumann_norms(ell, kap)
    osc = 2.0 * float(kap[-1])
    s = np.empty((P, P))
    eta = np.empty((P, P))
    for i in range(P):
        ki = kap[i]
        for j in range(P):
            kj = kap[j]
            pref = 2.0 / (norms[i] * norms[j])
            if j >= i:
                s[i, j] = pref * panel_quad(
                    lambda x: x * x * gauge.value(x)
                    * sph_bessel_j(ell, ki * x) * sph_bessel_j(ell, kj * x),
                    0.0, 1.0, osc_scale=osc, tol=quad_tol,
                )
                s[j, i] = s[i, j]  # integrand symmetric in (p, n)

            def eta_integrand(x, ki=ki, kj=kj):
                jp = sph_bessel_j(ell, ki * x)
                jn = sph_bessel_j(ell, kj * x)
                jpd = sph_bessel_j_deriv(ell, ki * x)
                bulk = (gauge.deriv2(x) - ki * ki * gauge.value(x)) * jp * jn * x * x
                # (2/r) v' d_r[r phi_p] phi_n  ->  2 x v' (j_l + kappa x j_l') j_n
                edge = 2.0 * gauge.deriv(x) * x * (jp + ki * x * jpd) * jn
                return bulk + edge

            eta[i, j] = pref * panel_quad(eta_integrand, 0.0, 1.0,
                                          osc_scale=osc, tol=quad_tol)
    return CouplingSet(bc="neumann", ell=ell, P=P, g=g, s=s, eta=eta,
                       gauge_id=gauge.name)


_COUPLING_CACHE: dict = {}


def couplings_for(bc: str, ell: int, P: int, gauge: GaugeProfile | None = None) -> CouplingSet:
    """Cached coupling construction (matrices are immutable once built)."""
    bc = normalize_bc(bc)
    gname = (gauge.name if gauge else "parabola") if bc == "neumann" else None
    key = (bc, ell, P, gname)
    if key not in _COUPLING_CACHE:
        if bc == "dirichlet":
            _COUPLING_CACHE[key] = coupling_dirichlet(ell, P)
        else:
            _COUPLING_CACHE[key] = coupling_neumann(ell, P, gauge)
    return _COUPLING_CACHE[key]


def mode_normalization(bc: str, ell: int, k: int, a: float, *, table=None) -> float:
    """Radial normalization constant C with int r^2 |C j_l(w r)|^2 dr = 1 on [0, a].

    Dirichlet: C = sqrt(2/a^3) / |j_l'(z_{lk})|.  Neumann: the closed form
    C = sqrt(2/a^3) / | j_l(kappa) sqrt(1 - l(l+1)/kappa^2) | follows from the
    standard Bessel norm integral with the boundary condition d/dx[x j_l] = 0.
    """
    if a <= 0:
        raise DomainError("radius must be positive")
    table = table or default_table()
    bc = normalize_bc(bc)
    if bc == "dirichlet":
        z = table.dirichlet(ell, k)
        return math.sqrt(2.0 / a**3) / abs(sph_bessel_j_deriv(ell, z))
    kap = table.neumann(ell, k)
    return math.sqrt(2.0 / a**3) / abs(_neumann_norms(ell, np.array([kap]))[0])


def export_couplings_csv(cs: CouplingSet, fh):
    """CSV rows `bc,ell,P,matrix,p,n,value` (17 significant digits)."""
    fh.write("bc,ell,P,matrix,p,n,value\n")
    mats = [("g", cs.g)]
    if cs.s is not None:
        mats.append(("s", cs.s))
    if cs.eta is not None:
        mats.append(("eta", cs.eta))
    for name, m in mats:
        for p in range(cs.P):
            for n in range(cs.P):
                fh.write(f"{cs.bc},{cs.ell},{cs.P},{name},{p + 1},{n + 1},{m[p, n]:.17g}\n")
