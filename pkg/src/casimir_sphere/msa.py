"""Multiple-scale (slow-time) analysis: resonance and coupling detection,
reduced amplitude equations, closed-form solutions, and growth rates.

The slow time is tau = epsilon * t.  For an isolated parametric resonance
Omega = 2 w the amplitudes obey dA/dtau = -gamma B, dB/dtau = -gamma A with
gamma = w/2 for Dirichlet and gamma = (kappa / 2 a0) (1 + L(L+1)/kappa^2) /
(1 - L(L+1)/kappa^2) for Neumann.  For the equidistant Dirichlet l = 0
spectrum the reduced system couples modes n and n +/- 2 and is integrated with
matrix exponentials of its constant generator.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .cavity import couplings_for
from .errors import ConfigError, DomainError
from .specfun import Spectrum, normalize_bc


@dataclass(frozen=True)
class ResonanceReport:
    """Frequency-matching hits for a drive Omega against one spectrum."""

    omega_drive: float
    tol: float
    parametric: tuple            # (ell, n) with |Omega - 2 w_{ln}| <= tol
    pairs: tuple                 # (ell, n, p), n < p, |Omega - w_n - w_p| <= tol
    couplings: tuple             # (ell, n, q, sign) with |Omega -/+ (w_n - w_q)| <= tol

    def to_json(self) -> str:
        return json.dumps({
            "omega_drive": self.omega_drive,
            "parametric": [{"ell": l, "n": n} for l, n in self.parametric],
            "pairs": [{"ell": l, "n": n, "p": p} for l, n, p in self.pairs],
            "couplings": [{"ell": l, "n": n, "q": q, "sign": s}
                          for l, n, q, s in self.couplings],
        })


def detect_resonances(spectrum: Spectrum, Omega: float, tol: float | None = None,
                      *, ell_range=(0, 4), k_max: int = 24) -> ResonanceReport:
    """Exhaustive scan of parametric, pair, and intermode-coupling conditions.

    Deterministic ordering: ell ascending, then mode indices ascending.
    """
    if Omega <= 0:
        raise DomainError("Omega must be positive")
    tol = 1e-9 * Omega if tol is None else tol
    if tol <= 0:
        raise DomainError("tol must be positive")
    parametric, pairs, couplings = [], [], []
    for ell in range(ell_range[0], ell_range[1] + 1):
        w = spectrum.block(ell, k_max)
        for n in range(1, k_max + 1):
            if abs(Omega - 2 * w[n - 1]) <= tol:
                parametric.append((ell, n))
            for p in range(n + 1, k_max + 1):
                if abs(Omega - w[n - 1] - w[p - 1]) <= tol:
                    pairs.append((ell, n, p))
            for q in range(1, k_max + 1):
                if q == n:
                    continue
                if abs(Omega - (w[n - 1] - w[q - 1])) <= tol:
                    couplings.append((ell, n, q, +1))
                elif abs(Omega + (w[n - 1] - w[q - 1])) <= tol:
                    couplings.append((ell, n, q, -1))
    return ResonanceReport(omega_drive=Omega, tol=tol,
                           parametric=tuple(parametric), pairs=tuple(pairs),
                           couplings=tuple(couplings))


def msa_closed_form(omega: float, eps: float, t: float,
                    gamma: float | None = None) -> tuple[complex, complex]:
    """Isolated-resonance solution A(t) = -sinh(gamma eps t)/sqrt(2 w),
    B(t) = cosh(gamma eps t)/sqrt(2 w); gamma defaults to the Dirichlet rate w/2."""
    if omega <= 0:
        raise DomainError("omega must be positive")
    g = omega / 2.0 if gamma is None else gamma
    x = g * eps * t
    r = 1.0 / math.sqrt(2.0 * omega)
    return complex(-math.sinh(x) * r), complex(math.cosh(x) * r)


def growth_rate(bc: str, ell: int, N: int, a0: float = 1.0, *, spectrum: Spectrum | None = None) -> float:
    """Parametric growth rate at Omega = 2 w_{l N}.

    Dirichlet: z_{lN} / (2 a0) = w/2 exactly.  Neumann:
    (kappa / 2 a0) (1 + L(L+1)/kappa^2) / (1 - L(L+1)/kappa^2), defined only
    for kappa^2 > L(L+1).
    """
    bc = normalize_bc(bc)
    if ell < 1:
        raise DomainError("growth_rate applies to ell >= 1 (non-equidistant spectrum)")
    spec = spectrum or Spectrum(bc, a0)
    z = spec.zero(ell, N)
    if bc == "dirichlet":
        return z / (2.0 * a0)
    ll1 = ell * (ell + 1)
    if z * z <= ll1:
        raise DomainError(f"kappa^2 = {z * z:.6g} <= l(l+1) = {ll1}")
    r = ll1 / (z * z)
    return z / (2.0 * a0) * (1.0 + r) / (1.0 - r)


@dataclass(frozen=True)
class SlowAmplitudes:
    """Slow-time amplitudes at tau; A[n, k] and B[n, k] over initial modes k."""

    tau: float
    A: np.ndarray
    B: np.ndarray
    omega: np.ndarray

    def particle_total(self) -> float:
        """Total <N> = sum_n 2 w_n sum_k |A_{n k}|^2."""
        return float(np.sum(2.0 * self.omega[:, None] * np.abs(self.A) ** 2))

    def energy_total(self) -> float:
        return float(np.sum(2.0 * self.omega[:, None] ** 2 * np.abs(self.A) ** 2))

    def per_mode(self) -> np.ndarray:
        return 2.0 * self.omega * np.sum(np.abs(self.A) ** 2, axis=1)

    def normalization(self) -> np.ndarray:
        w = 2.0 * self.omega[:, None]
        return np.sum(w * (np.abs(self.B) ** 2 - np.abs(self.A) ** 2), axis=0)


@dataclass(frozen=True)
class ReducedEvolution:
    """Sampled slow-time evolution of the reduced system."""

    taus: np.ndarray
    states: tuple
    report: ResonanceReport

    @property
    def final(self) -> SlowAmplitudes:
        return self.states[-1]

    def totals(self) -> np.ndarray:
        return np.array([s.particle_total() for s in self.states])

    def energies(self) -> np.ndarray:
        return np.array([s.energy_total() for s in self.states])


def _slow_generator(ell: int, Omega: float, P: int, omega: np.ndarray,
                    g: np.ndarray, tol: float):
    """Constant matrices (MA, MB) of the slow system dA = (MA A + MB B) dtau.

    Secular-term elimination keeps only exact frequency matches; the delta
    selectors act as matching tests with absolute tolerance ``tol``.
    """
    MA = np.zeros((P, P))
    MB = np.zeros((P, P))
    for n in range(P):
        wn = omega[n]
        if abs(Omega - 2 * wn) <= tol:
            MB[n, n] += -wn / 2.0
        for p in range(P):
            if p == n:
                continue
            wp = omega[p]
            c = g[p, n] * Omega / (2.0 * wn)
            if abs(Omega - wn - wp) <= tol:
                MB[n, p] += (Omega / 2.0 - wp) * c
            if abs(Omega + wp - wn) <= tol:
                MA[n, p] += (wp + Omega / 2.0) * c
            if abs(Omega + wn - wp) <= tol:
                MA[n, p] += (wp - Omega / 2.0) * c
    return MA, MB


def msa_evolve_reduced(ell: int, bc: str, Omega: float, P: int, tau_f: float,
                       *, a0: float = 1.0, n_samples: int = 121,
                       tol: float | None = None) -> ReducedEvolution:
    """Integrate the slow-time reduced system over tau in [0, tau_f].

    Dirichlet blocks use the full secular structure (parametric, pair, and
    intermode-coupling selectors); the constant generator is applied through
    matrix exponentials of the decoupled combinations A +/- B.  Neumann blocks
    support only isolated parametric resonance, with the rate from
    ``growth_rate``; their equidistant l = 0 cascade is outside this module.
    """
    bc = normalize_bc(bc)
    spec = Spectrum(bc, a0)
    tol = 1e-9 * Omega if tol is None else tol
    report = detect_resonances(spec, Omega, tol, ell_range=(ell, ell), k_max=P)
    omega = spec.block(ell, P)
    taus = np.linspace(0.0, tau_f, n_samples)
    B0 = np.diag(1.0 / np.sqrt(2.0 * omega)).astype(complex)

    if bc == "neumann":
        if report.couplings:
            raise ConfigError(
                "Neumann reduced equations implemented for isolated resonance only; "
                f"drive couples modes: {report.couplings[:4]}")
        gam = np.zeros(P)
        for (l_hit, n_hit) in report.parametric:
            gam[n_hit - 1] = growth_rate("neumann", ell, n_hit, a0)
        states = []
        for tau in taus:
            A = np.diag(-np.sinh(gam * tau)).astype(complex) @ B0
            B = np.diag(np.cosh(gam * tau)).astype(complex) @ B0
            states.append(SlowAmplitudes(tau=float(tau), A=A, B=B, omega=omega))
        return ReducedEvolution(taus=taus, states=tuple(states), report=report)

    g = couplings_for("dirichlet", ell, P).g
    MA, MB = _slow_generator(ell, Omega, P, omega, g, tol)
    Gp, Gm = MA + MB, MA - MB  # (A+B)' = Gp (A+B); (A-B)' = Gm (A-B)
    states = []
    for tau in taus:
        Sp = expm(Gp * tau) @ B0
        Sm = expm(Gm * tau) @ (-B0)
        A = 0.5 * (Sp + Sm)
        B = 0.5 * (Sp - Sm)
        states.append(SlowAmplitudes(tau=float(tau), A=A, B=B, omega=omega))
    return ReducedEvolution(taus=taus, states=tuple(states), report=report)


def fit_loglog_slope(taus: np.ndarray, values: np.ndarray,
                     window: float = 0.5) -> float:
    """Least-squares log-log slope over the trailing ``window`` fraction of samples."""
    taus = np.asarray(taus, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = (taus > 0) & (values > 0)
    taus, values = taus[keep], values[keep]
    start = int(len(taus) * (1.0 - window))
    if len(taus) - start < 3:
        raise DomainError("not enough samples in the fit window")
    return float(np.polyfit(np.log(taus[start:]), np.log(values[start:]), 1)[0])
