"""Assemble and integrate the coupled mode equations for both boundary
conditions; extract out-region Bogoliubov coefficients and particle numbers.

The instantaneous-basis expansion turns the wave equation into

    Qdd_n + w_n(t)^2 Q_n = -2 lam sum_p D_pn Qd_p - lamdot sum_p D_pn Q_p + ...

with D_pn = a <d_a psi_p, psi_n> the derivative overlap of the basis and, for
Neumann, gauge-profile source terms s and eta.  Dirichlet blocks are integrated
in the equivalent first-order pair (Q, pi) with pi = <phidot, psi_n> (the
projection of the field velocity):

    Qd = pi - lam (D^T-contracted) Q        pid = -w(t)^2 Q - lam (...) pi

which agrees with the second-order form through first order in epsilon and
conserves the Bogoliubov normalization identically at any mode truncation
(the antisymmetry of D makes the norm flux cancel exactly).  Neumann blocks
use the explicit second-order reduction: third- and second-derivative source
terms are closed with Qdd = -w(t)^2 Q and d3Q = d/dt[-w(t)^2 Q], which changes
nothing at the retained order in epsilon.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .cavity import CouplingSet, Trajectory
from .errors import (
    ConfigError,
    DivergenceError,
    DomainError,
    PreconditionError,
    StiffnessError,
)
from .specfun import Spectrum, default_table, normalize_bc

DIVERGENCE_FACTOR = 1e6


@dataclass
class AmplitudeState:
    """Mode amplitudes Q_p(t) and their time derivatives.

    ``Q`` is (P,) for a single initially-excited mode ``k0`` (1-based) or
    (P, P) with one column per initial mode when ``k0`` is None.  ``Qdot``
    always holds dQ/dt (mid-motion samples of Dirichlet runs are converted
    from the internal projection variable before they are exposed).
    """

    bc: str
    ell: int
    P: int
    k0: int | None
    t: float
    Q: np.ndarray
    Qdot: np.ndarray

    def __post_init__(self):
        self.bc = normalize_bc(self.bc)
        if not (np.all(np.isfinite(self.Q.view(float))) and
                np.all(np.isfinite(self.Qdot.view(float)))):
            raise DivergenceError(f"non-finite amplitudes at t={self.t}", t=self.t)


@dataclass
class BogoliubovPair:
    """Out-region coefficients A[k, n], B[k, n] over static frequencies omega[n]."""

    A: np.ndarray
    B: np.ndarray
    omega: np.ndarray
    bc: str = "dirichlet"
    ell: int = 1
    ks: tuple = ()

    def normalization(self) -> np.ndarray:
        """sum_n 2 w_n (|B|^2 - |A|^2) per initial mode; 1 for exact evolution."""
        w = 2.0 * self.omega[None, :]
        return np.sum(w * (np.abs(self.B) ** 2 - np.abs(self.A) ** 2), axis=1)


def initial_state(bc: str, ell: int, P: int, k0: int | None = None,
                  a0: float = 1.0, *, table=None) -> AmplitudeState:
    """Vacuum-matching initial data Q_p = delta_{p k}/sqrt(2 w_k), Qd_p = -i sqrt(w_k/2) delta."""
    bc = normalize_bc(bc)
    table = table or default_table()
    omega = table.zeros(bc, ell, P) / a0
    if k0 is not None:
        if not 1 <= k0 <= P:
            raise DomainError(f"k0={k0} outside 1..{P}")
        Q = np.zeros(P, complex)
        Qd = np.zeros(P, complex)
        Q[k0 - 1] = 1.0 / np.sqrt(2.0 * omega[k0 - 1])
        Qd[k0 - 1] = -1j * np.sqrt(omega[k0 - 1] / 2.0)
    else:
        Q = np.diag(1.0 / np.sqrt(2.0 * omega)).astype(complex)
        Qd = np.diag(-1j * np.sqrt(omega / 2.0))
    return AmplitudeState(bc=bc, ell=ell, P=P, k0=k0, t=0.0, Q=Q, Qdot=Qd)


def _dynamic_matrices(couplings: CouplingSet):
    """Row-major matrices of the equations of motion (row = projected mode n).

    The derivative overlap D relates to the tabulated closed form by
    transposition for Dirichlet (antisymmetry makes the stored table itself
    the row-major matrix) and, for Neumann, by doubling off-diagonals and
    negating the diagonal (the tabulated diagonal is the boundary flux
    a^3 phi_p(a)^2 / 2; the overlap diagonal is its negative).
    """
    g = couplings.g
    if couplings.bc == "dirichlet":
        return np.ascontiguousarray(g), None, None
    Cg = 2.0 * g.T.copy()
    np.fill_diagonal(Cg, -np.diag(g))
    Cs = np.ascontiguousarray(couplings.s)
    Ceta = np.ascontiguousarray(couplings.eta.T)
    return np.ascontiguousarray(Cg), Cs, Ceta


def assemble_rhs(bc: str, couplings: CouplingSet, traj: Trajectory, *, table=None):
    """Right-hand side f(t, y) over the packed real state.

    The state pairs Q with pi (Dirichlet) or with Qdot (Neumann); both reduce
    to P uncoupled oscillators at the static frequencies when epsilon = 0.
    """
    bc = normalize_bc(bc)
    if couplings.bc != bc:
        raise ConfigError(f"couplings built for {couplings.bc!r}, requested {bc!r}")
    table = table or default_table()
    P = couplings.P
    zer = table.zeros(bc, couplings.ell, P)
    K2 = zer * zer
    Cg, Cs, Ceta = _dynamic_matrices(couplings)
    neumann = bc == "neumann"

    def rhs(t, y):
        z = np.ascontiguousarray(y).view(complex).reshape(2, P, -1)
        Q, V = z[0], z[1]
        a, lam, lamd, lamdd = traj.lam_terms(t)
        om2 = (zer / a) ** 2
        out = np.empty_like(z)
        if neumann:
            acc = -om2[:, None] * Q - 2.0 * lam * (Cg @ V) - lamd * (Cg @ Q)
            K2Q = K2[:, None] * Q
            acc += 2.0 * lamd * (Cs @ K2Q)
            acc += lam * (Ceta @ V + Cs @ (K2[:, None] * V))
            acc -= lamdd * (a * a) * (Cs @ V)
            # d3Q closed as d/dt[-w^2(t) Q] = -w^2 Qd + 2 lam w^2 Q
            acc -= 2.0 * lam * lam * (Cs @ K2Q)
            out[0] = V
        else:
            # projection pair: V = pi = <phidot, psi>; Qd = pi - lam D Q
            out[0] = V - lam * (Cg @ Q)
            acc = -om2[:, None] * Q - lam * (Cg @ V)
        out[1] = acc
        return out.reshape(-1).view(float)

    return rhs


def _pi_to_qdot(bc, Cg, traj, t, Q, V):
    """Dirichlet mid-motion samples store pi; convert to dQ/dt."""
    if bc == "neumann":
        return V
    _, lam, _, _ = traj.lam_terms(t)
    if lam == 0.0:
        return V
    return V - lam * (Cg @ Q)


def evolve(state0: AmplitudeState, traj: Trajectory, couplings: CouplingSet,
           tol: float = 1e-10, *, sample_times=None, table=None):
    """Adaptive RK45 integration of the coupled system from state0.t to traj.t_f.

    Returns the final state, or (final, samples) when ``sample_times`` is given.
    Aborts with DivergenceError when any amplitude exceeds 1e6 times the
    initial scale (runaway resonant drive), and with StiffnessError when the
    step-size control fails.
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    rhs = assemble_rhs(state0.bc, couplings, traj, table=table)
    Cg, _, _ = _dynamic_matrices(couplings)
    # initial data given as (Q, Qdot) at a static instant, where pi == Qdot
    y0 = np.concatenate([state0.Q.ravel(), state0.Qdot.ravel()]).view(float)
    scale0 = float(np.max(np.abs(y0)))
    guard = DIVERGENCE_FACTOR * scale0

    def runaway(t, y):
        return guard - float(np.max(np.abs(y)))

    runaway.terminal = True
    runaway.direction = -1

    t_eval = None
    if sample_times is not None:
        t_eval = np.asarray(sample_times, dtype=float)

    sol = solve_ivp(
        rhs, (state0.t, traj.t_f), y0, method="RK45",
        rtol=tol, atol=tol * 1e-3 * scale0, events=runaway, t_eval=t_eval,
        dense_output=False,
    )
    if sol.status == 1:  # terminated by the runaway guard
        t_ev = float(sol.t_events[0][0])
        raise DivergenceError(
            f"amplitude exceeded {DIVERGENCE_FACTOR:.0e} x initial scale at t={t_ev:.6g}; "
            "reduce epsilon or t_f", t=t_ev)
    if not sol.success:
        raise StiffnessError(f"integration failed at t={sol.t[-1]:.6g}: {sol.message}")

    ncols = state0.Q.shape[1] if state0.Q.ndim == 2 else 1

    def unpack(yflat, t):
        z = np.ascontiguousarray(yflat).view(complex).reshape(2, state0.P, ncols)
        Q = z[0]
        Qd = _pi_to_qdot(state0.bc, Cg, traj, float(t), Q, z[1])
        if ncols == 1:
            Q, Qd = Q[:, 0], Qd[:, 0]
        return AmplitudeState(bc=state0.bc, ell=state0.ell, P=state0.P,
                              k0=state0.k0, t=float(t), Q=Q.copy(), Qdot=Qd.copy())

    final = unpack(sol.y[:, -1], sol.t[-1])
    if sample_times is None:
        return final
    samples = [unpack(sol.y[:, i], sol.t[i]) for i in range(sol.y.shape[1])]
    return final, samples


def extract_bogoliubov(state: AmplitudeState, spectrum: Spectrum,
                       traj: Trajectory | None = None) -> BogoliubovPair:
    """Invert Q_n = A_n e^{i w t} + B_n e^{-i w t} (and its derivative) at a
    static time.  Raises PreconditionError if the wall is still moving."""
    if traj is not None and not traj.is_static(state.t):
        raise PreconditionError(f"extraction at t={state.t} while the wall is moving")
    if spectrum.bc != state.bc:
        raise ConfigError("spectrum boundary condition does not match the state")
    omega = spectrum.block(state.ell, state.P)
    Q = state.Q if state.Q.ndim == 2 else state.Q[:, None]
    Qd = state.Qdot if state.Qdot.ndim == 2 else state.Qdot[:, None]
    w = omega[:, None]
    ph = np.exp(-1j * w * state.t)
    A = ph * (Q + Qd / (1j * w)) / 2.0
    B = np.conj(ph) * (Q - Qd / (1j * w)) / 2.0
    ks = (state.k0,) if state.k0 is not None else tuple(range(1, state.P + 1))
    # store as rows over the initial-mode label k
    return BogoliubovPair(A=A.T.copy(), B=B.T.copy(), omega=omega,
                          bc=state.bc, ell=state.ell, ks=ks)


def particle_number(bog: BogoliubovPair, n: int) -> float:
    """<N_n> = 2 w_n sum_k |A^(k)_n|^2 (per azimuthal quantum number m)."""
    if not 1 <= n <= bog.omega.size:
        raise DomainError(f"mode index n={n} outside 1..{bog.omega.size}")
    return float(2.0 * bog.omega[n - 1] * np.sum(np.abs(bog.A[:, n - 1]) ** 2))


def particle_numbers(bog: BogoliubovPair) -> np.ndarray:
    """Per-mode <N_n> for all n (per m); m-independent by construction."""
    return 2.0 * bog.omega * np.sum(np.abs(bog.A) ** 2, axis=0)


def particle_number_level(bog: BogoliubovPair, n: int) -> float:
    """Degeneracy total (2 l + 1) <N_n> summed over m."""
    return (2 * bog.ell + 1) * particle_number(bog, n)


def per_k_contributions(bog: BogoliubovPair, n: int) -> np.ndarray:
    """2 w_n |A^(k)_n|^2 for each initial mode k (the summands of <N_n>)."""
    return 2.0 * bog.omega[n - 1] * np.abs(bog.A[:, n - 1]) ** 2
