"""Truncated three-mode Fock space for the resonant (N, L=1) level: ladder
and angular-momentum operators, the squeezed out-vacuum, and singlet checks.

Basis ordering is lexicographic in the occupations (n_plus, n_zero, n_minus)
of the m = +1, 0, -1 modes; operators are scipy.sparse matrices.  The in-
vacuum written in out states factorizes into a two-mode squeezed state on
(m=+1, m=-1) times a single-mode squeezed state on m=0, both geometric in
C = -tanh(gamma eps t_f).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DomainError, PreconditionError

_M_SLOT = {+1: 0, 0: 1, -1: 2}  # tensor-factor position per azimuthal number


def c_plus(ell: int, m: int) -> float:
    """Raising coefficient sqrt((l - m)(l + m + 1))."""
    return math.sqrt((ell - m) * (ell + m + 1))


def c_minus(ell: int, m: int) -> float:
    """Lowering coefficient sqrt((l + m)(l - m + 1))."""
    return math.sqrt((ell + m) * (ell - m + 1))


def _single_ladder(dim: int) -> sp.csr_matrix:
    return sp.diags(np.sqrt(np.arange(1, dim)), offsets=1, format="csr")


def _embed(op: sp.spmatrix, slot: int, dim: int) -> sp.csr_matrix:
    mats = [sp.identity(dim, format="csr")] * 3
    mats[slot] = op.tocsr()
    return sp.kron(sp.kron(mats[0], mats[1]), mats[2], format="csr")


@dataclass(frozen=True)
class FockOperators:
    """Sparse operator set over the (m=+1, 0, -1) occupation basis."""

    n_max: int
    a: dict                    # m -> annihilator
    number: dict               # m -> occupation-number operator
    Lz: sp.csr_matrix
    Lp: sp.csr_matrix
    Lm: sp.csr_matrix
    L2: sp.csr_matrix
    Ntot: sp.csr_matrix

    @property
    def dim(self) -> int:
        return (self.n_max + 1) ** 3

    def Lx(self) -> sp.csr_matrix:
        return ((self.Lp + self.Lm) / 2.0).tocsr()

    def Ly(self) -> sp.csr_matrix:
        return ((self.Lp - self.Lm) / 2j).tocsr()


def build_operators(n_max: int) -> FockOperators:
    """Ladder operators, Lz, L+-, L^2 = L- L+ + Lz^2 + Lz, and total number."""
    if n_max < 2:
        raise DomainError("n_max must be >= 2")
    dim = n_max + 1
    a1 = _single_ladder(dim)
    a = {m: _embed(a1, _M_SLOT[m], dim) for m in (+1, 0, -1)}
    num = {m: (a[m].getH() @ a[m]).tocsr() for m in (+1, 0, -1)}
    Lz = (num[+1] - num[-1]).tocsr()
    # L+ = sum_m C+_{1m} adag_{m+1} a_m, nonzero for m = -1, 0 at l = 1
    Lp = (c_plus(1, -1) * (a[0].getH() @ a[-1])
          + c_plus(1, 0) * (a[+1].getH() @ a[0])).tocsr()
    Lm = Lp.getH().tocsr()
    L2 = (Lm @ Lp + Lz @ Lz + Lz).tocsr()
    Ntot = (num[+1] + num[0] + num[-1]).tocsr()
    return FockOperators(n_max=n_max, a=a, number=num, Lz=Lz, Lp=Lp, Lm=Lm,
                         L2=L2, Ntot=Ntot)


def paired_mode_operator(ops: FockOperators, m: int, coeff_ann: complex,
                         coeff_cre: complex) -> sp.csr_matrix:
    """coeff_ann * a_m + coeff_cre * adag_{-m}; building block of the Bogoliubov maps."""
    return (coeff_ann * ops.a[m] + coeff_cre * ops.a[-m].getH()).tocsr()


def out_annihilator(ops: FockOperators, m: int, A: complex, B: complex,
                    omega: float) -> sp.csr_matrix:
    """a_out_m = sqrt(2w) [B a_m + (-1)^m A* adag_{-m}] with a_m read as in-operators."""
    r = math.sqrt(2.0 * omega)
    return paired_mode_operator(ops, m, r * B, r * (-1) ** m * np.conj(A))


def in_annihilator(ops: FockOperators, m: int, A: complex, B: complex,
                   omega: float) -> sp.csr_matrix:
    """Inverse map a_in_m = sqrt(2w) [B* a_m - (-1)^m A* adag_{-m}] on the out basis.

    Uses the unit Bogoliubov determinant 2w (|B|^2 - |A|^2) = 1.
    """
    r = math.sqrt(2.0 * omega)
    return paired_mode_operator(ops, m, r * np.conj(B), -r * (-1) ** m * np.conj(A))


def coefficient_C(gamma: float, eps: float, t_f: float) -> float:
    """C = -tanh(gamma eps t_f); always inside (-1, 1)."""
    if not (math.isfinite(gamma) and math.isfinite(eps) and math.isfinite(t_f)):
        raise DomainError("gamma, eps, t_f must be finite")
    return -math.tanh(gamma * eps * t_f)


@dataclass
class FockState:
    """Amplitudes over the (n_plus, n_zero, n_minus) basis."""

    n_max: int
    amp: np.ndarray            # complex, shape (n_max+1,)*3
    C: float | None = None
    norm_constant: float | None = None
    residual: float | None = None

    def vector(self) -> np.ndarray:
        return self.amp.reshape(-1)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amp))

    def to_json(self, cutoff: float = 1e-14) -> str:
        entries = []
        it = np.ndindex(self.amp.shape)
        for idx in it:
            v = self.amp[idx]
            if abs(v) > cutoff:
                entries.append({"n_plus": idx[0], "n_zero": idx[1],
                                "n_minus": idx[2], "re": v.real, "im": v.imag})
        return json.dumps({"n_max": self.n_max, "C": self.C, "entries": entries})


def _tower_amplitudes(C: float, n_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalized towers: pair[n] for |n, n> on (m=+1, m=-1), axial[k] on m=0.

    pair_n = (-C)^n; axial obeys c_{k+1} = C sqrt(k/(k+1)) c_{k-1} (even k only).
    """
    pair = (-C) ** np.arange(n_max + 1)
    axial = np.zeros(n_max + 1)
    axial[0] = 1.0
    for k in range(1, n_max):
        axial[k + 1] = C * math.sqrt(k / (k + 1)) * axial[k - 1]
    return pair, axial


def build_out_vacuum(C: float, n_max: int) -> FockState:
    """The in-vacuum expanded in out occupation states, normalized.

    Solves a_in(m) |psi> = 0 for all m in {-1, 0, +1}; with the inverse
    Bogoliubov map this reduces to a_m |psi> = (-1)^m C adag_{-m} |psi>,
    whose solution is geometric in each tower.  The reported residual is
    || (a_m - (-1)^m C adag_{-m}) psi || evaluated in a space enlarged by two
    quanta, so the truncation tail is visible rather than masked.
    """
    if abs(C) >= 1:
        raise DomainError("|C| must be < 1")
    if n_max < 2:
        raise DomainError("n_max must be >= 2")
    # slowest-decaying tail: the axial tower gains one power of C per TWO quanta
    tail = abs(C) ** (n_max // 2) * (n_max + 1.0) ** 0.25 if C != 0 else 0.0
    if tail > 1e-2:
        need = 2 * int(math.ceil(math.log(1e-3) / math.log(abs(C))))
        raise PreconditionError(
            f"truncation tail {tail:.2e} too large at n_max={n_max}; "
            f"use n_max >= {need}")
    pair, axial = _tower_amplitudes(C, n_max)
    amp = np.zeros((n_max + 1,) * 3, complex)
    for n in range(n_max + 1):
        amp[n, :, n] = pair[n] * axial
    nrm = np.linalg.norm(amp)
    amp /= nrm

    # residual in the enlarged space
    big = n_max + 2
    embedded = np.zeros((big + 1,) * 3, complex)
    embedded[: n_max + 1, : n_max + 1, : n_max + 1] = amp
    ops_big = build_operators(big)
    vec = embedded.reshape(-1)
    res2 = 0.0
    for m in (+1, 0, -1):
        cond = paired_mode_operator(ops_big, m, 1.0, -((-1) ** m) * C)
        res2 += float(np.linalg.norm(cond @ vec) ** 2)
    return FockState(n_max=n_max, amp=amp, C=C,
                     norm_constant=float(1.0 / nrm),
                     residual=math.sqrt(res2))


@dataclass(frozen=True)
class SingletReport:
    """Angular-momentum diagnostics of a three-mode state."""

    norm_Lz: float
    norm_L2_guarded: float
    n_total: float
    occupancy: tuple           # (<n_+1>, <n_0>, <n_-1>)
    L_expectation: tuple       # (<Lx>, <Ly>, <Lz>)
    guard_band: int


def verify_singlet(state: FockState, guard_band: int = 2) -> SingletReport:
    """|| Lz psi ||, guarded || L^2 psi ||, <N_tot>, per-m occupancies, <L>.

    The L^2 residual is restricted to total-photon-number sectors at least
    ``guard_band`` quanta below the cutoff, where the truncated operator
    algebra is exact (L^2 conserves total photon number).
    """
    nrm = state.norm()
    if abs(nrm - 1.0) > 1e-10:
        raise PreconditionError(f"state not normalized (norm = {nrm!r})")
    ops = build_operators(state.n_max)
    v = state.vector()
    dim = state.n_max + 1
    occ = np.indices((dim, dim, dim)).reshape(3, -1)
    total = occ.sum(axis=0)
    # interior sectors: every state of a total-N sector fits under the cutoff
    guard = total <= state.n_max - guard_band

    lz_v = ops.Lz @ v
    l2_v = ops.L2 @ v
    occ_exp = tuple(float(np.real(np.vdot(v, ops.number[m] @ v))) for m in (+1, 0, -1))
    l_exp = tuple(
        float(abs(np.vdot(v, op @ v)))
        for op in (ops.Lx(), ops.Ly(), ops.Lz)
    )
    return SingletReport(
        norm_Lz=float(np.linalg.norm(lz_v)),
        norm_L2_guarded=float(np.linalg.norm(l2_v[guard])),
        n_total=float(np.real(np.vdot(v, ops.Ntot @ v))),
        occupancy=occ_exp,
        L_expectation=l_exp,
        guard_band=guard_band,
    )
