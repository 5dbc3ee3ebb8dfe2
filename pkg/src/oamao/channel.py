"""First-order turbulence + adaptive-optics channel on the LG basis.

The ensemble-averaged map is assembled from the closed-form kernels as

    A(rho) = rho + sum_{k,k~} c_{kk~} X_k rho X_k~^+ - (Q rho + rho Q^+) / 2

where X_k holds the matrix elements of one reduced Zernike function between
output and input LG states, Q those of the covariance-weighted product
sum_{k,k~} c_{kk~} Z_k Z_k~, and c_{kk~} the coefficient covariance.  This is
the same sum over angular tables times radial kernels that
:func:`superop_element` evaluates element by element.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize

from . import kernel
from .kernel import DimensionlessGeometry, RadialKernel, TermIndices
from .oam import OamLabel, label_grid, lg_norm
from .turbulence import covariance_matrix
from .zernike import ZernikeMode, residual_modes, splits_azimuthal_pair

log = logging.getLogger(__name__)

__all__ = [
    "ChannelParams",
    "SuperoperatorMatrix",
    "DensityMatrix",
    "ChoiMatrix",
    "KrausSet",
    "FidelityResult",
    "NegativeMassError",
    "superop_element",
    "assemble",
    "apply",
    "choi",
    "kraus_decompose",
    "state_fidelity",
    "min_channel_fidelity",
    "transition_probability",
]

DEFAULT_N_MAX = 20
MAX_ELEMENTS = 60_000_000


class NegativeMassError(ArithmeticError):
    """The Choi matrix carries more negative eigenvalue mass than allowed."""


@dataclass(frozen=True)
class ChannelParams:
    geom: DimensionlessGeometry
    J: int
    n_max: int = DEFAULT_N_MAX
    L_in: int = 3
    P_in: int = 6
    L_out: int = 6
    P_out: int = 6

    def __post_init__(self):
        if self.J < 1:
            raise ValueError("the analytic map needs J >= 1")
        if min(self.L_in, self.P_in) < 0:
            raise ValueError("truncation indices must be nonnegative")
        if self.L_out < self.L_in or self.P_out < self.P_in:
            raise ValueError("output truncation must contain the input truncation")
        if not self.modes:
            raise ValueError(f"n_max={self.n_max} leaves no residual modes above J={self.J}")

    @classmethod
    def from_ratios(cls, R_over_w, w_over_r0, z_over_zR, J, **kw):
        return cls(DimensionlessGeometry.from_ratios(R_over_w, w_over_r0, z_over_zR), J, **kw)

    @cached_property
    def modes(self) -> list[ZernikeMode]:
        return residual_modes(self.J, self.n_max)

    @cached_property
    def in_labels(self) -> list[OamLabel]:
        return label_grid(self.L_in, self.P_in)

    @cached_property
    def out_labels(self) -> list[OamLabel]:
        return label_grid(self.L_out, self.P_out)

    @property
    def pair_complete(self) -> bool:
        return splits_azimuthal_pair(self.J) is None

    def replace(self, **changes) -> "ChannelParams":
        fields = dict(geom=self.geom, J=self.J, n_max=self.n_max, L_in=self.L_in,
                      P_in=self.P_in, L_out=self.L_out, P_out=self.P_out)
        fields.update(changes)
        return ChannelParams(**fields)


def _flat4(x) -> tuple:
    return tuple(int(v) for part in x for v in ((part.l, part.p) if isinstance(part, OamLabel) else (part,)))


def _index(labels):
    return {lab: i for i, lab in enumerate(labels)}


@dataclass
class SuperoperatorMatrix:
    """Dense matrix A[(o, o'), (i, i')] of the channel in row-major vec convention."""

    data: np.ndarray
    in_labels: list[OamLabel]
    out_labels: list[OamLabel]
    params: ChannelParams | None = None

    @property
    def d_in(self) -> int:
        return len(self.in_labels)

    @property
    def d_out(self) -> int:
        return len(self.out_labels)

    @cached_property
    def in_index(self):
        return _index(self.in_labels)

    @cached_property
    def out_index(self):
        return _index(self.out_labels)

    def offset_out(self, o, op) -> int:
        return self.out_index[OamLabel(*o)] * self.d_out + self.out_index[OamLabel(*op)]

    def offset_in(self, i, ip) -> int:
        return self.in_index[OamLabel(*i)] * self.d_in + self.in_index[OamLabel(*ip)]

    def labels_of_out(self, offset: int) -> tuple[OamLabel, OamLabel]:
        return self.out_labels[offset // self.d_out], self.out_labels[offset % self.d_out]

    def labels_of_in(self, offset: int) -> tuple[OamLabel, OamLabel]:
        return self.in_labels[offset // self.d_in], self.in_labels[offset % self.d_in]

    def element(self, out, inp) -> complex:
        """A at out = (l~,p~,l~',p~'), inp = (l,p,l',p'); label pairs are accepted too."""
        out, inp = _flat4(out), _flat4(inp)
        return complex(self.data[self.offset_out(out[:2], out[2:]), self.offset_in(inp[:2], inp[2:])])

    def tensor(self) -> np.ndarray:
        """View as A[o, o', i, i']."""
        return self.data.reshape(self.d_out, self.d_out, self.d_in, self.d_in)

    @cached_property
    def in_rows(self) -> np.ndarray:
        """Row offsets of output pairs lying in the input truncation, in input order."""
        pos = np.array([self.out_index[lab] for lab in self.in_labels])
        return (pos[:, None] * self.d_out + pos[None, :]).ravel()


# ------------------------------------------------------------- assembly


def _check_labels(labels, allowed, what):
    for lab in labels:
        if OamLabel(*lab) not in allowed:
            raise ValueError(f"{what} label {tuple(lab)} lies outside the truncation")


def superop_element(out, inp, params: ChannelParams) -> complex:
    """One matrix element from the closed-form term sum.

    ``out`` = (l~, p~, l~', p~') and ``inp`` = (l, p, l', p').  Mode pairs
    whose angular integrals all vanish are skipped before any radial sum.
    """
    lt, pt, ltp, ptp = out
    l, p, lp, pp = inp
    _check_labels([(lt, pt), (ltp, ptp)], set(params.out_labels), "output")
    _check_labels([(l, p), (lp, pp)], set(params.in_labels), "input")
    Rw = params.geom.R_over_w
    gouy = params.geom.gouy
    identity = float((l, p, lp, pp) == (lt, pt, ltp, ptp))
    terms = []
    for mk in params.modes:
        for mt in params.modes:
            if mk.m != mt.m or mk.n + mt.n < 2:
                continue
            m = mk.m
            f1 = kernel.angular_F("F1", l, lp, lt, ltp, m) if pp == ptp else 0.0
            f23 = kernel.angular_F("F23", l, lp, lt, ltp, m)
            f4 = kernel.angular_F("F4", l, lp, lt, ltp, m) if p == pt else 0.0
            if not (f1 or f23 or f4):
                continue
            t = TermIndices.build(((l, p), (lp, pp)), ((lt, pt), (ltp, ptp)), (mk, mt))
            C = kernel.term_constant_C(t, params.geom, gouy)
            acc = 0.0
            if f1:
                acc += f1 * kernel.radial_G1(l, p, lt, pt, mk, mt, Rw) / lg_norm(lp, pp) ** 2
            if f23:
                acc -= f23 * kernel.radial_G2(l, p, lp, pp, lt, pt, ltp, ptp, mk, mt, Rw)
                acc -= f23 * kernel.radial_G3(l, p, lp, pp, lt, pt, ltp, ptp, mk, mt, Rw)
            if f4:
                acc += f4 * kernel.radial_G4(lp, pp, ltp, ptp, mk, mt, Rw) / lg_norm(l, p) ** 2
            terms.append(C * acc)
    pert = complex(math.fsum(t.real for t in terms), math.fsum(t.imag for t in terms))
    return identity - pert / (8 * math.pi**2)


def _operator_factors(params: ChannelParams):
    """Single-mode matrices X_k (K, d_out, d_in) and the product matrix Q (d_out, d_in)."""
    out_labels, in_labels = params.out_labels, params.in_labels
    modes = params.modes
    rk = RadialKernel(params.geom.R_over_w)
    gouy = params.geom.gouy

    rad_pairs = sorted({(abs(o.l), o.p, abs(i.l), i.p) for o in out_labels for i in in_labels})
    rad_index = _index(rad_pairs)
    pair_of = np.array([[rad_index[(abs(o.l), o.p, abs(i.l), i.p)] for i in in_labels] for o in out_labels])
    dl = np.array([[i.l - o.l for i in in_labels] for o in out_labels])
    amp = np.array([[lg_norm(*o) * lg_norm(*i) for i in in_labels] for o in out_labels])
    expo = np.array([[2 * i.p + abs(i.l) - 2 * o.p - abs(o.l) for i in in_labels] for o in out_labels])
    base = amp * np.exp(1j * gouy * expo)

    radial_modes = sorted({(mk.n, mk.m_abs) for mk in modes})
    single = rk.single_table(rad_pairs, radial_modes)
    rm_index = _index(radial_modes)

    X = np.zeros((len(modes), len(out_labels), len(in_labels)), dtype=complex)
    for a, mk in enumerate(modes):
        ang = np.vectorize(lambda d, m=mk.m: kernel.angular_single(m, d), otypes=[complex])(dl)
        X[a] = mk.norm * ang * base * single[pair_of, rm_index[(mk.n, mk.m_abs)]]

    cov = covariance_matrix(modes, params.geom.R_over_r0)
    triples = sorted({(mk.n, mt.n, mk.m_abs) for mk in modes for mt in modes if mk.m == mt.m})
    tr_index = _index(triples)
    prod = rk.pair_table(rad_pairs, triples)
    Q = np.zeros((len(out_labels), len(in_labels)), dtype=complex)
    by_m: dict[int, list[int]] = {}
    for a, mk in enumerate(modes):
        by_m.setdefault(mk.m, []).append(a)
    for m, idx in by_m.items():
        ang = np.vectorize(lambda d: kernel.angular_square(m, d))(dl)
        radial = np.zeros(dl.shape)
        for a in idx:
            for b in idx:
                mk, mt = modes[a], modes[b]
                radial += cov[a, b] * mk.norm * mt.norm * prod[pair_of, tr_index[(mk.n, mt.n, mk.m_abs)]]
        Q += ang * base * radial
    return X, cov, Q


def assemble(params: ChannelParams) -> SuperoperatorMatrix:
    """Dense superoperator for the given channel parameters."""
    do, di = len(params.out_labels), len(params.in_labels)
    if (do * di) ** 2 > MAX_ELEMENTS:
        raise MemoryError(f"superoperator with {(do * di) ** 2} elements exceeds the cap {MAX_ELEMENTS}")
    if not params.pair_complete:
        n, m = splits_azimuthal_pair(params.J)
        log.warning("J=%d splits the (n=%d, m=+-%d) pair; OAM selection rule will not hold", params.J, n, m)
    X, cov, Q = _operator_factors(params)
    K = len(params.modes)
    Y = np.tensordot(cov, X, axes=(1, 0))
    # jump term sum_k X_k (x) conj(Y_k), accumulated as one matrix product
    jump = X.reshape(K, do * di).T @ Y.reshape(K, do * di).conj()
    data = jump.reshape(do, di, do, di).transpose(0, 2, 1, 3).reshape(do * do, di * di)
    del jump
    P = np.zeros((do, di))
    pos = _index(params.out_labels)
    for i, lab in enumerate(params.in_labels):
        P[pos[lab], i] = 1.0
    tensor = data.reshape(do, do, di, di)
    tensor += np.einsum("ai,bj->abij", P - 0.5 * Q, P)
    tensor -= 0.5 * np.einsum("ai,bj->abij", P, Q.conj())
    return SuperoperatorMatrix(data, list(params.in_labels), list(params.out_labels), params)


# ------------------------------------------------------------ densities


@dataclass
class DensityMatrix:
    """Density matrix on a labelled LG basis."""

    data: np.ndarray
    labels: list[OamLabel]
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        self.labels = [OamLabel(*x) for x in self.labels]
        if self.data.shape != (len(self.labels),) * 2:
            raise ValueError("density matrix shape does not match its labels")
        if self.check:
            self.validate()

    def validate(self, tol: float = 1e-12):
        if np.max(np.abs(self.data - self.data.conj().T), initial=0.0) > 1e-10:
            raise ValueError("density matrix is not Hermitian")
        tr = self.trace
        if not 0 < tr <= 1 + 1e-10:
            raise ValueError(f"density matrix trace {tr} outside (0, 1]")
        if np.linalg.eigvalsh(self.data).min() < -tol:
            raise ValueError("density matrix has negative eigenvalues")

    @property
    def trace(self) -> float:
        return float(np.trace(self.data).real)

    @classmethod
    def pure(cls, labels, vec):
        vec = np.asarray(vec, dtype=complex)
        vec = vec / np.linalg.norm(vec)
        return cls(np.outer(vec, vec.conj()), labels)

    @classmethod
    def basis(cls, labels, label):
        labels = [OamLabel(*x) for x in labels]
        vec = np.zeros(len(labels))
        vec[labels.index(OamLabel(*label))] = 1.0
        return cls.pure(labels, vec)

    def element(self, a, b) -> complex:
        idx = _index(self.labels)
        return complex(self.data[idx[OamLabel(*a)], idx[OamLabel(*b)]])


def apply(A: SuperoperatorMatrix, rho) -> DensityMatrix:
    """Channel output for an input density matrix on (a subset of) the input basis."""
    if isinstance(rho, DensityMatrix):
        if rho.labels != A.in_labels:
            missing = [lab for lab in rho.labels if lab not in A.in_index]
            if missing:
                raise ValueError(f"input labels {missing} lie outside the channel's input basis")
            full = np.zeros((A.d_in, A.d_in), dtype=complex)
            pos = [A.in_index[lab] for lab in rho.labels]
            full[np.ix_(pos, pos)] = rho.data
            mat = full
        else:
            mat = rho.data
    else:
        mat = np.asarray(rho, dtype=complex)
        if mat.shape != (A.d_in, A.d_in):
            raise ValueError("input matrix does not match the channel's input dimension")
    out = (A.data @ mat.ravel()).reshape(A.d_out, A.d_out)
    dev = np.max(np.abs(out - out.conj().T), initial=0.0)
    if dev > 1e-10:
        raise ArithmeticError(f"channel output deviates from Hermitian by {dev:.3e}")
    if dev:
        log.debug("symmetrized channel output (deviation %.3e)", dev)
    return DensityMatrix(0.5 * (out + out.conj().T), list(A.out_labels), check=False)


def transition_probability(A: SuperoperatorMatrix, inp, out) -> float:
    """<out| A(|in><in|) |out>, clamped to [0, 1]."""
    inp, out = OamLabel(*inp), OamLabel(*out)
    if inp not in A.in_index:
        raise ValueError(f"input label {tuple(inp)} outside the truncation")
    if out not in A.out_index:
        raise ValueError(f"output label {tuple(out)} outside the truncation")
    val = A.data[A.offset_out(out, out), A.offset_in(inp, inp)].real
    clamped = min(max(val, 0.0), 1.0)
    if clamped != val:
        if not -1e-10 <= val <= 1 + 1e-10:
            log.warning("transition probability %s -> %s = %.3e clamped", inp, out, val)
        else:
            log.debug("transition probability %s -> %s = %.3e clamped", inp, out, val)
    return float(clamped)


# ----------------------------------------------------------- Choi / Kraus


@dataclass
class ChoiMatrix:
    """Choi matrix sum_{i,i'} |i><i'| (x) A(|i><i'|), ordered (input, output)."""

    matrix: np.ndarray
    in_labels: list[OamLabel]
    out_labels: list[OamLabel]

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    @cached_property
    def delta_l(self) -> np.ndarray:
        """l_out - l_in for every row of the Choi matrix."""
        return np.array([o.l - i.l for i in self.in_labels for o in self.out_labels])

    @cached_property
    def block_diagonal(self) -> bool:
        """True when the matrix has no weight between different l_out - l_in sectors."""
        mask = self.delta_l[:, None] != self.delta_l[None, :]
        scale = np.max(np.abs(self.matrix))
        return bool(np.max(np.abs(self.matrix[mask]), initial=0.0) <= 1e-13 * scale)

    @cached_property
    def eig(self):
        """(eigenvalues descending, eigenvectors, sector of each eigenvalue or None)."""
        if self.block_diagonal:
            vals, vecs, sectors = [], [], []
            n = self.matrix.shape[0]
            for d in np.unique(self.delta_l):
                idx = np.flatnonzero(self.delta_l == d)
                w, v = np.linalg.eigh(self.matrix[np.ix_(idx, idx)])
                full = np.zeros((n, len(w)), dtype=complex)
                full[idx] = v
                vals.append(w)
                vecs.append(full)
                sectors.extend([int(d)] * len(w))
            w = np.concatenate(vals)
            v = np.concatenate(vecs, axis=1)
            sectors = np.array(sectors)
        else:
            w, v = np.linalg.eigh(self.matrix)
            sectors = np.array([None] * len(w))
        order = np.argsort(-w, kind="stable")
        return w[order], v[:, order], sectors[order]

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.eig[0]


def choi(A: SuperoperatorMatrix) -> ChoiMatrix:
    """Choi matrix of the assembled map, Hermitized."""
    do, di = A.d_out, A.d_in
    mat = A.tensor().transpose(2, 0, 3, 1).reshape(di * do, di * do)
    mat = 0.5 * (mat + mat.conj().T)
    return ChoiMatrix(mat, list(A.in_labels), list(A.out_labels))


@dataclass
class KrausSet:
    """Weighted Kraus operators, A(rho) = sum_j weight_j K_j rho K_j^+."""

    weights: np.ndarray
    operators: np.ndarray
    in_labels: list[OamLabel]
    out_labels: list[OamLabel]
    clipped_mass: float = 0.0
    delta_l: list = field(default_factory=list)

    def __len__(self):
        return len(self.weights)

    def completeness(self) -> np.ndarray:
        """sum_j weight_j K_j^+ K_j; bounded by the identity up to truncation loss."""
        return np.einsum("j,joa,job->ab", self.weights, self.operators.conj(), self.operators)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        return np.einsum("j,joa,ab,jpb->op", self.weights, self.operators, rho, self.operators.conj())


def kraus_decompose(ch: ChoiMatrix, neg_tol: float = 1e-10, ceiling: float = 1e-3) -> KrausSet:
    """Kraus operators from the Choi eigendecomposition.

    Eigenvalues smaller than ``neg_tol * trace`` in magnitude are dropped.
    Larger negative ones are clipped to zero; if their total mass exceeds
    ``ceiling * trace`` the first-order map is not close enough to a channel
    and :class:`NegativeMassError` is raised.
    """
    w, v, sectors = ch.eig
    trace = float(w.sum())
    negative = w < -neg_tol * trace
    clipped = float(-w[negative].sum())
    if clipped > ceiling * trace:
        raise NegativeMassError(
            f"negative Choi mass {clipped:.3e} exceeds {ceiling:g} of the trace {trace:.3e}"
        )
    if clipped:
        log.info("clipped negative Choi mass %.3e (%d eigenvalues)", clipped, int(negative.sum()))
    keep = w > neg_tol * trace
    di, do = len(ch.in_labels), len(ch.out_labels)
    ops = v[:, keep].T.reshape(-1, di, do).transpose(0, 2, 1)
    return KrausSet(w[keep], np.ascontiguousarray(ops), list(ch.in_labels), list(ch.out_labels),
                    clipped, list(sectors[keep]))


# ------------------------------------------------------------- fidelity


def _psd_eigvals(mat, tol):
    w, v = np.linalg.eigh(0.5 * (mat + mat.conj().T))
    if w.min() < -tol:
        raise ValueError(f"matrix is not positive semidefinite (eigenvalue {w.min():.3e})")
    # roundoff-level eigenvalues would otherwise contribute their square roots
    w = np.where(w > 1e-13 * max(w.max(), 0.0), w, 0.0)
    return w, v


def _psd_sqrt(mat, tol):
    w, v = _psd_eigvals(mat, tol)
    return (v * np.sqrt(w)) @ v.conj().T


def state_fidelity(rho, sigma, tol: float = 1e-9) -> float:
    """Tr sqrt(sqrt(rho) sigma sqrt(rho)); a 1-d ``rho`` is treated as a pure state."""
    if isinstance(rho, DensityMatrix):
        rho = rho.data
    if isinstance(sigma, DensityMatrix):
        sigma = sigma.data
    rho = np.asarray(rho, dtype=complex)
    sigma = np.asarray(sigma, dtype=complex)
    if rho.ndim == 1:
        psi = rho / np.linalg.norm(rho)
        val = np.vdot(psi, sigma @ psi).real
        if val < -tol:
            raise ValueError("sigma is not positive semidefinite")
        return float(min(math.sqrt(max(val, 0.0)), 1.0))
    root = _psd_sqrt(rho, tol)
    _psd_eigvals(sigma, tol)
    w, _ = _psd_eigvals(root @ sigma @ root, tol)
    return float(min(np.sqrt(w).sum(), 1.0))


@dataclass
class FidelityResult:
    F_min: float
    state: np.ndarray
    labels: list[OamLabel]
    n_starts: int
    n_converged: int
    n_evaluations: int

    def leading_components(self, count: int = 3) -> list[tuple[OamLabel, complex]]:
        order = np.argsort(-np.abs(self.state), kind="stable")[:count]
        return [(self.labels[i], complex(self.state[i])) for i in order]


def _fidelity_objective(B: sp.csr_matrix, BH: sp.csr_matrix, d: int):
    def fun(x):
        psi = x[:d] + 1j * x[d:]
        nrm = float(np.vdot(psi, psi).real)
        rho = np.outer(psi, psi.conj()).ravel()
        out = B @ rho
        f = float(np.vdot(rho, out).real)
        G = (out + BH @ rho).reshape(d, d)
        G = 0.5 * (G + G.conj().T)
        g_psi = 2 * (G @ psi)
        grad = np.concatenate([g_psi.real, g_psi.imag]) / nrm**2 - 4 * f * x / nrm**3
        return f / nrm**2, grad

    return fun


def _canonical_phase(psi):
    psi = psi / np.linalg.norm(psi)
    lead = psi[np.argmax(np.abs(psi))]
    return psi * (abs(lead) / lead)


def min_channel_fidelity(A: SuperoperatorMatrix, n_starts: int = 64, seed: int = 0,
                         tol: float = 1e-8, max_iter: int = 2000) -> FidelityResult:
    """Minimum over pure inputs of F(|psi>, A(|psi><psi|)).

    Multi-start quasi-Newton descent of <psi|A(psi psi^+)|psi> / |psi|^4 from
    complex Gaussian starts, plus a polish from the worst input basis state.
    """
    d = A.d_in
    block = A.data[A.in_rows]
    B = sp.csr_matrix(np.where(np.abs(block) > 0, block, 0))
    BH = B.conj().T.tocsr()
    fun = _fidelity_objective(B, BH, d)
    rng = np.random.default_rng(seed)

    diag = np.array([block[i * d + i, i * d + i].real for i in range(d)])
    starts = [rng.normal(size=2 * d) for _ in range(n_starts)]
    basis_start = np.zeros(2 * d)
    basis_start[int(np.argmin(diag))] = 1.0
    starts.append(basis_start)

    best_val, best_x = math.inf, None
    converged = evaluations = 0
    for x0 in starts:
        res = minimize(fun, x0, jac=True, method="L-BFGS-B",
                       options=dict(maxiter=max_iter, ftol=tol * 1e-2, gtol=1e-10))
        evaluations += res.nfev
        if res.success:
            converged += 1
        else:
            log.info("fidelity start did not converge: %s", res.message)
        if res.fun < best_val:
            best_val, best_x = float(res.fun), res.x
    psi = _canonical_phase(best_x[:d] + 1j * best_x[d:])
    F = math.sqrt(min(max(best_val, 0.0), 1.0))
    return FidelityResult(F, psi, list(A.in_labels), len(starts), converged, evaluations)
