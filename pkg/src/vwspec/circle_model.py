"""Dirac-type operators on R/(ell Z) x R^3 built from a loop of invertible matrices.

Spectrum route
--------------
Write M(s) = P(s) O(s) (left polar decomposition, P symmetric positive,
O = eps O+ with eps = sign det M). A spin lift T(s) of O+(s), generated by
K_a = 1/2 eps_abc rho_b rho_c, satisfies T rho_l T^-1 = sum_k O+_lk rho_k and
commutes with every gamma and with Gamma. Conjugating by T turns

    gamma_s d/ds + sum gamma_k d_k + sqrt2 i R x^T M rho

into gamma_s (d/ds + A) + sum gamma_k d_k + sqrt2 i R eps x^T P rho with
A = T^-1 dT/ds. The fields in this frame are periodic or antiperiodic depending
on T(ell) = +-T(0). The x-dependence is expanded in the oscillator basis of
the averaged P, the s-dependence in Fourier modes; s-dependent coefficients
become Toeplitz blocks.

Holonomy route
--------------
Independently, the kernel of the fiber operator at each sample s is computed
in its own oscillator basis; the Wilson loop of the kernel spinors gives the
holonomy of the kernel line bundle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh
from scipy.spatial.transform import Rotation

from .clifford import CliffordRep, build_clifford_rep
from .flow_engine import start_vector
from .oscillator import (
    SQRT2,
    OscBasisSpec,
    TruncatedOperator,
    TruncationError,
    build_D0,
    d0_kernel,
    d0_spectrum_closedform,
    gaussian_decay_fit,
    hermite_functions,
    m_triples_shell,
)

KAPPA_B = 10.0  # size cap sup(|B| + |C|) < R / KAPPA_B
KAPPA_WINDOW = 2.0  # band <= sqrt(R) / KAPPA_WINDOW; eigenvector overlap >= 1 - KAPPA_WINDOW / R
DROP = 1e-13


def frac(x: float) -> float:
    """x mod 1 in [0, 1), with values within 1e-9 of 1 mapped to 0."""
    f = float(x) % 1.0
    return 0.0 if f > 1 - 1e-9 else f


def circular_distance(a: float, b: float) -> float:
    d = (a - b) % 1.0
    return min(d, 1.0 - d)


class LoopError(ValueError):
    pass


class KernelIsolationError(RuntimeError):
    pass


class ConvergenceError(RuntimeError):
    pass


class LatticeFitError(RuntimeError):
    pass


# ---------------------------------------------------------------- loops


def _rot_z(theta):
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass
class MatrixLoop:
    ell: float
    M: Callable[[float], np.ndarray]
    dM: Callable[[float], np.ndarray] | None = None
    description: str = ""
    check_samples: int = 256

    def __post_init__(self):
        if not self.ell > 0:
            raise LoopError("ell must be positive")
        s = np.linspace(0, self.ell, self.check_samples, endpoint=False)
        dets = np.array([np.linalg.det(self.at(x)) for x in s])
        if np.any(np.abs(dets) < 1e-12):
            raise LoopError("M(s) is singular at a sample point")
        if np.any(np.sign(dets) != np.sign(dets[0])):
            raise LoopError("det M changes sign along the loop")
        if np.abs(self._raw(0.0) - self._raw(self.ell)).max() > 1e-10:
            raise LoopError("M is not periodic: M(0) and M(ell) differ")

    def _raw(self, s):
        m = np.asarray(self.M(float(s)), float)
        if m.shape != (3, 3):
            raise LoopError("M(s) must be 3x3")
        return m

    def at(self, s):
        return self._raw(float(s) % self.ell)

    def deriv(self, s):
        s = float(s) % self.ell
        if self.dM is not None:
            return np.asarray(self.dM(s), float)
        h = 1e-4 * self.ell
        # fourth-order central difference
        return (-self._raw(s + 2 * h) + 8 * self._raw(s + h) - 8 * self._raw(s - h) + self._raw(s - 2 * h)) / (12 * h)

    @property
    def sign(self) -> int:
        return 1 if np.linalg.det(self.at(0.0)) > 0 else -1

    def is_constant(self, n=64, tol=1e-12) -> bool:
        m0 = self.at(0.0)
        return all(np.abs(self.at(x) - m0).max() < tol for x in np.linspace(0, self.ell, n, endpoint=False))

    @staticmethod
    def constant(M, ell: float) -> "MatrixLoop":
        M = np.array(M, float)
        return MatrixLoop(ell, lambda s: M, lambda s: np.zeros((3, 3)), "constant")

    @staticmethod
    def rotation(ell: float, sign: int = 1) -> "MatrixLoop":
        """M(s) = sign * rotation about x3 by 2 pi s / ell."""
        w = 2 * math.pi / ell
        sg = 1.0 if sign > 0 else -1.0

        def dm(s):
            c, si = math.cos(w * s), math.sin(w * s)
            return sg * w * np.array([[-si, -c, 0.0], [c, -si, 0.0], [0.0, 0.0, 0.0]])

        return MatrixLoop(ell, lambda s: sg * _rot_z(w * s), dm, f"rotation (sign {int(sg):+d})")

    @staticmethod
    def random_smooth(seed: int, ell: float, amplitude: float = 0.1, harmonics: int = 2, winding: int = 0,
                      sign: int = 1) -> "MatrixLoop":
        """sign * Rz(2 pi winding s/ell) O0 (I + E(s)), E a random trigonometric polynomial with |E| <= amplitude."""
        rng = np.random.default_rng(seed)
        O0 = Rotation.random(random_state=rng.integers(2**31)).as_matrix()
        coef = rng.normal(size=(harmonics, 2, 3, 3))
        norm = sum(np.linalg.norm(coef[h, 0], 2) + np.linalg.norm(coef[h, 1], 2) for h in range(harmonics))
        coef *= amplitude / norm
        w = 2 * math.pi / ell
        sg = 1.0 if sign > 0 else -1.0

        def E(s):
            return sum(coef[h, 0] * math.cos((h + 1) * w * s) + coef[h, 1] * math.sin((h + 1) * w * s)
                       for h in range(harmonics))

        def dE(s):
            return sum((h + 1) * w * (-coef[h, 0] * math.sin((h + 1) * w * s) + coef[h, 1] * math.cos((h + 1) * w * s))
                       for h in range(harmonics))

        def M(s):
            return sg * _rot_z(winding * w * s) @ O0 @ (np.eye(3) + E(s))

        def dM(s):
            R = _rot_z(winding * w * s)
            dR = winding * w * np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]) @ R
            return sg * (dR @ O0 @ (np.eye(3) + E(s)) + R @ O0 @ dE(s))

        return MatrixLoop(ell, M, dM, f"random smooth (seed {seed}, amplitude {amplitude}, winding {winding})")

    @staticmethod
    def from_samples(ell: float, mats) -> "MatrixLoop":
        """Trigonometric interpolation of equally spaced samples on [0, ell)."""
        A = np.asarray(mats, float)
        if A.ndim != 3 or A.shape[1:] != (3, 3):
            raise LoopError("samples must have shape (n, 3, 3)")
        n = len(A)
        C = np.fft.fft(A, axis=0) / n
        p = np.fft.fftfreq(n, d=1.0 / n)
        if n % 2 == 0:
            C[n // 2] *= 0.5  # split the Nyquist term symmetrically
            C = np.concatenate([C, C[n // 2:n // 2 + 1]])
            p = np.concatenate([p, [n // 2]])
            p[n // 2] = -n // 2
        w = 2 * math.pi / ell

        def M(s):
            e = np.exp(1j * w * p * s)
            return np.real(np.tensordot(e, C, axes=(0, 0)))

        def dM(s):
            e = 1j * w * p * np.exp(1j * w * p * s)
            return np.real(np.tensordot(e, C, axes=(0, 0)))

        return MatrixLoop(ell, M, dM, f"sampled ({n} points)")


def _chi(u):
    """C^2 step: 1 on (-inf, 1/4], 0 on [3/4, inf)."""
    t = np.clip((np.asarray(u, float) - 0.25) / 0.5, 0.0, 1.0)
    return 1.0 - t**3 * (10 - 15 * t + 6 * t * t)


@dataclass
class PerturbationData:
    Mvec: Callable | None = None  # s -> R^3
    W: Callable | None = None  # s -> antisymmetric 3x3
    B: Callable | None = None  # s -> R^3
    C: Callable | None = None  # s -> R^3
    b0: float = 0.0
    q: float = 0.0
    r0: float | None = None  # cutoff radius; None drops the cutoff

    def validate(self, ell: float, R: float, n=128):
        if abs(self.q) > 1:
            raise ValueError("|q| must be at most 1")
        if not (0 <= self.b0 < 2 * math.pi / ell):
            raise ValueError("b0 must lie in [0, 2 pi / ell)")
        s = np.linspace(0, ell, n, endpoint=False)
        f = lambda g, shape: np.array([np.asarray(g(x), float) for x in s]) if g is not None else np.zeros((n,) + shape)
        Mv, W, B, C = f(self.Mvec, (3,)), f(self.W, (3, 3)), f(self.B, (3,)), f(self.C, (3,))
        if np.abs(W + np.transpose(W, (0, 2, 1))).max() > 1e-12:
            raise ValueError("W must be antisymmetric")
        if self.r0 is not None:
            size = np.max(np.linalg.norm(Mv, axis=1)) + np.max(np.linalg.norm(W, axis=(1, 2)))
            if not self.r0 > 0 or self.r0 * size >= 1e-4:
                raise ValueError("cutoff radius violates r0 (|M| + |W|) < 1/10000")
        bc = np.max(np.linalg.norm(B, axis=1) + np.linalg.norm(C, axis=1))
        if bc >= R / KAPPA_B:
            raise ValueError(f"sup(|B| + |C|) = {bc:.3g} is not below R / {KAPPA_B}")

    def chi0(self, x):
        r = np.linalg.norm(np.atleast_2d(x), axis=1)
        if self.r0 is None:
            return np.ones_like(r)
        return _chi(r / self.r0 - 1.0)

    def shifted(self, db0: float, ell: float) -> "PerturbationData":
        b = (self.b0 + db0) % (2 * math.pi / ell)
        return PerturbationData(self.Mvec, self.W, self.B, self.C, b, self.q, self.r0)

    @property
    def is_trivial(self):
        return all(g is None for g in (self.Mvec, self.W, self.B, self.C)) and self.b0 == 0 and self.q == 0


# ---------------------------------------------------------------- spin lift


def _levi():
    e = np.zeros((3, 3, 3))
    for a, b, c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        e[a, b, c], e[a, c, b] = 1.0, -1.0
    return e


_EPS = _levi()
_L = [-_EPS[a] for a in range(3)]  # (L_a)_lk = -eps_alk


@dataclass
class SpinLift:
    K: list  # K_a in C^8
    mu: float

    def algebra_residual(self, rep):
        worst = 0.0
        for a in range(3):
            for l in range(3):
                lhs = self.K[a] @ rep.rho_c[l] - rep.rho_c[l] @ self.K[a]
                rhs = self.mu * sum(_L[a][l, k] * rep.rho_c[k] for k in range(3))
                worst = max(worst, float(np.abs(lhs - rhs).max()))
        return worst

    def lift(self, O):
        theta = Rotation.from_matrix(O).as_rotvec()
        return sla.expm(sum(theta[a] * self.K[a] for a in range(3)) / self.mu)


def spin_lift(rep: CliffordRep) -> SpinLift:
    r = rep.rho_c
    K = [0.5 * sum(_EPS[a, b, c] * r[b] @ r[c] for b in range(3) for c in range(3)) for a in range(3)]
    # [K_a, rho_l] = mu (L_a)_lk rho_k, mu found by least squares
    num = den = 0.0
    for a in range(3):
        for l in range(3):
            lhs = K[a] @ r[l] - r[l] @ K[a]
            base = sum(_L[a][l, k] * r[k] for k in range(3))
            num += np.real(np.vdot(base, lhs))
            den += np.real(np.vdot(base, base))
    sl = SpinLift(K, num / den)
    if sl.algebra_residual(rep) > 1e-12:
        raise RuntimeError("rho bilinears do not realize so(3) on the rho triple")
    return sl


@dataclass
class GaugeData:
    s: np.ndarray
    P: np.ndarray  # (n, 3, 3)
    O: np.ndarray  # O+ samples
    omega: np.ndarray  # (n, 3) with dO+/ds O+^T = sum omega_a L_a
    eps: int
    nu: int  # 0 periodic, 1 antiperiodic in the gauge frame
    T0: np.ndarray
    lift_residual: float


def gauge_data(loop: MatrixLoop, rep: CliffordRep, n: int) -> GaugeData:
    s = np.linspace(0, loop.ell, n, endpoint=False)
    eps = loop.sign
    P = np.empty((n, 3, 3))
    O = np.empty((n, 3, 3))
    om = np.empty((n, 3))
    for i, x in enumerate(s):
        M = loop.at(x)
        U, Pm = sla.polar(M, side="left")  # M = Pm U
        Op = eps * U
        X = loop.deriv(x) @ U.T
        Om = sla.solve_sylvester(Pm, Pm, X - X.T)  # Pm Om + Om Pm = X - X^T
        P[i], O[i] = Pm, Op
        om[i] = (Om[2, 1], Om[0, 2], Om[1, 0])
    sl = spin_lift(rep)
    T0 = sl.lift(O[0])
    # transport T' = T A around the loop on a refined grid (midpoint exponentials)
    fine = 8
    T = T0.copy()
    h = loop.ell / (n * fine)
    for i in range(n * fine):
        x = (i + 0.5) * h
        M = loop.at(x)
        U, Pm = sla.polar(M, side="left")
        X = loop.deriv(x) @ U.T
        Om = sla.solve_sylvester(Pm, Pm, X - X.T)
        w = (Om[2, 1], Om[0, 2], Om[1, 0])
        T = T @ sla.expm(h * sum(w[a] * sl.K[a] for a in range(3)) / sl.mu)
    plus = np.abs(T - T0).max()
    minus = np.abs(T + T0).max()
    res = min(plus, minus)
    if res > 1e-6:
        raise LoopError(f"spin lift does not close (defect {res:.2e})")
    return GaugeData(s, P, O, om, eps, 0 if plus < minus else 1, T0, float(res))


# ---------------------------------------------------------------- fiber operators


class _Scalars:
    """Spin-independent oscillator operators on the distinct level triples of a basis."""

    def __init__(self, basis):
        self.basis = basis
        self.triples, self.tidx = np.unique(basis.levels, axis=0, return_inverse=True)
        self.tidx = self.tidx.ravel()
        self.nt = len(self.triples)
        self.lut = {tuple(t): i for i, t in enumerate(self.triples)}
        self.U = basis.frame
        self.om = basis.omegas

    def _axis(self, k, kind):
        rows, cols, vals = [], [], []
        om = self.om[k]
        root = math.sqrt(2 * om)
        for i, t in enumerate(self.triples):
            n = t[k]
            for step, c in ((-1, root * math.sqrt(n)), (1, root * math.sqrt(n + 1))):
                if c == 0:
                    continue
                u = list(t)
                u[k] += step
                j = self.lut.get(tuple(u))
                if j is None:
                    continue
                v = c / (2 * om) if kind == "y" else (c / 2 if step < 0 else -c / 2)
                rows.append(j)
                cols.append(i)
                vals.append(v)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.nt, self.nt))

    def position(self, j):
        return sum(self.U[j, k] * self._axis(k, "y") for k in range(3))

    def derivative(self, i):
        return sum(self.U[i, k] * self._axis(k, "d") for k in range(3))

    def identity(self):
        return sp.identity(self.nt, format="csr")

    def cutoff_ops(self, pert: PerturbationData):
        """chi0 x_j and chi0 (x_j d_i - x_i d_j) by spherical quadrature on the cutoff ball."""
        r0 = pert.r0
        gl_r, wr_ = np.polynomial.legendre.leggauss(16)
        rs, ws = [], []
        for a, b in ((0.0, 1.25 * r0), (1.25 * r0, 1.75 * r0)):
            rs.append(0.5 * (b - a) * gl_r + 0.5 * (b + a))
            ws.append(0.5 * (b - a) * wr_)
        r = np.concatenate(rs)
        wr = np.concatenate(ws) * r * r
        ct, wt = np.polynomial.legendre.leggauss(12)
        ph = np.linspace(0, 2 * np.pi, 24, endpoint=False)
        wp = np.full(24, 2 * np.pi / 24)
        R_, C_, P_ = np.meshgrid(r, ct, ph, indexing="ij")
        W_ = (wr[:, None, None] * wt[None, :, None] * wp[None, None, :]).ravel()
        st = np.sqrt(1 - C_**2)
        pts = np.stack([R_ * st * np.cos(P_), R_ * st * np.sin(P_), R_ * C_], axis=-1).reshape(-1, 3)
        w = W_ * pert.chi0(pts)
        y = pts @ self.U
        nm = int(self.triples.max()) + 1
        H = [hermite_functions(nm, self.om[k], y[:, k]) for k in range(3)]
        dH = []
        for k in range(3):
            n = np.arange(nm)[:, None]
            root = np.sqrt(2 * self.om[k])
            up = np.vstack([H[k][1:], np.zeros((1, len(y)))])
            lo = np.vstack([np.zeros((1, len(y))), H[k][:-1]])
            dH.append((0.5 * root * (np.sqrt(n) * lo[:nm] - np.sqrt(n + 1) * up[:nm])))
        t = self.triples
        phi = H[0][t[:, 0]] * H[1][t[:, 1]] * H[2][t[:, 2]]
        dy = [dH[0][t[:, 0]] * H[1][t[:, 1]] * H[2][t[:, 2]],
              H[0][t[:, 0]] * dH[1][t[:, 1]] * H[2][t[:, 2]],
              H[0][t[:, 0]] * H[1][t[:, 1]] * dH[2][t[:, 2]]]
        dx = [sum(self.U[i, k] * dy[k] for k in range(3)) for i in range(3)]
        X = [(phi * (w * pts[:, j])) @ phi.T for j in range(3)]
        rot = {}
        for i in range(3):
            for j in range(i + 1, 3):
                S = (phi * (w * pts[:, j])) @ dx[i].T - (phi * (w * pts[:, i])) @ dx[j].T
                rot[(i, j)] = 0.5 * (S - S.T)
        return X, rot


def _lift(basis, sc: _Scalars, S, G8):
    """Matrix of S (on level triples) tensor G8 (C^8) restricted to the basis states."""
    Gs = basis.spin.conj().T @ G8 @ basis.spin
    S = sp.csr_matrix(S)
    N = len(basis)
    rows, cols, vals = [], [], []
    for b in range(8):
        src = basis._by_sigma[b]
        if not len(src):
            continue
        Ssub = S[:, sc.tidx[src]].tocoo()  # (nt, |src|)
        if Ssub.nnz == 0:
            continue
        for a in range(8):
            g = Gs[a, b]
            if abs(g) < 1e-14:
                continue
            tgt_t = sc.triples[Ssub.row]
            tgt = basis.lookup(tgt_t.astype(np.int64), np.full(len(tgt_t), a))
            ok = tgt >= 0
            rows.append(tgt[ok])
            cols.append(src[Ssub.col[ok]])
            vals.append(g * Ssub.data[ok])
    if not rows:
        return sp.csr_matrix((N, N), dtype=complex)
    M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
    M.data[np.abs(M.data) < DROP] = 0
    M.eliminate_zeros()
    return M


def _fourier(values, pmax, tol=1e-11):
    """Coefficients c_p, |p| <= pmax, of samples on a uniform periodic grid; values shape (n, ...)."""
    n = len(values)
    C = np.fft.fft(values, axis=0) / n
    tail = np.abs(C[n // 4: n - n // 4 + 1]).max() if n >= 8 else 0.0
    if tail > tol * (1 + np.abs(C).max()):
        raise TruncationError(f"s-grid too coarse: Fourier tail {tail:.2e}")
    if 2 * pmax >= n // 2:
        raise TruncationError("s-grid too coarse for the Fourier truncation")
    return {p: C[p % n] for p in range(-pmax, pmax + 1)}


def _toeplitz(coef, F, shape_index=()):
    n = 2 * F + 1
    T = np.zeros((n, n), complex)
    for i in range(n):
        for j in range(n):
            c = coef[i - j]
            T[i, j] = c[shape_index] if shape_index != () else c
    T[np.abs(T) < DROP] = 0
    return sp.csr_matrix(T)


@dataclass
class CircleBasis:
    fiber: object  # OscSpinBasis
    F: int
    nu: int
    ell: float
    k: np.ndarray  # Fourier wave numbers

    def __len__(self):
        return (2 * self.F + 1) * len(self.fiber)

    def split(self, vec):
        """(2F+1, fiber) coefficient array of a full vector."""
        return np.asarray(vec).reshape(2 * self.F + 1, len(self.fiber))


def build_D_circle(loop: MatrixLoop, R: float, pert: PerturbationData | None = None, n_max: int = 6,
                   fourier_max: int | None = None, rep: CliffordRep | None = None, band: float | None = None,
                   n_s: int = 128) -> TruncatedOperator:
    """Truncated operator on Fourier modes |n| <= fourier_max times the fiber basis.

    The fiber keeps oscillator blocks with sum_k lambda_k m_k <= n_max * min(lambda)
    for the averaged P; ``fourier_max`` defaults to ceil(band ell / 2 pi) + 8.
    """
    if not R > 0:
        raise ValueError("R must be positive")
    rep = rep or build_clifford_rep()
    if fourier_max is None:
        fourier_max = math.ceil((band or 2 * math.pi / loop.ell) * loop.ell / (2 * math.pi)) + 8
    if fourier_max < 1:
        raise ValueError("fourier_max must be >= 1")
    if pert is not None:
        pert.validate(loop.ell, R)
    F = fourier_max
    while True:
        gd = gauge_data(loop, rep, n_s)
        try:
            Pc = _fourier(gd.P, 2 * F)
            Wc = _fourier(gd.omega, 2 * F)
            break
        except TruncationError:
            if n_s >= 2048:
                raise
            n_s *= 2
    Pbar = np.real(Pc[0])
    eps = gd.eps
    lam = np.linalg.eigvalsh(Pbar)
    m_list = m_triples_shell(lam, n_max * lam.min() + 1e-9)
    fib = build_D0(eps * Pbar, R, rep, m_list=m_list)
    basis = fib.basis
    sc = _Scalars(basis)
    g = rep.gamma_c
    gs = g[3]
    sl = spin_lift(rep)
    nF = 2 * F + 1
    k = 2 * np.pi * (np.arange(-F, F + 1) + 0.5 * gd.nu) / loop.ell
    I_F = sp.identity(nF, format="csr")
    I_t = sc.identity()
    H = sp.kron(I_F, fib.matrix)
    Gs = _lift(basis, sc, I_t, gs)
    H = H + sp.kron(sp.diags(1j * k), Gs)
    # connection term gamma_s A
    for a in range(3):
        coef = {p: Wc[p][a] / sl.mu for p in Wc}
        if max(abs(c) for c in coef.values()) > DROP:
            H = H + sp.kron(_toeplitz(coef, F), _lift(basis, sc, I_t, gs @ sl.K[a]))
    # s-dependence of P around its average
    X = [sc.position(j) for j in range(3)]
    for j in range(3):
        for l in range(3):
            coef = {p: (Pc[p][j, l] - (Pbar[j, l] if p == 0 else 0.0)) for p in Pc}
            if max(abs(c) for c in coef.values()) > DROP:
                H = H + sp.kron(_toeplitz(coef, F), SQRT2 * 1j * R * eps * _lift(basis, sc, X[j], rep.rho_c[l]))
    meta = dict(R=R, ell=loop.ell, F=F, nu=gd.nu, eps=eps, n_max=n_max, lambdas=lam.tolist(),
                lift_residual=gd.lift_residual, loop=loop.description, n_s=n_s)
    if pert is not None and not pert.is_trivial:
        H = H + _perturbation(loop, pert, basis, sc, X, rep, sl, gd, F, k, n_s)
        meta["pert"] = dict(b0=pert.b0, q=pert.q, r0=pert.r0)
    H = H.tocsr()
    cb = CircleBasis(basis, F, gd.nu, loop.ell, k)
    op = TruncatedOperator(H, cb, meta)
    d = op.hermiticity_defect()
    if d > 1e-10:
        raise RuntimeError(f"circle operator not Hermitian (defect {d:.2e})")
    return op


def _samples(fn, s, shape):
    if fn is None:
        return None
    return np.array([np.asarray(fn(x), float).reshape(shape) for x in s])


def _perturbation(loop, pert, basis, sc, X, rep, sl, gd, F, k, n_s):
    g = rep.gamma_c
    gs = g[3]
    s = gd.s
    nF = 2 * F + 1
    I_F = sp.identity(nF, format="csr")
    I_t = sc.identity()
    N = len(basis)
    H = sp.csr_matrix((nF * N, nF * N), dtype=complex)
    if pert.r0 is not None:
        Xc, rot = sc.cutoff_ops(pert)
    else:
        Xc = X
        D = [sc.derivative(i) for i in range(3)]
        rot = {}
        for i in range(3):
            for j in range(i + 1, 3):
                S = (X[j] @ D[i] - X[i] @ D[j]).toarray()
                rot[(i, j)] = 0.5 * (S - S.conj().T)
    Mv = _samples(pert.Mvec, s, (3,))
    if Mv is not None:
        Mc = _fourier(Mv, 2 * F)
        Kk = 0.5j * (k[:, None] + k[None, :])
        for j in range(3):
            Tm = _toeplitz(Mc, F, (j,)).toarray()
            if np.abs(Tm).max() < DROP:
                continue
            # gamma_s (1/2){f, d/ds} with f = 1 - chi0 x.M
            H = H - sp.kron(sp.csr_matrix(Kk * Tm), _lift(basis, sc, Xc[j], gs))
            prod = _fourier(Mv[:, j][:, None] * gd.omega, 2 * F)
            for a in range(3):
                Ta = _toeplitz({p: prod[p][a] / sl.mu for p in prod}, F)
                H = H - sp.kron(Ta, _lift(basis, sc, Xc[j], gs @ sl.K[a]))
    Wv = _samples(pert.W, s, (3, 3))
    if Wv is not None:
        Wc2 = _fourier(Wv, 2 * F)
        for (i, j), S in rot.items():
            T = _toeplitz(Wc2, F, (i, j))
            if T.nnz:
                H = H - sp.kron(T, _lift(basis, sc, S, gs))
    if pert.b0:
        H = H + sp.kron(I_F, 2j * pert.b0 * _lift(basis, sc, I_t, gs))
    Cv = _samples(pert.C, s, (3,))
    if Cv is not None:
        Cc = _fourier(Cv, 2 * F)
        for j in range(3):
            T = _toeplitz(Cc, F, (j,))
            if T.nnz:
                H = H + sp.kron(T, 2j * _lift(basis, sc, X[j], gs))
    Bv = _samples(pert.B, s, (3,))
    if Bv is not None:
        Bc = _fourier(Bv, 2 * F)
        for kk in range(3):
            T = _toeplitz(Bc, F, (kk,))
            if not T.nnz:
                continue
            piece = None
            for i in range(3):
                for j in range(3):
                    e = _EPS[j, i, kk]
                    if e:
                        m = 1j * e * _lift(basis, sc, X[j], g[i])
                        piece = m if piece is None else piece + m
            H = H + sp.kron(T, piece)
    if pert.q:
        H = H - sp.kron(I_F, pert.q * _lift(basis, sc, I_t, rep.Gamma_c))
    return H


# ---------------------------------------------------------------- spectra


@dataclass
class CircleSpectrum:
    values: np.ndarray
    vectors: np.ndarray | None
    residuals: np.ndarray


def circle_spectrum(op: TruncatedOperator, band: float, vectors: bool = False) -> CircleSpectrum:
    """All eigenvalues with |E| <= band (shift-invert Lanczos around a point near zero)."""
    H = sp.csc_matrix(op.matrix)
    ell = op.meta["ell"]
    sigma = 0.0137 * 2 * np.pi / ell
    guess = int(band * ell / np.pi) + 8
    n = H.shape[0]
    v0 = start_vector(n)
    while True:
        k = min(guess, n - 2)
        w, v = eigsh(H, k=k, sigma=sigma, which="LM", v0=v0)
        order = np.argsort(w)
        w, v = w[order], v[:, order]
        inside = np.abs(w) <= band
        covered = np.max(np.abs(w - sigma)) > band + abs(sigma)
        if covered or k >= n - 2:
            break
        guess *= 2
    w, v = w[inside], v[:, inside]
    res = np.linalg.norm(H @ v - v * w[None, :], axis=0)
    return CircleSpectrum(w, v if vectors else None, res)


def separated_prediction(M, R: float, ell: float, band: float, rep=None) -> tuple[np.ndarray, np.ndarray]:
    """Separated-variable eigenvalues for constant M within |E| <= band.

    Returns (values, is_kernel_branch). Kernel branch: -2 pi n / ell (or +, when gamma_s = -i on
    the kernel); other branches: +-sqrt(4 pi^2 n^2 / ell^2 + Ehat^2) with Ehat's multiplicity.
    """
    rep = rep or build_clifford_rep()
    lam = np.linalg.svd(np.asarray(M, float), compute_uv=False)
    cnt = 3
    while True:
        sl = d0_spectrum_closedform(OscBasisSpec(R, tuple(lam), 1), cnt)
        if np.max(np.abs(sl.eigenvalues)) > band or cnt > 2000:
            break
        cnt = 2 * cnt + 1
    vals, kern = [], []
    nmax = int(band * ell / (2 * np.pi)) + 1
    for E, mu in zip(sl.eigenvalues, sl.multiplicities):
        if E < 0:
            continue
        for n in range(-nmax, nmax + 1):
            kn = 2 * np.pi * n / ell
            if E == 0:
                if abs(kn) <= band:
                    vals.append(-kn)
                    kern.append(True)
                continue
            e = math.sqrt(kn * kn + E * E)
            if e <= band:
                vals += [e] * int(mu) + [-e] * int(mu)
                kern += [False] * (2 * int(mu))
    order = np.argsort(vals)
    return np.array(vals)[order], np.array(kern)[order]


# ---------------------------------------------------------------- holonomy


@dataclass
class KernelSection:
    vector: np.ndarray  # fiber coefficients in the basis of build_D0(M(s))
    spinor: np.ndarray  # C^8 spinor of the Gaussian ground component (fixed coordinates)
    residual: float
    separation: float
    basis: object


def kernel_section(loop: MatrixLoop, R: float, s: float, rep: CliffordRep | None = None, n_max: int = 2) -> KernelSection:
    """Unit kernel vector of the fiber operator at s (phase as produced by the solver frame)."""
    M = loop.at(s)
    if abs(np.linalg.det(M)) < 1e-12:
        raise LoopError("M(s) is singular")
    op = build_D0(M, R, rep, n_max=n_max)
    vec, E0, E1 = d0_kernel(op)
    if abs(E1) < 10 * max(abs(E0), 1e-300) or abs(E0) > 1e-8 * abs(E1):
        raise KernelIsolationError(f"kernel not isolated at s={s}: |E0|={abs(E0):.2e}, |E1|={abs(E1):.2e}")
    vec = vec / np.linalg.norm(vec)
    res = float(np.linalg.norm(op.matrix @ vec))
    sp8 = op.basis.spinor_at_ground(vec)
    nrm = np.linalg.norm(sp8)
    if abs(nrm - 1) > 1e-8:
        raise KernelIsolationError("kernel vector is not a pure Gaussian ground state")
    return KernelSection(vec, sp8 / nrm, res, abs(E1) / max(abs(E0), 1e-300), op.basis)


def _wilson_phase(loop, R, n_steps, rep):
    s = np.linspace(0, loop.ell, n_steps, endpoint=False)
    secs = [kernel_section(loop, R, x, rep) for x in s]
    prod = 1.0 + 0j
    for i in range(n_steps):
        a = secs[i].spinor
        b = secs[(i + 1) % n_steps].spinor
        o = np.vdot(a, b)
        prod *= o / abs(o)
    sigma = np.vdot(secs[0].spinor, rep.gamma_c[3] @ secs[0].spinor)
    return float(np.angle(prod)), sigma, secs


@dataclass
class BerryResult:
    alpha: float
    alpha_refined: float
    sigma: complex
    phase: float
    first_order_shift: float


def berry_alpha(loop: MatrixLoop, R: float, pert: PerturbationData | None = None, n_steps: int = 64,
                rep: CliffordRep | None = None, tol: float = 1e-4) -> BerryResult:
    """Holonomy offset alpha in [0, 1) of the kernel line bundle, with the constant-term shifts.

    The kernel spinor satisfies gamma_s phi = sigma phi with sigma = +-i; then
    alpha = Im(sigma) (arg W / 2 pi + ell b0 / pi) + ell q <Gamma>_phi / 2 pi mod 1, where W is
    the Wilson loop of the kernel spinors. The remaining perturbation terms are odd in x and
    have no first-order effect on the kernel.
    """
    if n_steps < 64:
        raise ValueError("n_steps must be at least 64")
    rep = rep or build_clifford_rep()
    ph1, sigma, secs = _wilson_phase(loop, R, n_steps, rep)
    ph2, _, _ = _wilson_phase(loop, R, 2 * n_steps, rep)
    d = (ph2 - ph1 + np.pi) % (2 * np.pi) - np.pi
    if abs(d) / (2 * np.pi) > tol:
        raise ConvergenceError(f"holonomy changes by {abs(d) / (2 * np.pi):.2e} when n_steps doubles")
    sg = float(np.imag(sigma))
    shift = 0.0
    if pert is not None:
        shift += sg * loop.ell * pert.b0 / np.pi
        if pert.q:
            # energy shift <phi, -q Gamma phi> moves alpha by -ell dE / 2 pi
            gam = np.mean([np.real(np.vdot(c.spinor, rep.Gamma_c @ c.spinor)) for c in secs])
            shift += loop.ell * pert.q * gam / (2 * np.pi)
    a1 = frac(sg * ph1 / (2 * np.pi) + shift)
    a2 = frac(sg * ph2 / (2 * np.pi) + shift)
    return BerryResult(a1, a2, complex(sigma), ph2, shift)


# ---------------------------------------------------------------- lattice fit


@dataclass
class EigenLatticeFit:
    alpha: float
    residuals: np.ndarray
    n_indices: np.ndarray
    eigenvalues: np.ndarray
    tau_bound: float | None = None
    count_expected: int | None = None

    @property
    def max_tau(self):
        return float(np.max(np.abs(self.residuals))) if len(self.residuals) else 0.0

    def to_json(self):
        return {"alpha": self.alpha, "n": self.n_indices.tolist(), "tau": self.residuals.tolist(),
                "eigenvalues": self.eigenvalues.tolist(), "tau_bound": self.tau_bound}


def fit_lattice(values, ell: float) -> EigenLatticeFit:
    E = np.sort(np.asarray(values, float))
    if len(E) == 0:
        raise LatticeFitError("no eigenvalues in the band")
    u = -E * ell / (2 * np.pi)  # = alpha + n - tau ell / 2 pi
    z = np.mean(np.exp(2j * np.pi * u))
    alpha = (np.angle(z) / (2 * np.pi)) % 1.0
    n = np.round(u - alpha).astype(int)
    alpha = float(np.mean(u - n))
    shift = math.floor(alpha)
    alpha -= shift
    n += shift
    if alpha > 1 - 1e-9:
        alpha -= 1.0
        n += 1
    tau = E + (alpha + n) * 2 * np.pi / ell
    if np.max(np.abs(tau)) > (2 * np.pi / ell) / 4:
        raise LatticeFitError(f"residual {np.max(np.abs(tau)):.3g} exceeds a quarter spacing")
    if len(set(n.tolist())) != len(n):
        raise LatticeFitError("two eigenvalues share a lattice index")
    return EigenLatticeFit(alpha, tau, n, E)


def low_spectrum_fit(op: TruncatedOperator, band: float, kappa: float | None = None) -> EigenLatticeFit:
    """Fit E = -(alpha + n) 2 pi / ell + tau to every eigenvalue with |E| <= band.

    ``kappa`` (optional) records the residual bound kappa / sqrt(R) on the result.
    """
    if band > math.sqrt(op.meta["R"]) / KAPPA_WINDOW:
        raise ValueError(f"band exceeds sqrt(R) / {KAPPA_WINDOW}")
    spec = circle_spectrum(op, band)
    fit = fit_lattice(spec.values, op.meta["ell"])
    fit.count_expected = len(prop48_lattice([(fit.alpha, op.meta["ell"])], band)[0])
    if kappa is not None:
        fit.tau_bound = kappa / math.sqrt(op.meta["R"])
    return fit


@dataclass
class TauStudy:
    R: np.ndarray
    max_tau: np.ndarray
    alphas: np.ndarray
    slope: float | None
    kappa: float

    def to_json(self):
        return {"R": self.R.tolist(), "max_tau": self.max_tau.tolist(), "alpha": self.alphas.tolist(),
                "slope": self.slope, "kappa": self.kappa}


def tau_scaling_study(loop: MatrixLoop, pert: PerturbationData | None, R_list, band: float, n_max: int = 6,
                      rep: CliffordRep | None = None, degenerate_tol: float = 1e-9) -> TauStudy:
    """Log-log slope of max|tau| against R.

    kappa is calibrated on the two smallest R only (max of sqrt(R) max|tau|), so the bound
    max|tau| <= kappa / sqrt(R) at the larger R is a prediction rather than a fit.
    """
    R_list = np.asarray(sorted(R_list), float)
    if len(R_list) < 4 or R_list[-1] / R_list[0] < 8:
        raise ValueError("need at least 4 values of R spanning a factor of 8")
    taus, alphas = [], []
    for R in R_list:
        op = build_D_circle(loop, R, pert, n_max=n_max, band=band, rep=rep)
        f = low_spectrum_fit(op, band)
        taus.append(f.max_tau)
        alphas.append(f.alpha)
    taus = np.array(taus)
    if np.all(taus < degenerate_tol):
        slope = None
    else:
        slope = float(np.polyfit(np.log(R_list), np.log(np.maximum(taus, 1e-300)), 1)[0])
    kappa = float(np.max(np.sqrt(R_list[:2]) * taus[:2]))
    return TauStudy(R_list, taus, np.array(alphas), slope, kappa)


# ---------------------------------------------------------------- eigenvector checks


def gauge_fiber_kernels(op: TruncatedOperator, loop: MatrixLoop, n_samples: int = 64, rep=None):
    """Kernel vectors of the gauge-frame fiber operator at sample points (same fiber basis as op)."""
    rep = rep or build_clifford_rep()
    cb = op.basis
    basis = cb.fiber
    sc = _Scalars(basis)
    R = op.meta["R"]
    eps = op.meta["eps"]
    gd = gauge_data(loop, rep, n_samples)
    X = [sc.position(j) for j in range(3)]
    mats = [[_lift(basis, sc, X[j], rep.rho_c[l]) for l in range(3)] for j in range(3)]
    lam = np.asarray(op.meta["lambdas"])
    Pbar = np.mean(gd.P, axis=0)
    fib = build_D0(eps * Pbar, R, rep, m_list=m_triples_shell(lam, op.meta["n_max"] * lam.min() + 1e-9)).matrix
    out = []
    for i in range(n_samples):
        H = fib.copy()
        dP = gd.P[i] - Pbar
        for j in range(3):
            for l in range(3):
                if abs(dP[j, l]) > DROP:
                    H = H + SQRT2 * 1j * R * eps * dP[j, l] * mats[j][l]
        w, v = np.linalg.eigh(H.toarray())
        out.append(v[:, np.argmin(np.abs(w))])
    return gd.s, np.array(out)


def kernel_weight(op: TruncatedOperator, vec, s, kernels) -> float:
    """Integral over s of |<kappa(s), psi(s)>|^2 for a unit eigenvector psi."""
    cb = op.basis
    c = cb.split(vec)
    c = c / np.linalg.norm(c)
    phase = np.exp(1j * np.outer(s, cb.k))  # (n_s, nF)
    amp = np.einsum("sf,sb,fb->s", phase, kernels.conj(), c)
    return float(np.mean(np.abs(amp) ** 2))


def circle_decay_fit(op: TruncatedOperator, vec, lam_min: float | None = None):
    """Gaussian decay of the s-averaged density of a circle eigenvector."""
    cb = op.basis
    lam_min = lam_min or min(op.meta["lambdas"])
    return gaussian_decay_fit(cb.split(vec), cb.fiber, lam_min=lam_min, R=op.meta["R"])


# ---------------------------------------------------------------- several components


@dataclass
class LatticeValue:
    value: float
    component: int
    n: int


def prop48_lattice(components, band: float):
    """Union over components k of {-(alpha_k + n) 2 pi / ell_k} within [-band, band]; cap p = #components."""
    out = []
    for idx, (alpha, ell) in enumerate(components):
        if not (0 <= alpha < 1) or not ell > 0:
            raise ValueError("need alpha in [0, 1) and ell > 0")
        step = 2 * np.pi / ell
        nlo = math.floor(-band / step - alpha) - 1
        nhi = math.ceil(band / step - alpha) + 1
        for n in range(nlo, nhi + 1):
            v = -(alpha + n) * step
            if abs(v) <= band + 1e-12:
                out.append(LatticeValue(float(v), idx, n))
    out.sort(key=lambda x: (x.value, x.component))
    return out, len(components)
