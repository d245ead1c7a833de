"""Flat four-torus model: the L+ sector of the family D_t and lattice dbar kernels.

Sector operator on C^8 x (sections of a degree-d line bundle on the first T^2,
trivial along x3, x4):

    H(t) = gamma_a nabla_a - sqrt(2) r i rho_3 - t/2 Gamma,   d = 2q, r = pi q / m.

The T^2 factor is expanded in Landau levels (X = nabla_1 + i nabla_2 with
[X, X^+] = 4 pi d, every level d-fold degenerate) and x3, x4 in low Fourier
modes. Pairing each spinor eigenspace of i gamma_1 gamma_2 with the matching
Landau index gives a truncation that the operator preserves exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .clifford import CliffordRep, build_clifford_rep
from .flow_engine import FlowResult, OperatorFamily, spectral_flow, staged_flow, start_vector


class FluxError(ValueError):
    pass


class KernelGapError(RuntimeError):
    pass


@dataclass(frozen=True)
class TorusModelSpec:
    q: int
    m: float
    r: float | None = None
    lattice_n: int | None = None

    def __post_init__(self):
        if int(self.q) != self.q:
            raise ValueError("q must be an integer")
        if not self.m > 0:
            raise ValueError("m must be positive")
        r = math.pi * self.q / self.m
        if self.r is None:
            object.__setattr__(self, "r", r)
        elif abs(self.r * self.m / math.pi - self.q) > 1e-12 * max(1, abs(self.q)):
            raise ValueError("r m / pi must equal q")
        if self.lattice_n is None:
            object.__setattr__(self, "lattice_n", 16 * abs(self.q) + 8)
        if self.lattice_n < 8 * abs(self.q) + 8:
            raise ValueError("lattice_n must be at least 8|q| + 8")

    @property
    def degree(self) -> int:
        return 2 * int(self.q)

    @property
    def t_cross(self) -> float:
        return 2 * math.sqrt(2) * self.r


# ---------------------------------------------------------------- lattice dbar


@dataclass
class DbarOperator:
    degree: int
    n: int
    G1: sp.csr_matrix
    G2: sp.csr_matrix

    @property
    def matrix(self):
        return (self.G1 + 1j * self.G2).tocsr()

    def plaquette_phases(self) -> np.ndarray:
        """Holonomy around every elementary plaquette (angles)."""
        n = self.n
        U1 = self._links(self.G1)
        U2 = self._links(self.G2)
        i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        hol = U1[i, j] * U2[(i + 1) % n, j] * np.conj(U1[i, (j + 1) % n]) * np.conj(U2[i, j])
        return np.angle(hol)

    def _links(self, G):
        n = self.n
        h = 1.0 / n
        out = np.zeros((n, n), complex)
        Gc = G.tocoo()
        for r, c, v in zip(Gc.row, Gc.col, Gc.data):
            if r != c:
                out[r // n, r % n] = v * h
        return out


def build_dbar(d: int, n: int) -> DbarOperator:
    """Forward covariant differences in Landau gauge, uniform flux -2 pi d / n^2 per plaquette."""
    h = 1.0 / n
    phi = -2 * np.pi * d / n**2
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    i, j = i.ravel(), j.ravel()
    site = i * n + j
    right = ((i + 1) % n) * n + j
    up = i * n + (j + 1) % n
    u1 = np.where(i < n - 1, 1.0 + 0j, np.exp(-1j * phi * n * j))
    u2 = np.exp(1j * phi * i)
    N2 = n * n
    eye = sp.identity(N2, format="csr") / h
    G1 = sp.csr_matrix((u1 / h, (site, right)), shape=(N2, N2)) - eye
    G2 = sp.csr_matrix((u2 / h, (site, up)), shape=(N2, N2)) - eye
    return DbarOperator(d, n, G1.tocsr(), G2.tocsr())


@dataclass
class DbarReport:
    dim: int
    singular_values: np.ndarray
    kinetic: np.ndarray
    threshold: float
    n: int


def dbar_kernel_report(d: int, lattice_n: int | None = None, rel_tol: float = 1e-6) -> DbarReport:
    d = int(d)
    n = lattice_n or 8 * abs(d) + 8
    if n < 8 * abs(d) + 8:
        raise ValueError("lattice_n must be at least 8|d| + 8")
    op = build_dbar(d, n)
    ph = op.plaquette_phases()
    want = -2 * np.pi * d / n**2
    if np.max(np.abs(np.angle(np.exp(1j * (ph - want))))) > 1e-10:
        raise FluxError("plaquette fluxes are not uniform")
    if abs(np.exp(1j * ph.sum()) - 1) > 1e-8:
        raise FluxError("total flux is not a multiple of 2 pi")
    D = op.matrix
    A = (D.conj().T @ D).tocsc()
    smax = math.sqrt(float(spla.eigsh(A, k=1, which="LA", return_eigenvectors=False, v0=start_vector(A.shape[0]))[0]))
    thr = rel_tol * smax
    k = abs(d) + 6
    while True:
        k = min(k, A.shape[0] - 2)
        w, V = spla.eigsh(A, k=k, sigma=-1.0, which="LM", v0=start_vector(A.shape[0]))
        order = np.argsort(w)
        V = V[:, order]
        s = np.linalg.norm(D @ V, axis=0)
        nz = int(np.sum(s < thr))
        if nz < k - 2 or k >= A.shape[0] - 2:
            break
        k *= 2
    if np.any((s >= thr / 10) & (s <= 10 * thr)):
        raise KernelGapError("near-zero singular values are not separated from the threshold by 10x")
    Vk = V[:, s < thr]
    if Vk.shape[1] == 0:
        return DbarReport(0, s, np.zeros(0), thr, n)
    # lattice doublers also solve the difference equation; they carry kinetic energy ~ n^2
    Q, _ = np.linalg.qr(Vk)
    kin_op = op.G1.conj().T @ op.G1 + op.G2.conj().T @ op.G2
    kin = np.linalg.eigvalsh(Q.conj().T @ (kin_op @ Q))
    lo, hi = n**2 / 16, n**2
    if np.any((kin >= lo) & (kin <= hi)):
        raise KernelGapError("kernel vectors not separable into smooth modes and lattice doublers")
    return DbarReport(int(np.sum(kin < lo)), s, kin, thr, n)


def dbar_kernel_dim(d: int, lattice_n: int | None = None) -> int:
    """Number of holomorphic sections of the degree-d bundle seen on the lattice."""
    return dbar_kernel_report(d, lattice_n).dim


# ---------------------------------------------------------------- predictions


def crossing_predictions(spec: TorusModelSpec) -> dict:
    """Crossing location and counts from the dbar kernel (L+ sector plus its L- mirror)."""
    if spec.q < 0:
        raise ValueError("q must be non-negative")
    if spec.q == 0:
        return {"t_cross": None, "up_count": 0, "down_count": 0, "net": 0, "sector_up": 0, "sector_down": 0}
    k = dbar_kernel_dim(spec.degree, max(spec.lattice_n, 8 * spec.degree + 8))
    # holomorphic sections in the T*X part cross upward, the same number in Lambda+ + R downward
    return {
        "t_cross": spec.t_cross,
        "up_count": 2 * k,
        "down_count": 2 * k,
        "net": 0,
        "sector_up": k,
        "sector_down": k,
    }


# ---------------------------------------------------------------- sector operator


def _fourier_modes(kmax):
    return [(a, b) for a in range(-kmax, kmax + 1) for b in range(-kmax, kmax + 1) if abs(a) + abs(b) <= kmax]


@dataclass
class SectorOperator:
    G: np.ndarray  # gamma . nabla
    Rho: np.ndarray  # i rho_3
    Gam: np.ndarray  # Gamma
    spec: TorusModelSpec
    landau_max: int
    modes: list

    def at(self, t: float, rho_scale: float = 1.0, shift: float = 0.0) -> np.ndarray:
        return self.G - rho_scale * math.sqrt(2) * self.spec.r * self.Rho - 0.5 * t * self.Gam - shift * np.eye(len(self.G))

    def square_defect(self, t: float) -> float:
        """max |H^2 - (G^2 + A^2)| with A the algebraic part."""
        H = self.at(t)
        A = H - self.G
        return float(np.abs(H @ H - (self.G @ self.G + A @ A)).max())


def _spin_frame(rep: CliffordRep):
    g1, g2 = rep.gamma_c[0], rep.gamma_c[1]
    J = 1j * g1 @ g2
    w, v = np.linalg.eigh(J)
    plus, minus = v[:, w > 0], v[:, w < 0]
    lower = g1 - 1j * g2
    if np.abs(lower @ plus).max() < 1e-12:
        ann, low = plus, minus  # (g1 - i g2) annihilates `ann`
    elif np.abs(lower @ minus).max() < 1e-12:
        ann, low = minus, plus
    else:
        raise RuntimeError("gamma_1 - i gamma_2 annihilates neither eigenspace")
    return low, ann


def build_sector_operator(spec: TorusModelSpec, landau_max: int = 4, fourier_max: int = 1,
                          rep: CliffordRep | None = None) -> SectorOperator:
    """L+ sector operator on levels n <= landau_max (with its partner spinors at n-1)."""
    rep = rep or build_clifford_rep()
    d = spec.degree
    if d <= 0:
        raise ValueError("sector operator needs q > 0")
    low, ann = _spin_frame(rep)
    # state list for one (k3, k4) mode and one degeneracy index
    states = [(n, low[:, a]) for n in range(landau_max + 1) for a in range(low.shape[1])]
    states += [(n, ann[:, a]) for n in range(landau_max) for a in range(ann.shape[1])]
    S = np.array([v for _, v in states]).T  # 8 x dim
    lev = np.array([n for n, _ in states])
    dim = len(states)
    g = rep.gamma_c
    lowering = 0.5 * (g[0] - 1j * g[1])
    raising = -0.5 * (g[0] + 1j * g[1])
    c = 4 * np.pi * d
    Xm = np.zeros((dim, dim))  # <n'|X|n> = sqrt(c n) delta_{n', n-1}
    for a in range(dim):
        for b in range(dim):
            if lev[a] == lev[b] - 1:
                Xm[a, b] = math.sqrt(c * lev[b])
    same = (lev[:, None] == lev[None, :]).astype(float)
    sandwich = lambda O: S.conj().T @ O @ S
    G_T2 = sandwich(lowering) * Xm + sandwich(raising) * Xm.T
    Rho1 = sandwich(1j * rep.rho_c[2]) * same
    Gam1 = sandwich(rep.Gamma_c) * same
    g3, g4 = sandwich(g[2]) * same, sandwich(g[3]) * same
    modes = _fourier_modes(fourier_max)
    blocks_G = [G_T2 + 2j * np.pi * (k3 * g3 + k4 * g4) for k3, k4 in modes]
    Gm = _block_diag(blocks_G)
    Rm = np.kron(np.eye(len(modes)), Rho1)
    Tm = np.kron(np.eye(len(modes)), Gam1)
    I_d = np.eye(d)
    op = SectorOperator(np.kron(I_d, Gm), np.kron(I_d, Rm), np.kron(I_d, Tm), spec, landau_max, modes)
    herm = max(np.abs(op.G - op.G.conj().T).max(), np.abs(op.Rho - op.Rho.conj().T).max())
    if herm > 1e-12:
        raise RuntimeError(f"sector operator not Hermitian ({herm:.2e})")
    return op


def _block_diag(blocks):
    n = sum(b.shape[0] for b in blocks)
    out = np.zeros((n, n), complex)
    o = 0
    for b in blocks:
        k = b.shape[0]
        out[o:o + k, o:o + k] = b
        o += k
    return out


def _default_band(op: SectorOperator) -> float:
    d = op.spec.degree
    mu = math.sqrt(4 * np.pi * d)
    if len(op.modes) > 1:
        mu = min(mu, 2 * np.pi)
    return 0.9 * mu


def sector_flow_check(spec: TorusModelSpec, t_window=None, n_grid: int = 41, landau_max: int = 4,
                      fourier_max: int = 1, band: float | None = None) -> FlowResult:
    """Tracked spectral flow of the L+ sector family over ``t_window`` (default (r, 5r))."""
    a, b = t_window if t_window is not None else (spec.r, 5 * spec.r)
    op = build_sector_operator(spec, landau_max, fourier_max)
    band = band or _default_band(op)
    fam = OperatorFamily(lambda t: op.at(t), np.linspace(a, b, n_grid), f"L+ sector, q={spec.q}")
    return spectral_flow(fam, band)


def staged_sector_flow(spec: TorusModelSpec, T: float | None = None, n_grid: int = 41, landau_max: int = 4):
    """Stages 1-3 of the deformation to a gapped operator, on the L+ sector.

    Returns (per-stage results, total, gap) where gap is the smallest |E| of
    gamma.nabla - T/2 Gamma, which bounds the later stages away from zero.
    """
    op = build_sector_operator(spec, landau_max)
    m = spec.m
    T = T or 4 * spec.t_cross + 4 * m
    band = _default_band(op)
    s = np.linspace(0, 1, n_grid)
    stages = [
        OperatorFamily(lambda x: op.at(m, shift=0.5 * (1 - x) * m), s, "mass shift"),
        OperatorFamily(lambda t: op.at(t), np.linspace(m, T, 2 * n_grid), "t increase"),
        OperatorFamily(lambda x: op.at(T, rho_scale=1 - x), s, "remove rho term"),
    ]
    results, total = staged_flow(stages, band)
    gap = float(np.min(np.abs(np.linalg.eigvalsh(op.G - 0.5 * T * op.Gam))))
    return results, total, gap
