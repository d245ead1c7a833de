"""Ladder operators, the fiber operator D0 on R^3 and the 1-D model operator.

Basis conventions
-----------------
Each axis carries orthonormal Hermite functions adapted to the Gaussian
exp(-omega y^2 / 2), omega = sqrt(2) R lambda. With a = d/dy + omega y one has
a|n> = sqrt(2 omega n) |n-1>, so x = (a + a^dag) / (2 omega) and
d/dy = (a - a^dag) / 2.

The spinor factor is expressed in the joint eigenbasis of the three commuting
involutions J_k = i gamma'_k rho'_k. In that basis D0 maps (n_k, iota_k = -1)
to (n_k - 1, +1) and back, so m_k = n_k + (1 + iota_k)/2 is conserved. All
truncations below are unions of complete m-blocks, which makes them exactly
invariant under the diagonal normal form of D0.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import eigsh

from vwspec.clifford import SIGNS, CliffordRep, build_clifford_rep
from vwspec.flow_engine import start_vector

SQRT2 = math.sqrt(2.0)
DENSE_LIMIT = 20000
DROP_TOL = 1e-12


class TruncationError(RuntimeError):
    """Raised when a numerical result is not certified at the chosen truncation."""


class FitError(RuntimeError):
    pass


def cluster_tol(E):
    return 1e-6 * (1.0 + abs(E))


@dataclass(frozen=True)
class OscBasisSpec:
    R: float
    lambdas: tuple
    n_max: int

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError("R must be positive")
        lam = tuple(float(v) for v in self.lambdas)
        if len(lam) != 3 or min(lam) <= 0:
            raise ValueError("lambdas must be three positive reals")
        object.__setattr__(self, "lambdas", lam)
        if int(self.n_max) < 1:
            raise ValueError("n_max must be >= 1")


@dataclass
class TruncatedOperator:
    matrix: object  # scipy sparse or ndarray, Hermitian
    basis: object
    meta: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.matrix.shape[0]

    def dense(self):
        m = self.matrix
        return m.toarray() if sp.issparse(m) else np.asarray(m)

    def hermiticity_defect(self):
        m = self.matrix
        d = m - m.conj().T
        if sp.issparse(d):
            num = abs(d).max() if d.nnz else 0.0
            den = abs(m).max() if m.nnz else 1.0
        else:
            num, den = np.abs(d).max(), max(np.abs(m).max(), 1e-300)
        return float(num / den)


@dataclass
class SpectrumSlice:
    eigenvalues: np.ndarray
    multiplicities: np.ndarray
    truncation_residual: float = 0.0
    labels: list | None = None
    label_counts: np.ndarray | None = None

    def expanded(self):
        return np.repeat(self.eigenvalues, self.multiplicities)


# ---------------------------------------------------------------- ladders

def ladder_matrices(R: float, lam: float, n_max: int):
    """(a, a_dag) on levels 0..n_max; [a, a_dag] = 2 sqrt(2) R lam below the top level."""
    if not (R > 0 and lam > 0):
        raise ValueError("R and lambda must be positive")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    omega = SQRT2 * R * lam
    a = np.diag(np.sqrt(2.0 * omega * np.arange(1, n_max + 1)), k=1)
    return a, a.T.copy()


def position_derivative(R: float, lam: float, n_max: int):
    a, ad = ladder_matrices(R, lam, n_max)
    omega = SQRT2 * R * lam
    return (a + ad) / (2.0 * omega), (a - ad) / 2.0


def hermite_functions(n_max: int, omega: float, y):
    """Array (n_max+1, len(y)) of normalized Hermite functions for exp(-omega y^2/2)."""
    y = np.asarray(y, dtype=float)
    xi = math.sqrt(omega) * y
    out = np.empty((n_max + 1,) + y.shape)
    out[0] = (omega / math.pi) ** 0.25 * np.exp(-0.5 * xi * xi)
    if n_max >= 1:
        out[1] = SQRT2 * xi * out[0]
    for n in range(1, n_max):
        out[n + 1] = math.sqrt(2.0 / (n + 1)) * xi * out[n] - math.sqrt(n / (n + 1)) * out[n - 1]
    return out


# ---------------------------------------------------------------- spin frames

def rotated_generators(rep: CliffordRep, Ug, Vr):
    """gamma'_k = sum_j Ug[j,k] gamma_j and rho'_k = sum_l Vr[l,k] rho_l."""
    g = rep.gamma_c[:3]
    r = rep.rho_c
    gp = [sum(Ug[j, k] * g[j] for j in range(3)) for k in range(3)]
    rp = [sum(Vr[l, k] * r[l] for l in range(3)) for k in range(3)]
    return gp, rp


def sector_frame(gp, rp):
    """Unitary whose column s is the joint eigenvector of i gamma'_k rho'_k with signs SIGNS[s]."""
    J = [1j * gp[k] @ rp[k] for k in range(3)]
    eye = np.eye(8)
    cols = []
    for sig in SIGNS:
        P = eye.astype(complex)
        for k in range(3):
            P = P @ (eye + sig[k] * J[k]) / 2
        j = int(np.argmax(np.linalg.norm(P, axis=0)))
        v = P[:, j]
        v = v / np.linalg.norm(v)
        # deterministic phase: largest component real positive
        p = v[np.argmax(np.abs(v))]
        cols.append(v * abs(p) / p)
    U = np.array(cols).T
    if not np.allclose(U.conj().T @ U, eye, atol=1e-10):
        raise RuntimeError("joint eigenvectors are not orthonormal")
    return U


def m_triples_box(n_max):
    r = range(n_max + 1)
    return [m for m in itertools.product(r, r, r)]


def m_triples_shell(lams, Lam):
    """All m with sum lam_k m_k <= Lam (Lam in the same units as lams)."""
    lams = np.asarray(lams, float)
    lim = [int(math.floor(Lam / l + 1e-12)) for l in lams]
    out = []
    for m1 in range(lim[0] + 1):
        for m2 in range(lim[1] + 1):
            rest = Lam - lams[0] * m1 - lams[1] * m2
            if rest < -1e-12:
                break
            for m3 in range(int(math.floor(rest / lams[2] + 1e-12)) + 1):
                out.append((m1, m2, m3))
    return out


class OscSpinBasis:
    """Hermite^3 x C^8 states grouped in complete m-blocks.

    states[:, :3] are oscillator levels, states[:, 3] indexes SIGNS.
    `frame` maps y to x (x = frame @ y), `spin` has the sector eigenvectors as columns.
    """

    def __init__(self, m_list, omegas, frame, spin):
        self.omegas = np.asarray(omegas, float)
        self.frame = np.asarray(frame, float)
        self.spin = np.asarray(spin)
        m_arr = np.asarray(list(m_list), dtype=np.int64).reshape(-1, 3)
        delta = (1 + np.array(SIGNS, dtype=np.int64)) // 2  # (8, 3)
        lv = m_arr[:, None, :] - delta[None, :, :]
        ok = np.all(lv >= 0, axis=2)
        mi, si = np.nonzero(ok)
        st = np.column_stack([lv[mi, si], si]).astype(np.int64).reshape(-1, 4)
        self.states = st
        self.levels = st[:, :3]
        self.sigma = st[:, 3]
        self.nmax_axis = self.levels.max(axis=0) if len(st) else np.zeros(3, int)
        C = int(self.levels.max()) + 3 if len(st) else 3
        self._C = C
        self._lut = np.full(C * C * C * 8, -1, dtype=np.int64)
        self._lut[self._key(self.levels, self.sigma)] = np.arange(len(st))
        self._by_sigma = [np.nonzero(self.sigma == k)[0] for k in range(8)]

    def __len__(self):
        return len(self.states)

    @property
    def mvals(self):
        sig = np.array(SIGNS)[self.sigma]
        return self.levels + (1 + sig) // 2

    def _key(self, lv, s):
        C = self._C
        return ((lv[:, 0] * C + lv[:, 1]) * C + lv[:, 2]) * 8 + s

    def lookup(self, lv, s):
        ok = np.all((lv >= 0) & (lv < self._C), axis=1)
        out = np.full(len(lv), -1, dtype=np.int64)
        out[ok] = self._lut[self._key(lv[ok], s[ok])]
        return out

    def term(self, axis, pieces):
        """Sparse matrix of sum over pieces (kind, spin8, scale) of op_axis (x) spin8.

        kind is "y" (position) or "d" (derivative). Pieces are summed before
        small entries are dropped, so cancellations between them are exact.
        Returns (matrix, leak) where leak is the largest coefficient whose target
        lies outside the basis.
        """
        om = self.omegas[axis]
        n = self.levels[:, axis].astype(float)
        root = math.sqrt(2.0 * om)
        coefs = {"y": (root * np.sqrt(n) / (2 * om), root * np.sqrt(n + 1) / (2 * om)),
                 "d": (root * np.sqrt(n) / 2, -root * np.sqrt(n + 1) / 2)}
        mats = [(kind, self.spin.conj().T @ spin8 @ self.spin * scale) for kind, spin8, scale in pieces]
        rows, cols, vals = [], [], []
        leak = 0.0
        for sp_from in range(8):
            src = self._by_sigma[sp_from]
            if not len(src):
                continue
            lv_src = self.levels[src]
            for sp_to in range(8):
                active = [(kind, Sm[sp_to, sp_from]) for kind, Sm in mats if abs(Sm[sp_to, sp_from]) >= DROP_TOL]
                if not active:
                    continue
                for si, step in enumerate((-1, 1)):
                    v = sum(c * coefs[kind][si][src] for kind, c in active)
                    keep = np.abs(v) > DROP_TOL
                    if not keep.any():
                        continue
                    lv = lv_src[keep]
                    lv[:, axis] += step
                    tgt = self.lookup(lv, np.full(len(lv), sp_to))
                    inside = tgt >= 0
                    vk = v[keep]
                    if not inside.all():
                        leak = max(leak, float(np.abs(vk[~inside]).max()))
                    rows.append(tgt[inside])
                    cols.append(src[keep][inside])
                    vals.append(vk[inside])
        N = len(self)
        if rows:
            M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
        else:
            M = sp.csr_matrix((N, N), dtype=complex)
        return M, leak

    def scalar_diag(self, values):
        return sp.diags(np.asarray(values), format="csr")

    def spin_only(self, spin8):
        """Matrix of identity (x) spin8 (spinor-only endomorphism)."""
        Sm = self.spin.conj().T @ spin8 @ self.spin
        rows, cols, vals = [], [], []
        leak = 0.0
        idx = np.arange(len(self))
        for a in range(8):
            for b in range(8):
                c = Sm[a, b]
                if abs(c) < DROP_TOL:
                    continue
                sel = self.sigma == b
                tgt = self.lookup(self.levels[sel], np.full(int(sel.sum()), a))
                ins = tgt >= 0
                if (~ins).any():
                    leak = max(leak, abs(c))
                rows.append(tgt[ins])
                cols.append(idx[sel][ins])
                vals.append(np.full(int(ins.sum()), c))
        N = len(self)
        M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N))
        return M, leak

    def ground_index(self, sig=(-1, -1, -1)):
        s = SIGNS.index(tuple(sig))
        return int(self.lookup(np.zeros((1, 3), np.int64), np.array([s]))[0])

    def spinor_at_ground(self, vec):
        """C^8 vector (fixed coordinates) of the level-(0,0,0) component of vec."""
        sel = np.all(self.levels == 0, axis=1)
        out = np.zeros(8, complex)
        for i in np.nonzero(sel)[0]:
            out += vec[i] * self.spin[:, self.sigma[i]]
        return out

    def evaluate(self, coeffs, points):
        """|psi|(x) at points (P,3); extra leading axes of coeffs are summed in quadrature.

        coeffs has shape (..., len(basis)).
        """
        c = np.asarray(coeffs).reshape(-1, len(self))
        keep = np.nonzero(np.any(c != 0, axis=0))[0]  # block eigenvectors have small support
        c = c[:, keep]
        lv = self.levels[keep]
        y = np.asarray(points, float) @ self.frame  # y = frame^T x
        nm = int(lv.max()) if len(keep) else 0
        H = [hermite_functions(nm, self.omegas[k], y[:, k]) for k in range(3)]
        osc = H[0][lv[:, 0]] * H[1][lv[:, 1]] * H[2][lv[:, 2]]  # (N, P)
        tot = np.zeros(len(y))
        for row in c:
            # psi_spinor(x) = sum_i row_i osc_i(x) spin[:, sigma_i]
            W = self.spin[:, self.sigma[keep]] * row[None, :]  # (8, N)
            psi = W @ osc  # (8, P)
            tot += np.sum(np.abs(psi) ** 2, axis=0)
        return np.sqrt(tot)


# ---------------------------------------------------------------- block solver

@dataclass
class BlockSpectrum:
    values: np.ndarray
    vectors: list | None  # list of (global_indices, eigvec) aligned with values
    n_components: int


def block_eigensolve(H, want_vectors=False, select=None):
    """Eigen-decomposition through connected components of the sparsity graph.

    Components up to DENSE_LIMIT are diagonalized densely (batched by size);
    larger ones use shift-invert Lanczos around zero for the `select`
    smallest-magnitude eigenvalues.
    """
    H = sp.csr_matrix(H)
    N = H.shape[0]
    pattern = sp.csr_matrix((np.ones(H.nnz), H.indices, H.indptr), shape=H.shape)
    ncomp, lab = connected_components(pattern, directed=False)
    order = np.argsort(lab, kind="stable")
    sizes = np.bincount(lab, minlength=ncomp)
    start = np.concatenate([[0], np.cumsum(sizes)])
    pos = np.empty(N, np.int64)
    pos[order] = np.arange(N) - start[lab[order]]
    coo = H.tocoo()
    vals_all, vecs_all = [], []
    for size in np.unique(sizes):
        comps = np.nonzero(sizes == size)[0]
        if size > DENSE_LIMIT:
            for c in comps:
                idx = order[start[c]:start[c + 1]]
                sub = H[idx][:, idx]
                k = min(select or 50, size - 2)
                w, v = eigsh(sub, k=k, sigma=0.0, which="LM", v0=start_vector(sub.shape[0]))
                for j in range(len(w)):
                    vals_all.append(w[j])
                    vecs_all.append((idx, v[:, j]) if want_vectors else None)
            continue
        gid = np.full(ncomp, -1, np.int64)
        gid[comps] = np.arange(len(comps))
        sel = gid[lab[coo.row]] >= 0
        blocks = np.zeros((len(comps), size, size), dtype=H.dtype)
        blocks[gid[lab[coo.row[sel]]], pos[coo.row[sel]], pos[coo.col[sel]]] = coo.data[sel]
        if want_vectors:
            w, v = np.linalg.eigh(blocks)
        else:
            w, v = np.linalg.eigvalsh(blocks), None
        members = np.stack([order[start[c]:start[c + 1]] for c in comps])
        vals_all.extend(w.ravel().tolist())
        if want_vectors:
            for b in range(len(comps)):
                for j in range(size):
                    vecs_all.append((members[b], v[b, :, j]))
    vals = np.array(vals_all)
    perm = np.argsort(np.abs(vals), kind="stable")
    vals = vals[perm]
    vecs = [vecs_all[i] for i in perm] if want_vectors else None
    return BlockSpectrum(vals, vecs, ncomp)


def cluster(values):
    """Group sorted values; returns (centers, multiplicities)."""
    v = np.sort(np.asarray(values, float))
    cent, mult = [], []
    for x in v:
        if cent and abs(x - cent[-1]) <= cluster_tol(cent[-1]):
            mult[-1] += 1
        else:
            cent.append(x)
            mult.append(1)
    return np.array(cent), np.array(mult, dtype=int)


def by_magnitude(values):
    """Indices ordering values by |E|, ties (+-E) broken toward the negative one."""
    v = np.asarray(values, float)
    return np.lexsort((v, np.round(np.abs(v), 8)))


def lowest_levels(values, count):
    """The `count` distinct eigenvalues of smallest |E|, clustered, ascending."""
    vals = np.asarray(values, float)
    vals = vals[np.argsort(np.abs(vals), kind="stable")]
    m = min(len(vals), 64 * count)
    while True:
        # cluster a prefix in |E|; accept once the wanted levels sit clear of its edge
        sel = vals[:m]
        cut = math.inf
        if m < len(vals):
            cut = abs(vals[m]) - 2 * cluster_tol(vals[m])
            sel = sel[np.abs(sel) < cut]
        cent, mult = cluster(sel)
        order = by_magnitude(cent)[:count]
        if m == len(vals) or (len(order) == count and np.all(np.abs(cent[order]) < cut - cluster_tol(cut))):
            break
        m = min(len(vals), 4 * m)
    keep = np.sort(order)
    return cent[keep], mult[keep]


# ---------------------------------------------------------------- D0

def _svd_frames(M):
    M = np.asarray(M, float)
    if M.shape != (3, 3):
        raise ValueError("M must be 3x3")
    U, s, Vt = np.linalg.svd(M)
    if s[-1] == 0 or not np.all(np.isfinite(s)):
        raise ValueError("M is singular")
    if s[-1] < 1e-8:
        warnings.warn("M is badly conditioned (min singular value < 1e-8)", RuntimeWarning)
    return U, s, Vt.T


def build_D0(M, R: float, rep: CliffordRep | None = None, n_max: int = 40, m_list=None) -> TruncatedOperator:
    """Fiber operator sum gamma_k d_k + sqrt2 i R M_jk x_j rho_k in the SVD normal form.

    The truncation keeps m_k <= n_max on every axis unless an explicit list of
    m-triples is given.
    """
    if not R > 0:
        raise ValueError("R must be positive")
    rep = rep or build_clifford_rep()
    U, s, V = _svd_frames(M)
    gp, rp = rotated_generators(rep, U, V)
    spin = sector_frame(gp, rp)
    omegas = SQRT2 * R * s
    basis = OscSpinBasis(m_list if m_list is not None else m_triples_box(n_max), omegas, U, spin)
    H = None
    leak = 0.0
    for k in range(3):
        A, l1 = basis.term(k, [("d", gp[k], 1.0), ("y", rp[k], SQRT2 * 1j * R * s[k])])
        leak = max(leak, l1)
        H = A if H is None else H + A
    if leak > 1e-9:
        raise TruncationError(f"truncation is not invariant (leak {leak:.3g})")
    meta = dict(M=np.asarray(M, float).tolist(), R=R, n_max=n_max, singular_values=s.tolist(),
                gamma_s=rep.gamma_c[3])
    return TruncatedOperator(H.tocsr(), basis, meta)


def _level_key(L):
    return round(L, 9)


def d0_spectrum_closedform(spec: OscBasisSpec, count: int) -> SpectrumSlice:
    """Lowest `count` distinct eigenvalues by |E| from the closed-form formula.

    `multiplicities` follow the m-block structure (block of size 2^j splits into
    +-E each 2^(j-1) times; j = number of nonzero m_k). `label_counts` count the
    data sets with the single-pair 2-to-1 identification applied, which is the
    literal labelling rule and differs for j >= 2.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if count > 20001:
        raise ValueError("count exceeds enumeration capacity (20001)")
    lam = np.array(spec.lambdas)
    pref = 2.0 * SQRT2 * spec.R
    need = (count + 1) // 2 + 1
    Lcut = lam.min() * need
    while True:
        trip = m_triples_shell(lam, Lcut)
        levels = {}
        for m in trip:
            L = float(np.dot(lam, m))
            key = _level_key(L)
            j = sum(1 for v in m if v > 0)
            ent = levels.setdefault(key, [L, 0, 0, []])
            ent[1] += 2 ** (j - 1) if j else 1
            # literal label count: data sets with delta_k + n_k = m_k
            nlab = 2 ** j
            if j == 1:
                nlab = 1
            ent[2] += nlab if j else 1
            ent[3].append(m)
        keys = sorted(levels)
        if 2 * (len(keys) - 1) + 1 >= count or len(trip) > 2_000_000:
            break
        Lcut *= 1.6
    vals, mults, labs, lcount = [], [], [], []
    for key in keys:
        L, mu, nl, ms = levels[key]
        if L == 0:
            vals.append(0.0); mults.append(1); lcount.append(1); labs.append([(0, (0, 0, 0), (0, 0, 0))])
            continue
        E = math.sqrt(pref * L)
        for eps0 in (1, -1):
            vals.append(eps0 * E)
            mults.append(mu)
            lcount.append(nl)
            labs.append([(eps0, d, tuple(mk - dk for mk, dk in zip(m, d)))
                         for m in ms for d in itertools.product((0, 1), repeat=3)
                         if all(m[k] >= d[k] for k in range(3))])
    vals = np.array(vals)
    order = by_magnitude(vals)[:count]
    order = order[np.argsort(vals[order], kind="stable")]
    return SpectrumSlice(vals[order], np.array(mults)[order], 0.0,
                         [labs[i] for i in order], np.array(lcount)[order])


def d0_spectrum_numeric(M, R, rep=None, n_max=40, count=12, residual=True) -> SpectrumSlice:
    """Lowest `count` distinct eigenvalues of the truncated D0 with multiplicities."""
    op = build_D0(M, R, rep, n_max)
    bs = block_eigensolve(op.matrix)
    ev, mu = lowest_levels(bs.values, count)
    res = 0.0
    if residual:
        bs2 = block_eigensolve(build_D0(M, R, rep, n_max + 4).matrix)
        ev2, _ = lowest_levels(bs2.values, count)
        res = float(np.max(np.abs(ev2 - ev))) if len(ev2) == len(ev) else float("inf")
    return SpectrumSlice(ev, mu, res)


def d0_kernel(op: TruncatedOperator):
    """(kernel vector, eigenvalue, second-smallest |E|) of a truncated D0."""
    bs = block_eigensolve(op.matrix, want_vectors=True)
    idx, v = bs.vectors[0]
    vec = np.zeros(op.dim, complex)
    vec[idx] = v
    second = float(abs(bs.values[1])) if len(bs.values) > 1 else math.inf
    return vec, float(bs.values[0]), second


def dsquared_sector_check(op: TruncatedOperator) -> float:
    """max |D0^2 - sum_k Q_k| over the basis, Q_k the scalar sector operators.

    Q_k = -d_k^2 + iota_k sqrt2 R lam_k + 2 R^2 lam_k^2 y_k^2 is assembled from the
    ladder position/derivative matrices on a padded level range.
    """
    H = sp.csr_matrix(op.matrix)
    D2 = (H @ H).tocoo()
    b = op.basis
    sig = np.array(SIGNS)[b.sigma]
    R = op.meta["R"]
    lam = np.asarray(op.meta["singular_values"])
    nm = int(b.levels.max()) + 2
    diagQ = np.zeros(len(b))
    offQ = []
    for k in range(3):
        y, d = position_derivative(R, lam[k], nm)
        Q = -(d @ d) + 2 * R * R * lam[k] ** 2 * (y @ y)
        n = b.levels[:, k]
        diagQ += Q[n, n] + sig[:, k] * SQRT2 * R * lam[k]
        offQ.append(Q)
    want = sp.coo_matrix((diagQ, (np.arange(len(b)), np.arange(len(b)))), shape=H.shape).tocsr()
    # off-diagonal parts of Q_k (n -> n +- 2) within the basis
    for k in range(3):
        Q = offQ[k]
        n = b.levels[:, k]
        for step in (-2, 2):
            lv = b.levels.copy()
            lv[:, k] += step
            ok = lv[:, k] >= 0
            tgt = b.lookup(lv[ok], b.sigma[ok])
            src = np.nonzero(ok)[0]
            vals = Q[np.clip(lv[ok][:, k], 0, nm), n[ok]]
            ins = tgt >= 0
            want = want + sp.coo_matrix((vals[ins], (tgt[ins], src[ins])), shape=H.shape).tocsr()
    # compare only rows whose levels are at least two below the truncation edge
    inner = np.all(b.levels <= b.levels.max() - 2, axis=1)
    diff = (D2.tocsr() - want)[inner]
    return float(abs(diff).max()) if diff.nnz else 0.0


# ---------------------------------------------------------------- 1-D model

def _model1d_spinors(rep: CliffordRep, nu=(1.0, 0.0, 0.0)):
    J = np.array([[0.0, -1.0], [1.0, 0.0]])
    rho_nu = sum(nu[k] * rep.rho[k].astype(float) for k in range(3))
    rho_hat = np.kron(rho_nu, J)
    gam = np.kron(rep.gamma[3].astype(float), np.eye(2))
    Gam = np.kron(rep.Gamma.astype(float), np.eye(2))
    w, W = np.linalg.eigh(rho_hat @ Gam)
    W = W[:, w > 0]  # 8 real columns
    g = W.T @ gam @ W
    r = W.T @ rho_hat @ W
    kw, K = np.linalg.eigh(g @ r)  # gamma_x rho_hat, a real symmetric involution
    g = K.T @ g @ K
    r = K.T @ r @ K
    iota = np.where(kw > 0, 1, -1)
    return g, r, iota, W @ K


@dataclass
class Model1DBasis:
    levels: np.ndarray
    spin: np.ndarray  # index into the 8 real spinor columns
    iota: np.ndarray
    omega: float
    frame16: np.ndarray

    def __len__(self):
        return len(self.levels)

    def evaluate(self, coeffs, x):
        c = np.asarray(coeffs).reshape(-1, len(self))
        x = np.asarray(x, float).reshape(-1)
        H = hermite_functions(int(self.levels.max()), self.omega, x)[self.levels]  # (N, P)
        tot = np.zeros(len(x))
        for row in c:
            psi = np.zeros((8, len(x)), dtype=complex)
            np.add.at(psi, self.spin, row[:, None] * H)
            tot += np.sum(np.abs(psi) ** 2, axis=0)
        return np.sqrt(tot)


def build_model_1d(R_mu: float, rep: CliffordRep | None = None, n_max: int = 40) -> TruncatedOperator:
    """gamma_x d/dx + sqrt2 R_mu x rho_hat on the 8-dim real subspace rho_hat Gamma = +1."""
    if not R_mu > 0:
        raise ValueError("R_mu must be positive")
    rep = rep or build_clifford_rep()
    g, r, iota, frame = _model1d_spinors(rep)
    levels, spin = [], []
    for s in range(8):
        top = n_max if iota[s] < 0 else n_max - 1
        for n in range(top + 1):
            levels.append(n)
            spin.append(s)
    levels = np.array(levels)
    spin = np.array(spin)
    omega = SQRT2 * R_mu
    y, d = position_derivative(R_mu, 1.0, n_max + 1)
    lut = {(int(n), int(s)): i for i, (n, s) in enumerate(zip(levels, spin))}
    N = len(levels)
    H = np.zeros((N, N))
    for i, (n, s) in enumerate(zip(levels, spin)):
        for t in range(8):
            for dn in (-1, 1):
                m = n + dn
                if m < 0:
                    continue
                v = g[t, s] * d[m, n] + SQRT2 * R_mu * r[t, s] * y[m, n]
                if abs(v) < DROP_TOL:
                    continue
                j = lut.get((int(m), t))
                if j is None:
                    raise TruncationError("1-D truncation not invariant")
                H[j, i] += v
    basis = Model1DBasis(levels, spin, iota[spin], omega, frame)
    return TruncatedOperator(H, basis, dict(R_mu=R_mu, n_max=n_max))


def model_1d_spectrum(R_mu, rep=None, n_max=40, count=11):
    op = build_model_1d(R_mu, rep, n_max)
    w = np.linalg.eigvalsh(op.matrix)
    ev, mu = lowest_levels(w, count)
    return SpectrumSlice(ev, mu, 0.0)


# ---------------------------------------------------------------- decay fit

_DIRS = None


def _directions():
    global _DIRS
    if _DIRS is None:
        d = [v for v in itertools.product((-1, 0, 1), repeat=3) if any(v)]
        d = np.array(d, float)
        d /= np.linalg.norm(d, axis=1)[:, None]
        # axes and body diagonals, one per antipodal pair
        keep = [v for v in d if np.count_nonzero(v) in (1, 3)]
        _DIRS = np.array(keep)
    return _DIRS


@dataclass
class DecayFit:
    c: float
    r2: float
    width: float


def gaussian_decay_fit(eigvec, basis, spec: OscBasisSpec | None = None, lam_min: float | None = None,
                       R: float | None = None, edge_tol: float = 1e-6) -> DecayFit:
    """Fit log|psi| against |x|^2 on r/w in [1, 3.5], w = (sqrt2 / (R lam_min))^(1/2).

    `basis` is an OscSpinBasis (3-D) or Model1DBasis (1-D); leading axes of
    eigvec beyond the basis dimension are summed in quadrature.
    """
    v = np.asarray(eigvec)
    n = len(basis)
    rows = v.reshape(-1, n)
    if spec is not None:
        R, lam_min = spec.R, min(spec.lambdas)
    if R is None or lam_min is None:
        if isinstance(basis, Model1DBasis):
            lam_min, R = 1.0, basis.omega / SQRT2
        else:
            om = float(np.min(basis.omegas))
            lam_min, R = om / SQRT2, 1.0
    w = (SQRT2 / (R * lam_min)) ** 0.5
    # truncation dominated: weight on the two highest levels
    lv = basis.levels if isinstance(basis, Model1DBasis) else basis.levels.max(axis=1)
    top = int(np.max(lv))
    edge = float(np.sum(np.abs(rows[:, lv >= top - 1]) ** 2) / max(np.sum(np.abs(rows) ** 2), 1e-300))
    if edge > edge_tol:
        raise FitError(f"eigenvector is truncation dominated (edge weight {edge:.2e})")
    r = w * np.linspace(1.0, 3.5, 26)
    if isinstance(basis, Model1DBasis):
        amp = np.maximum(basis.evaluate(rows, r), basis.evaluate(rows, -r))
    else:
        amp = np.zeros_like(r)
        for d in _directions():
            amp = np.maximum(amp, basis.evaluate(rows, r[:, None] * d[None, :]))
    if np.any(amp <= 0):
        raise FitError("vanishing amplitude on the fit window")
    X = r * r
    Y = np.log(amp)
    A = np.vstack([np.ones_like(X), -X]).T
    coef, *_ = np.linalg.lstsq(A, Y, rcond=None)
    pred = A @ coef
    ss = np.sum((Y - Y.mean()) ** 2)
    r2 = 1.0 - np.sum((Y - pred) ** 2) / ss if ss > 0 else 0.0
    c = float(coef[1])
    if r2 < 0.95 or c <= 0:
        raise FitError(f"not in the Gaussian decay regime (R^2={r2:.3f}, c={c:.3g})")
    return DecayFit(c, float(r2), w)
