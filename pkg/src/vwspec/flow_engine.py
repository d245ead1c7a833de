"""Spectral flow of one-parameter Hermitian families by eigenvalue tracking.

Branches are continued between neighbouring grid points by eigenvector
overlap (aggregated over near-degenerate clusters and resolved with a linear
assignment). A crossing of `level` is a sign change of a branch; its direction
is +1 from below, -1 from above. Branches sitting on the level at an endpoint
are reported as endpoint kernels and do not count.

Step control: by Weyl's inequality no eigenvalue moves by more than
||H(t1) - H(t0)||_2 between grid points. Intervals where this exceeds band/4
are refined, so every branch that crosses the level is inside the inner half
of the window at both ends of its interval and must pass the overlap test.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment

SLOPE_TOL = 1e-6
MAX_REFINE = 6
MATCH_MIN = 0.5


class MatchError(RuntimeError):
    def __init__(self, msg, interval=None):
        super().__init__(msg)
        self.interval = interval


class TransversalityError(RuntimeError):
    pass


class JunctionError(ValueError):
    pass


def _as_dense(op):
    m = getattr(op, "matrix", op)
    if sp.issparse(m):
        m = m.toarray()
    return np.asarray(m)


@dataclass
class OperatorFamily:
    generator: Callable
    t_grid: np.ndarray
    description: str = ""
    lipschitz: float | None = None

    def __post_init__(self):
        g = np.asarray(self.t_grid, float)
        if g.ndim != 1 or len(g) < 2:
            raise ValueError("t_grid needs at least two samples")
        if not (np.all(np.diff(g) > 0) or np.all(np.diff(g) < 0)):
            raise ValueError("t_grid must be strictly monotone")
        self.t_grid = g

    def at(self, t):
        return _as_dense(self.generator(float(t)))

    def reversed(self):
        return OperatorFamily(self.generator, self.t_grid[::-1].copy(), self.description + " (reversed)", self.lipschitz)


@dataclass
class Crossing:
    t: float
    direction: int
    multiplicity: int


@dataclass
class FlowResult:
    crossings: list
    net_flow: int
    endpoint_ambiguity: tuple
    description: str = ""
    refinements: int = 0
    junction_kernels: list = field(default_factory=list)

    def to_json(self):
        return {
            "crossings": [{"t": c.t, "dir": c.direction, "mult": c.multiplicity} for c in self.crossings],
            "net": int(self.net_flow),
            "endpoint_kernels": [int(self.endpoint_ambiguity[0]), int(self.endpoint_ambiguity[1])],
        }


@dataclass
class Branches:
    t: np.ndarray
    values: np.ndarray  # (n_t, n_branch), NaN where a branch is outside the window


def _cluster_ids(w, tol_scale):
    ids = np.zeros(len(w), int)
    c = 0
    for i in range(1, len(w)):
        if abs(w[i] - w[i - 1]) > 1e-6 * (tol_scale + abs(w[i])):
            c += 1
        ids[i] = c
    return ids


def start_vector(n: int) -> np.ndarray:
    """Fixed ARPACK starting vector, so repeated runs give identical bytes."""
    return np.random.default_rng(0).standard_normal(n)


def _step_norm(A, B):
    D = A - B
    if D.shape[0] <= 64:
        return float(np.max(np.abs(np.linalg.eigvalsh(D)), initial=0.0))
    from scipy.sparse.linalg import eigsh

    try:
        return float(abs(eigsh(D, k=1, which="LM", return_eigenvectors=False, tol=1e-6, v0=start_vector(D.shape[0]))[0]) * (1 + 1e-5))
    except Exception:  # Lanczos did not converge; fall back to the Frobenius bound
        return float(np.linalg.norm(D))


def _window(H, level, band):
    w, v = np.linalg.eigh(H)
    sel = np.abs(w - level) <= band
    return w[sel], v[:, sel]


def _match(w0, v0, w1, v1, level, band, scale, step=np.inf):
    """Assignment j = perm[i] from window 0 to window 1; -1 when unmatched.

    Pairs farther apart than ``step`` (the Weyl bound) are never the same branch.
    """
    perm = -np.ones(len(w0), int)
    if len(w0) == 0 or len(w1) == 0:
        inner0 = np.abs(w0 - level) <= band / 2
        inner1 = np.abs(w1 - level) <= band / 2
        if inner0.any() or inner1.any():
            raise MatchError("inner eigenvalue without partner")
        return perm
    O = np.abs(v0.conj().T @ v1) ** 2
    c0, c1 = _cluster_ids(w0, scale), _cluster_ids(w1, scale)
    # aggregate over clusters so that rotations inside a degenerate space do not matter
    n0, n1 = c0.max() + 1, c1.max() + 1
    agg = np.zeros((n0, n1))
    np.add.at(agg, (c0[:, None].repeat(len(w1), 1), c1[None, :].repeat(len(w0), 0)), O)
    size0 = np.bincount(c0)
    size1 = np.bincount(c1)
    W = agg[c0][:, c1] / np.maximum(size0[c0][:, None], size1[c1][None, :])
    # individual overlaps break ties inside exactly degenerate clusters
    r, c = linear_sum_assignment(-(W + 1e-3 * O))
    for i, j in zip(r, c):
        if abs(w1[j] - w0[i]) <= step + 1e-9 * scale:
            perm[i] = j
    inner0 = np.abs(w0 - level) <= band / 2
    for i in np.nonzero(inner0)[0]:
        if perm[i] < 0 or W[i, perm[i]] < MATCH_MIN:
            raise MatchError(f"best overlap {W[i, perm[i]] if perm[i] >= 0 else 0:.3f} < {MATCH_MIN}")
    matched1 = set(perm[perm >= 0].tolist())
    for j in np.nonzero(np.abs(w1 - level) <= band / 2)[0]:
        if j not in matched1:
            raise MatchError("inner eigenvalue appeared without partner")
        i = int(np.nonzero(perm == j)[0][0])
        if W[i, j] < MATCH_MIN:
            raise MatchError(f"best overlap {W[i, j]:.3f} < {MATCH_MIN}")
    return perm


def _track(family, grid, band, level):
    ops = [family.at(t) for t in grid]
    scale = max(float(np.abs(ops[0]).max()), 1.0)
    wins = [_window(H, level, band) for H in ops]
    # branches as lists of (grid index, eigenvalue)
    n_t = len(grid)
    steps = [_step_norm(ops[k + 1], ops[k]) for k in range(n_t - 1)]
    for k, d in enumerate(steps):
        if d > band / 4:
            raise MatchError("step exceeds band/4 in operator norm", interval=k)
    rows = [[(0, float(wins[0][0][i]))] for i in range(len(wins[0][0]))]
    slot_of = list(range(len(wins[0][0])))  # window index -> branch id at current point
    for k in range(n_t - 1):
        try:
            perm = _match(*wins[k], *wins[k + 1], level, band, scale, steps[k])
        except MatchError as e:
            raise MatchError(str(e), interval=k) from None
        new_slot = [-1] * len(wins[k + 1][0])
        for i, j in enumerate(perm):
            if j >= 0:
                b = slot_of[i]
                rows[b].append((k + 1, float(wins[k + 1][0][j])))
                new_slot[j] = b
        for j in range(len(new_slot)):
            if new_slot[j] < 0:
                rows.append([(k + 1, float(wins[k + 1][0][j]))])
                new_slot[j] = len(rows) - 1
        slot_of = new_slot
    vals = np.full((n_t, len(rows)), np.nan)
    for b, r in enumerate(rows):
        for k, e in r:
            vals[k, b] = e
    return Branches(np.asarray(grid, float), vals), ops


def track_eigenvalues(family: OperatorFamily, band: float, level: float = 0.0) -> Branches:
    """Continuous branches within |E - level| <= band; raises MatchError if the grid is too coarse."""
    if band <= 0:
        raise ValueError("band must be positive")
    br, _ = _track(family, family.t_grid, band, level)
    return br


def _refined(grid, k):
    mid = 0.5 * (grid[k] + grid[k + 1])
    return np.insert(grid, k + 1, mid)


def spectral_flow(family: OperatorFamily, band: float, level: float = 0.0) -> FlowResult:
    if abs(level) >= band:
        raise ValueError("|level| must be below band")
    grid = np.asarray(family.t_grid, float)
    min_width = np.min(np.abs(np.diff(grid))) / 2 ** MAX_REFINE * (1 - 1e-9)
    total_ref = 0
    while True:
        try:
            br, ops = _track(family, grid, band, level)
        except MatchError as e:
            k = e.interval
            if abs(grid[k + 1] - grid[k]) / 2 < min_width:
                raise MatchError(f"branch matching failed after {MAX_REFINE} refinements near t={grid[k]:.6g}") from None
            grid = _refined(grid, k)
            total_ref += 1
            continue
        norm0 = float(np.linalg.norm(ops[0], 2)) if ops[0].size else 0.0
        norm1 = float(np.linalg.norm(ops[-1], 2)) if ops[-1].size else 0.0
        ktol = 1e-8 * max(norm0, norm1, 1e-300)
        res = _count(br, level, ktol)
        if res[0] == "refine":
            k = res[1]
            if abs(grid[k + 1] - grid[k]) / 2 < min_width:
                raise TransversalityError(f"non-transversal crossing near t={grid[k]:.6g} persists after {MAX_REFINE} refinements")
            grid = _refined(grid, k)
            total_ref += 1
            continue
        crossings, ker0, ker1 = res[1]
        net = int(sum(c.direction * c.multiplicity for c in crossings))
        return FlowResult(crossings, net, (ker0, ker1), family.description, total_ref)


def _count(br: Branches, level, ktol):
    t = br.t
    V = br.values - level
    n_t, nb = V.shape
    ker0 = int(np.sum(np.abs(V[0][~np.isnan(V[0])]) < ktol))
    ker1 = int(np.sum(np.abs(V[-1][~np.isnan(V[-1])]) < ktol))
    raw = []
    for b in range(nb):
        col = V[:, b]
        idx = np.nonzero(~np.isnan(col))[0]
        sgn = [(k, (0 if abs(col[k]) < ktol else (1 if col[k] > 0 else -1))) for k in idx]
        prev = None
        zero_run = []
        for k, s in sgn:
            if s == 0:
                zero_run.append(k)
                continue
            if prev is not None and s != prev[1]:
                k0, k1 = prev[0], k
                e0, e1 = col[k0], col[k1]
                slope = (e1 - e0) / (t[k1] - t[k0])
                if abs(slope) < SLOPE_TOL:
                    return ("refine", k0)
                tc = t[k0] - e0 / slope
                raw.append((tc, 1 if s > prev[1] else -1, k0))
            elif prev is not None and zero_run and s == prev[1]:
                # touched the level without crossing: tangency
                return ("refine", zero_run[0] - 1 if zero_run[0] > 0 else 0)
            prev = (k, s)
            zero_run = []
    # group coincident crossings into multiplicities
    raw.sort()
    span = abs(t[-1] - t[0])
    out = []
    for tc, d, k0 in raw:
        if out and out[-1].direction == d and abs(out[-1].t - tc) <= 1e-6 * span:
            out[-1].multiplicity += 1
        else:
            out.append(Crossing(float(tc), d, 1))
    return ("ok", (out, ker0, ker1))


def brute_force_flow(family: OperatorFamily, level: float = 0.0) -> int:
    """Independent oracle: (# eigenvalues below level at t0) - (# at t1)."""
    H0, H1 = family.at(family.t_grid[0]), family.at(family.t_grid[-1])
    w0, w1 = np.linalg.eigvalsh(H0), np.linalg.eigvalsh(H1)
    ktol = 1e-8 * max(np.abs(w0).max(initial=0), np.abs(w1).max(initial=0), 1e-300)
    return int(np.sum(w0 < level - ktol) - np.sum(w1 < level - ktol))


def staged_flow(stages: list, band: float, level: float = 0.0, junction_tol: float = 1e-10):
    """Per-stage flows and their sum; junction operators must agree entrywise."""
    if not stages:
        raise ValueError("no stages")
    for a, b in zip(stages[:-1], stages[1:]):
        Ha, Hb = a.at(a.t_grid[-1]), b.at(b.t_grid[0])
        if Ha.shape != Hb.shape or np.abs(Ha - Hb).max() > junction_tol:
            raise JunctionError(f"stages '{a.description}' and '{b.description}' do not agree at the junction")
    results = [spectral_flow(s, band, level) for s in stages]
    junctions = [r.endpoint_ambiguity[1] for r in results[:-1]]
    total = FlowResult(
        [c for r in results for c in r.crossings],
        int(sum(r.net_flow for r in results)),
        (results[0].endpoint_ambiguity[0], results[-1].endpoint_ambiguity[1]),
        "total",
        sum(r.refinements for r in results),
        junctions,
    )
    return results, total
