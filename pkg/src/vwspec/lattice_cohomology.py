"""Exact arithmetic on unimodular intersection lattices.

Everything here works with ``fractions.Fraction``. Classes are coefficient
vectors over the basis of a :class:`UnimodularForm`; every search result is
re-checked with :func:`pairing` before it is returned.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np


class LatticeError(ValueError):
    """A construction does not apply to the given input (the message says why)."""


# standard E8 Cartan matrix: chain 1-2-3-4-5-6-7 with node 8 attached to node 5
_E8_EDGES = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (4, 7)]


def e8_gram() -> list[list[int]]:
    g = [[2 if i == j else 0 for j in range(8)] for i in range(8)]
    for a, b in _E8_EDGES:
        g[a][b] = g[b][a] = -1
    return g


def _det(mat) -> int:
    """Bareiss fraction-free determinant of an integer matrix."""
    a = [list(map(int, r)) for r in mat]
    n = len(a)
    if n == 0:
        return 1
    sign, prev = 1, 1
    for k in range(n - 1):
        if a[k][k] == 0:
            for i in range(k + 1, n):
                if a[i][k] != 0:
                    a[k], a[i] = a[i], a[k]
                    sign = -sign
                    break
            else:
                return 0
        for i in range(k + 1, n):
            for j in range(k + 1, n):
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) // prev
        prev = a[k][k]
    return sign * a[-1][-1]


@dataclass(frozen=True)
class UnimodularForm:
    kind: str  # "odd" or "even"
    gram: tuple
    basis_labels: tuple
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        g = [list(r) for r in self.gram]
        n = len(g)
        if any(len(r) != n for r in g):
            raise LatticeError("gram matrix must be square")
        if any(g[i][j] != g[j][i] for i in range(n) for j in range(n)):
            raise LatticeError("gram matrix must be symmetric")
        if any(int(x) != x for r in g for x in r):
            raise LatticeError("gram matrix must be integral")
        if abs(_det(g)) != 1:
            raise LatticeError("gram matrix is not unimodular")
        if self.kind == "even" and any(g[i][i] % 2 for i in range(n)):
            raise LatticeError("even form with odd diagonal entry")
        if len(self.basis_labels) != n:
            raise LatticeError("one label per basis vector")

    @property
    def rank(self) -> int:
        return len(self.gram)

    def index(self, label: str) -> int:
        return self.basis_labels.index(label)

    def basis_vector(self, label: str) -> "CohClass":
        c = [0] * self.rank
        c[self.index(label)] = 1
        return CohClass.of(c)

    def labels_with(self, prefix: str) -> list[str]:
        return [s for s in self.basis_labels if s[: len(prefix)] == prefix and s[len(prefix):].isdigit()]

    def to_json(self):
        return {"kind": self.kind, "params": dict(self.params), "gram": [list(map(int, r)) for r in self.gram]}

    @staticmethod
    def from_json(obj) -> "UnimodularForm":
        kind = obj.get("kind")
        params = obj.get("params", {})
        if kind == "odd" and "gram" not in obj:
            return odd_form(**params)
        if kind == "even" and "gram" not in obj:
            return even_form(**params)
        gram = obj["gram"]
        labels = obj.get("labels") or [f"x{i + 1}" for i in range(len(gram))]
        return UnimodularForm(kind, tuple(tuple(r) for r in gram), tuple(labels), params)


def odd_form(p_plus: int, q_minus: int) -> UnimodularForm:
    """diag(+1^p, -1^q) with basis P1..Pp, Q1..Qq."""
    if p_plus < 0 or q_minus < 0 or p_plus + q_minus == 0:
        raise LatticeError("need a positive rank")
    n = p_plus + q_minus
    g = tuple(tuple((1 if i < p_plus else -1) if i == j else 0 for j in range(n)) for i in range(n))
    labels = tuple([f"P{j + 1}" for j in range(p_plus)] + [f"Q{a + 1}" for a in range(q_minus)])
    return UnimodularForm("odd", g, labels, {"p_plus": p_plus, "q_minus": q_minus})


def even_form(n_hyperbolic: int, e8_count: int = 0) -> UnimodularForm:
    """N hyperbolic pairs (P_j, Q_j) followed by |e8_count| copies of sign(e8_count)·E8."""
    if n_hyperbolic < 0:
        raise LatticeError("n_hyperbolic must be non-negative")
    n = 2 * n_hyperbolic + 8 * abs(e8_count)
    if n == 0:
        raise LatticeError("need a positive rank")
    g = [[0] * n for _ in range(n)]
    labels = []
    for j in range(n_hyperbolic):
        g[2 * j][2 * j + 1] = g[2 * j + 1][2 * j] = 1
        labels += [f"P{j + 1}", f"Q{j + 1}"]
    s = 1 if e8_count > 0 else -1
    e8 = e8_gram()
    for b in range(abs(e8_count)):
        o = 2 * n_hyperbolic + 8 * b
        for i in range(8):
            for j in range(8):
                g[o + i][o + j] = s * e8[i][j]
        labels += [f"E{8 * b + i + 1}" for i in range(8)]
    return UnimodularForm("even", tuple(map(tuple, g)), tuple(labels), {"n_hyperbolic": n_hyperbolic, "e8_count": e8_count})


@dataclass(frozen=True)
class CohClass:
    coeffs: tuple

    @staticmethod
    def of(values) -> "CohClass":
        return CohClass(tuple(Fraction(v) for v in values))

    def __len__(self):
        return len(self.coeffs)

    def __add__(self, other):
        _same_dim(self, other)
        return CohClass(tuple(a + b for a, b in zip(self.coeffs, other.coeffs)))

    def __sub__(self, other):
        _same_dim(self, other)
        return CohClass(tuple(a - b for a, b in zip(self.coeffs, other.coeffs)))

    def scale(self, f) -> "CohClass":
        f = Fraction(f)
        return CohClass(tuple(f * a for a in self.coeffs))

    def is_zero(self) -> bool:
        return all(a == 0 for a in self.coeffs)

    def cleared(self) -> "CohClass":
        """Integer multiple with coprime entries (sign kept)."""
        if self.is_zero():
            return self
        den = math.lcm(*(a.denominator for a in self.coeffs))
        ints = [int(a * den) for a in self.coeffs]
        g = math.gcd(*ints)
        return CohClass.of([x // g for x in ints])

    def as_strings(self):
        return [str(a) for a in self.coeffs]


def _same_dim(a: CohClass, b: CohClass):
    if len(a) != len(b):
        raise LatticeError(f"dimension mismatch: {len(a)} vs {len(b)}")


def _cls(form: UnimodularForm, t) -> CohClass:
    c = t if isinstance(t, CohClass) else CohClass.of(t)
    if len(c) != form.rank:
        raise LatticeError(f"class has {len(c)} coefficients, form has rank {form.rank}")
    return c


def pairing(form: UnimodularForm, t, u) -> Fraction:
    t, u = _cls(form, t), _cls(form, u)
    g = form.gram
    n = form.rank
    total = Fraction(0)
    for i in range(n):
        if t.coeffs[i] == 0:
            continue
        row = g[i]
        s = sum((row[j] * u.coeffs[j] for j in range(n) if row[j]), Fraction(0))
        total += t.coeffs[i] * s
    return total


# ---------------------------------------------------------------- Pontrjagin


@dataclass
class ClassResult:
    t: CohClass
    checks: dict
    route: str
    notes: list = field(default_factory=list)

    def to_json(self):
        return {
            "class": self.t.as_strings(),
            "checks": {k: str(v) for k, v in self.checks.items()},
            "route": self.route,
            "notes": list(self.notes),
        }


def _hyperbolic_pairs(form):
    ps = form.labels_with("P")
    out = []
    for p in ps:
        q = "Q" + p[1:]
        if q in form.basis_labels:
            i, j = form.index(p), form.index(q)
            g = form.gram
            if g[i][i] == 0 and g[j][j] == 0 and g[i][j] == 1:
                out.append((i, j))
    return out


def pontrjagin_class_search(form: UnimodularForm, k: int, coeff_min: int = 1) -> ClassResult:
    """Class t with t·t = k and leading coefficient at least ``coeff_min``.

    Raises LatticeError with a congruence report when the branch cannot reach k.
    """
    k = int(k)
    if coeff_min < 1:
        raise LatticeError("coeff_min must be positive")
    if form.kind == "even":
        return _pontrjagin_even(form, k, coeff_min)
    return _pontrjagin_odd(form, k, coeff_min)


def _pontrjagin_even(form, k, cmin):
    pairs = _hyperbolic_pairs(form)
    if k % 2:
        raise LatticeError(f"k = {k} is odd; an even form only represents even squares")
    half = k // 2
    coeffs = [0] * form.rank
    if len(pairs) >= 2:
        (x1, x2), (x3, x4) = pairs[:2]
        a = cmin
        if half % a == 0:
            b, c, d = half // a, 0, 0
        else:
            b, c, d = 0, 1, half
        coeffs[x1], coeffs[x2], coeffs[x3], coeffs[x4] = a, b, c, d
        route = "two hyperbolic pairs"
    elif len(pairs) == 1:
        x1, x2 = pairs[0]
        if half == 0:
            a, b = cmin, 0
        else:
            divs = [a for a in range(cmin, abs(half) + 1) if half % a == 0]
            if not divs:
                raise LatticeError(f"k = {k}: one hyperbolic pair needs a divisor of k/2 that is at least {cmin}")
            a, b = divs[0], half // divs[0]
        coeffs[x1], coeffs[x2] = a, b
        route = "one hyperbolic pair"
    else:
        raise LatticeError("even branch needs at least one hyperbolic pair")
    t = CohClass.of(coeffs)
    return _verified(form, t, {"t.t": k}, route)


def _signed_triple(form, eps):
    diag = [form.gram[i][i] for i in range(form.rank)]
    same = [i for i in range(form.rank) if diag[i] == eps]
    opp = [i for i in range(form.rank) if diag[i] == -eps]
    if len(same) < 2 or not opp:
        return None
    return same[0], same[1], opp[0]


def _pontrjagin_odd(form, k, cmin):
    g = form.gram
    n = form.rank
    if any(g[i][j] for i in range(n) for j in range(n) if i != j):
        raise LatticeError("odd branch expects a diagonal form")
    if n < 3:
        raise LatticeError("odd branch needs rank >= 3")
    reports = []
    for eps in (1, -1):
        tri = _signed_triple(form, eps)
        if tri is None:
            reports.append(f"eps={eps:+d}: not enough basis vectors of the required signs")
            continue
        ek = eps * k
        if ek % 4 == 0:
            parity = 0
        elif ek % 4 == 1:
            parity = 1
        else:
            reports.append(f"eps={eps:+d}: eps*k = {ek} is 2 or 3 mod 4, outside the constructed classes")
            continue
        i1, i2, i3 = tri
        # ansatz q x1 + (2p+1) x2 + (2p-1) x3 has square eps(q^2 + 8p); x3 enters with a minus sign
        q = cmin + ((cmin % 2) != parity)
        for _ in range(4):
            if (ek - q * q) % 8 == 0:
                p = (ek - q * q) // 8
                coeffs = [0] * n
                coeffs[i1], coeffs[i2], coeffs[i3] = q, 2 * p + 1, -(2 * p - 1)
                return _verified(form, CohClass.of(coeffs), {"t.t": k}, "odd (2p+1, 2p-1)",
                                 [f"eps={eps:+d}", f"q={q}", f"p={p}"])
            q += 2
        # alternative ansatz (p+1, p-1): square eps(q^2 + 4p)
        q = cmin + ((cmin % 2) != parity)
        p = (ek - q * q) // 4
        coeffs = [0] * n
        coeffs[i1], coeffs[i2], coeffs[i3] = q, p + 1, -(p - 1)
        return _verified(form, CohClass.of(coeffs), {"t.t": k}, "odd (p+1, p-1)",
                         [f"eps={eps:+d}", f"q={q}", f"p={p}", "2p+/-1 ansatz needs eps*k = q^2 mod 8"])
    raise LatticeError(f"k = {k} not representable in the odd branch: " + "; ".join(reports))


def _verified(form, t, expected, route, notes=None):
    checks = {}
    for name, want in expected.items():
        got = pairing(form, t, t)
        if got != want:
            raise AssertionError(f"internal check {name} = {got}, expected {want}")
        checks[name] = got
    return ClassResult(t, checks, route, list(notes or []))


# ---------------------------------------------------------------- Kahler-type t


def _proportional(a: CohClass, b: CohClass) -> bool:
    if a.is_zero() or b.is_zero():
        return True
    i = next(k for k, x in enumerate(a.coeffs) if x != 0)
    lam = b.coeffs[i] / a.coeffs[i]
    return all(y == lam * x for x, y in zip(a.coeffs, b.coeffs))


def _nullspace(rows: list[list[Fraction]], n: int) -> list[list[Fraction]]:
    """Exact nullspace basis from the reduced row echelon form; each vector has first nonzero entry positive."""
    m = [list(map(Fraction, r)) for r in rows]
    pivots = []
    r = 0
    for c in range(n):
        piv = next((i for i in range(r, len(m)) if m[i][c] != 0), None)
        if piv is None:
            continue
        m[r], m[piv] = m[piv], m[r]
        pv = m[r][c]
        m[r] = [x / pv for x in m[r]]
        for i in range(len(m)):
            if i != r and m[i][c] != 0:
                f = m[i][c]
                m[i] = [x - f * y for x, y in zip(m[i], m[r])]
        pivots.append(c)
        r += 1
        if r == len(m):
            break
    basis = []
    for free in (c for c in range(n) if c not in pivots):
        v = [Fraction(0)] * n
        v[free] = Fraction(1)
        for i, pc in enumerate(pivots):
            v[pc] = -m[i][free]
        lead = next(x for x in v if x != 0)
        if lead < 0:
            v = [-x for x in v]
        basis.append(v)
    return basis


def _int_vec(v):
    den = math.lcm(*(x.denominator for x in v))
    ints = [int(x * den) for x in v]
    g = math.gcd(*ints) or 1
    return [Fraction(x // g) for x in ints]


def _check_tK(form, t, K, w, want_tK_zero):
    tt = pairing(form, t, t)
    tK = pairing(form, t, K)
    tw = pairing(form, t, w)
    ok = tt == 0 and tw != 0 and ((tK == 0) if want_tK_zero else (tK != 0))
    return ok, {"t.t": tt, "t.K": tK, "t.w": tw}


def kahler_t_search(form: UnimodularForm, K, w, want_tK_zero: bool = True, route: str = "auto") -> ClassResult:
    """Class t with t·t = 0 and t·w != 0, with t·K = 0 (or t·K != 0 when the flag is off).

    Odd forms use triples of P's and Q's; even forms use pairs from the
    hyperbolic summand and, failing that, the definite summand. ``route`` can
    force "pairs" or "definite" on even forms.
    """
    K, w = _cls(form, K), _cls(form, w)
    if _proportional(K, w):
        raise LatticeError("K proportional to w: every candidate t has t.w = 0 once t.K = 0")
    if form.kind == "odd":
        res = _kahler_odd(form, K, w, want_tK_zero)
    else:
        res = _kahler_even(form, K, w, want_tK_zero, route)
    if res is None:
        raise LatticeError("no class found by the prescribed enumeration")
    return res


def _kahler_odd(form, K, w, want_zero):
    P = form.labels_with("P")
    Q = form.labels_with("Q")
    if len(P) < 3 or len(Q) < 3:
        raise LatticeError("odd branch needs b2+ >= 3 and b2- >= 3")
    ip = [form.index(s) for s in P]
    iq = [form.index(s) for s in Q]
    kc = K.coeffs
    for J in itertools.combinations(range(len(ip)), 3):
        for A in itertools.permutations(range(len(iq)), 3):
            if want_zero:
                n3 = [kc[ip[j]] for j in J]
                m3 = [kc[iq[a]] for a in A]
                cands = _nullspace([n3, m3], 3)
            else:
                cands = [[Fraction(int(i == k)) for i in range(3)] for k in range(3)]
            for c in cands:
                c = _int_vec(c)
                coeffs = [Fraction(0)] * form.rank
                for k in range(3):
                    coeffs[ip[J[k]]] += c[k]
                    coeffs[iq[A[k]]] += c[k]
                t = CohClass(tuple(coeffs))
                ok, checks = _check_tK(form, t, K, w, want_zero)
                if ok:
                    labels = [P[J[k]] + "+" + Q[A[k]] for k in range(3)]
                    return ClassResult(t, checks, "odd triples", [f"pairs {labels}", f"c={[str(x) for x in c]}"])
    return None


def _kahler_even(form, K, w, want_zero, route):
    pairs = _hyperbolic_pairs(form)
    if len(pairs) < 2:
        raise LatticeError("spin branch needs at least two hyperbolic pairs")
    if route not in ("auto", "pairs", "definite"):
        raise LatticeError(f"unknown route {route!r}")
    if route in ("auto", "pairs"):
        res = _kahler_even_pairs(form, K, w, want_zero, pairs)
        if res is not None or route == "pairs":
            return res
    return _kahler_even_definite(form, K, w, want_zero, pairs)


def _kahler_even_pairs(form, K, w, want_zero, pairs):
    # the coefficient that makes t.K vanish is the pairing K.U (for U = P_j this is the Q_j coefficient of K)
    elems = [(j, pairs[j][s], form.basis_labels[pairs[j][s]]) for j in range(len(pairs)) for s in (0, 1)]
    for a, b in itertools.combinations(elems, 2):
        if a[0] == b[0]:
            continue
        ua, ub = form.basis_vector(a[2]), form.basis_vector(b[2])
        x1, x2 = pairing(form, K, ua), pairing(form, K, ub)
        if want_zero:
            cands = [[x2, -x1]] if (x1, x2) != (0, 0) else [[Fraction(1), Fraction(0)], [Fraction(0), Fraction(1)]]
        else:
            cands = [[Fraction(1), Fraction(0)], [Fraction(0), Fraction(1)], [Fraction(1), Fraction(1)]]
        for c in cands:
            c = _int_vec(c)
            t = ua.scale(c[0]) + ub.scale(c[1])
            ok, checks = _check_tK(form, t, K, w, want_zero)
            if ok:
                return ClassResult(t, checks, "spin pairs", [f"U=({a[2]},{b[2]})", f"c={[str(x) for x in c]}"])
    return None


def _kahler_even_definite(form, K, w, want_zero, pairs):
    N = len(pairs)
    hyp = {i for pr in pairs for i in pr}
    dfn = [i for i in range(form.rank) if i not in hyp]
    kc = K.coeffs
    n = [kc[p] for p, _ in pairs]
    m = [kc[q] for _, q in pairs]
    swap = all(x == 0 for x in n) and any(x != 0 for x in m)
    if swap:  # treat Q as P so that the n-vector is the nonzero one
        n, m = m, n
        pairs = [(q, p) for p, q in pairs]
    T = [Fraction(0)] * form.rank
    for i in dfn:
        T[i] = kc[i]
    T = CohClass(tuple(T))
    Tc_cands = []
    for i in dfn:
        v = [0] * form.rank
        v[i] = 1
        Tc_cands.append(CohClass.of(v))
    if not Tc_cands:
        Tc_cands = [CohClass.of([0] * form.rank)]
    c_space = _nullspace([m], N) if any(x != 0 for x in m) else [[Fraction(int(i == k)) for i in range(N)] for k in range(N)]
    n_zero = all(x == 0 for x in n)
    for Tc in Tc_cands:
        if n_zero and want_zero:
            # T_c must be orthogonal to T; project the candidate
            TT = pairing(form, T, T)
            if TT != 0:
                Tc = Tc - T.scale(pairing(form, Tc, T) / TT)
        for c in c_space:
            if not n_zero and _rank2(n, c) < 2:
                continue
            TcT = pairing(form, Tc, T)
            TcTc = pairing(form, Tc, Tc)
            x = _solve_x(n, c, -TcT, -TcTc / 2, n_zero)
            if x is None:
                continue
            coeffs = list(Tc.coeffs)
            for j, (p, q) in enumerate(pairs):
                coeffs[p] += c[j]
                coeffs[q] += x[j]
            t = CohClass(tuple(coeffs))
            ok, checks = _check_tK(form, t, K, w, want_zero)
            if ok:
                return ClassResult(t, checks, "spin definite summand",
                                   [f"c={[str(v) for v in c]}", f"x={[str(v) for v in x]}", "P/Q roles swapped" if swap else ""])
    return None


def _rank2(a, b):
    return 2 if any(a[i] * b[j] != a[j] * b[i] for i in range(len(a)) for j in range(len(a))) else 1


def _solve_x(n, c, rhs_n, rhs_c, n_zero):
    """Least-norm x in span(n, c) with n.x = rhs_n and c.x = rhs_c (only c.x when n = 0)."""
    dot = lambda u, v: sum((p * q for p, q in zip(u, v)), Fraction(0))
    if n_zero:
        cc = dot(c, c)
        if rhs_n != 0 or cc == 0:
            return None
        return [rhs_c / cc * v for v in c]
    a11, a12, a22 = dot(n, n), dot(n, c), dot(c, c)
    det = a11 * a22 - a12 * a12
    if det == 0:
        return None
    # x = u n + v c
    u = (rhs_n * a22 - rhs_c * a12) / det
    v = (a11 * rhs_c - a12 * rhs_n) / det
    return [u * p + v * q for p, q in zip(n, c)]


# ---------------------------------------------------------------- symplectic zeta


@dataclass
class ZetaResult:
    zeta: CohClass
    checks: dict
    route: str
    assignment: tuple | None = None
    epsilon: Fraction | None = None
    notes: list = field(default_factory=list)

    def to_json(self):
        return {
            "class": self.zeta.as_strings(),
            "checks": {k: str(v) for k, v in self.checks.items()},
            "route": self.route,
            "assignment": None if self.assignment is None else [list(map(str, a)) for a in self.assignment],
            "epsilon": None if self.epsilon is None else str(self.epsilon),
            "notes": list(self.notes),
        }


def _zeta_checks(form, z, K, w):
    return {"z.z": pairing(form, z, z), "z.K": pairing(form, z, K), "z.w": pairing(form, z, w)}


def symplectic_zeta_search(form: UnimodularForm, K, w, asd_indices: Sequence[int] | None = None,
                           max_denominator: int = 10**4) -> ZetaResult:
    """Rational class z with z·z = 0, z·K = 0 and z·w != 0 for K·K <= 0.

    ``w`` must be a positive class in the span of the P's. ``asd_indices``
    restricts which Q's (0-based, among the Q's) may carry the auxiliary
    anti-self-dual direction and the correction class; default is all.
    """
    if form.kind != "odd":
        raise LatticeError("K.K < 0 forces a non-spin form; pass a diagonal odd form")
    K, w = _cls(form, K), _cls(form, w)
    P = [form.index(s) for s in form.labels_with("P")]
    Q = [form.index(s) for s in form.labels_with("Q")]
    if len(P) < 3 or len(Q) < 3:
        raise LatticeError("needs b2+ >= 3 and b2- >= 3")
    if any(w.coeffs[i] != 0 for i in Q) or pairing(form, w, w) <= 0:
        raise LatticeError("w must be a nonzero class in the span of the P's")
    Qa = Q if asd_indices is None else [Q[i] for i in asd_indices]
    KK = pairing(form, K, K)
    if KK > 0:
        raise LatticeError("K.K > 0: no universal algorithm is known for this case")
    if K.is_zero():
        # torsion: no constraint from K, any square-zero class with w-pairing works
        z = w.scale(0)
        coeffs = list(z.coeffs)
        coeffs[P[0]] = Fraction(1)
        coeffs[Qa[0]] = Fraction(1)
        z = CohClass(tuple(coeffs))
        if pairing(form, z, w) == 0:
            j = next(i for i in P if w.coeffs[i] != 0)
            coeffs = [Fraction(0)] * form.rank
            coeffs[j], coeffs[Qa[0]] = Fraction(1), Fraction(1)
            z = CohClass(tuple(coeffs))
        checks = _zeta_checks(form, z, K, w)
        _assert_zeta(checks)
        return ZetaResult(z, checks, "torsion K", notes=["K is torsion: only the square-zero condition constrains z"])

    ww = float(pairing(form, w, w))
    wf = np.array([float(x) for x in w.coeffs]) / math.sqrt(ww)
    kf = np.array([float(x) for x in K.coeffs])
    plus = np.zeros(form.rank)
    plus[P] = kf[P]
    minus = np.zeros(form.rank)
    minus[Q] = kf[Q]
    alpha = float(plus @ wf)  # P-block of the form is the identity
    c_vec = plus - alpha * wf
    c2 = float(c_vec @ c_vec)
    beta = math.sqrt(float(minus @ minus))

    if KK == 0 and c2 < 1e-12:
        cexact = _plus_part_minus_w(form, K, w, P)
        if cexact.is_zero():
            z = K
            checks = _zeta_checks(form, z, K, w)
            _assert_zeta(checks)
            return ZetaResult(z, checks, "zeta = K", notes=["K.K = 0 and K has no component orthogonal to w"])

    # first attempts: beta w + alpha y + sqrt(beta^2 - alpha^2) y'
    y = minus / beta
    yp = _orthogonal_unit(y, Qa, form.rank)
    if yp is None:
        raise LatticeError("designated anti-self-dual subspace is too small for an auxiliary direction")
    zf = beta * wf + alpha * y + math.sqrt(max(beta * beta - alpha * alpha, 0.0)) * yp
    a = CohClass(tuple(Fraction(x).limit_denominator(max_denominator) for x in zf))
    # make the rational approximation exactly orthogonal to K
    aK = pairing(form, a, K)
    if aK != 0:
        if KK != 0:
            a = a - K.scale(aK / KK)
        else:
            v = max(range(form.rank), key=lambda i: abs(pairing(form, form.basis_vector(form.basis_labels[i]), K)))
            e = form.basis_vector(form.basis_labels[v])
            a = a - e.scale(aK / pairing(form, e, K))
    eps = pairing(form, a, a)
    if eps == 0:
        checks = _zeta_checks(form, a, K, w)
        _assert_zeta(checks)
        return ZetaResult(a, checks, "rational approximation", epsilon=eps)

    best = None
    Pi = P
    for j1, j2 in itertools.permutations(range(len(Pi)), 2):
        if j1 > j2:
            continue
        for a1, a2 in itertools.permutations(range(len(Qa)), 2):
            for d1, d2 in itertools.product((1, -1), repeat=2):
                J = (Pi[j1], Pi[j2])
                A = (Qa[a1], Qa[a2])
                D = (d1, d2)
                # s = sum x_k (P_j(k) + delta_k Q_a(k)); Q.Q = -1
                r1 = [K.coeffs[J[k]] - D[k] * K.coeffs[A[k]] for k in range(2)]
                r2 = [a.coeffs[J[k]] - D[k] * a.coeffs[A[k]] for k in range(2)]
                det = r1[0] * r2[1] - r1[1] * r2[0]
                if det == 0:
                    continue
                rhs2 = -eps / 2
                x1 = (0 * r2[1] - r1[1] * rhs2) / det
                x2 = (r1[0] * rhs2 - 0 * r2[0]) / det
                norm = x1 * x1 + x2 * x2
                key = (norm, J, A, D)
                if best is None or key < best[0]:
                    best = (key, (x1, x2))
    if best is None:
        raise LatticeError("no assignment gives a solvable two-variable system")
    (norm, J, A, D), (x1, x2) = best
    coeffs = list(a.coeffs)
    for k, xk in enumerate((x1, x2)):
        coeffs[J[k]] += xk
        coeffs[A[k]] += D[k] * xk
    z = CohClass(tuple(coeffs))
    checks = _zeta_checks(form, z, K, w)
    _assert_zeta(checks)
    assignment = tuple((form.basis_labels[J[k]], form.basis_labels[A[k]], D[k]) for k in range(2))
    return ZetaResult(z, checks, "approximation plus correction", assignment, eps,
                      [f"x=({x1}, {x2})", f"|x|^2={norm}"])


def _plus_part_minus_w(form, K, w, P):
    plus = [Fraction(0)] * form.rank
    for i in P:
        plus[i] = K.coeffs[i]
    plus = CohClass(tuple(plus))
    return plus - w.scale(pairing(form, plus, w) / pairing(form, w, w))


def _orthogonal_unit(y, Qidx, n):
    """Unit vector in span(Q) orthogonal to y (Euclidean on the Q block)."""
    best = None
    for i in Qidx:
        e = np.zeros(n)
        e[i] = 1.0
        v = e - (e @ y) * y
        nv = np.linalg.norm(v)
        if best is None or nv > best[0] + 1e-12:
            best = (nv, v / nv if nv > 0 else v)
    if best is None or best[0] < 1e-9:
        return None
    return best[1]


def _assert_zeta(checks):
    if checks["z.z"] != 0 or checks["z.K"] != 0 or checks["z.w"] == 0:
        raise AssertionError(f"zeta verification failed: {checks}")


# ---------------------------------------------------------------- index and criteria


def index_formula(b1: int, b2plus: int, tt, tK, tK_sign: int = -1) -> Fraction:
    """(1 + b2+ - b1) + t·t + tK_sign * t·K; tK_sign defaults to -1."""
    if tK_sign not in (1, -1):
        raise LatticeError("tK_sign must be +1 or -1")
    return Fraction(1 + int(b2plus) - int(b1)) + Fraction(tt) + tK_sign * Fraction(tK)


@dataclass
class Boundedness:
    bounded: bool
    divergence_rate: int
    slope: int
    variation: float

    def to_json(self):
        return {"bounded": self.bounded, "divergence_rate": self.divergence_rate, "slope": self.slope,
                "variation": self.variation}


def boundedness_criterion(n: int, eps_bound: float, eps=None, q_values=range(1, 51)) -> Boundedness:
    """Pairing sequence q -> q n + eps_q with |eps_q| <= eps_bound.

    ``variation`` is max - min of the sequence over ``q_values`` when an explicit
    ``eps`` callable is given, otherwise the worst case 2*eps_bound (bounded) or inf.
    """
    if eps_bound < 0:
        raise LatticeError("eps_bound must be non-negative")
    n = int(n)
    bounded = n == 0
    if eps is not None:
        vals = []
        for q in q_values:
            e = float(eps(q))
            if abs(e) > eps_bound + 1e-12:
                raise LatticeError(f"|eps_{q}| = {abs(e)} exceeds eps_bound")
            vals.append(q * n + e)
        variation = float(max(vals) - min(vals)) if vals else 0.0
    else:
        variation = 2.0 * eps_bound if bounded else math.inf
    return Boundedness(bounded, abs(n), n, variation)


@dataclass
class FlowEstimate:
    central: Fraction
    kappa_marker: str = "+/- kappa"

    def to_json(self):
        return {"central": str(self.central), "uncertainty": self.kappa_marker}


def prop515_estimate(F_class, Sigma_class, form: UnimodularForm) -> FlowEstimate:
    """Central value of the flow estimate: the exact pairing F·Σ (1/pi already absorbed in F)."""
    return FlowEstimate(pairing(form, F_class, Sigma_class))


def prop515_sequence(zeta, K, form: UnimodularForm, m, q_values) -> list[FlowEstimate]:
    """Estimates along r = q pi / m, with F = (r/pi) zeta = (q/m) zeta."""
    zeta = _cls(form, zeta)
    m = Fraction(m)
    return [prop515_estimate(zeta.scale(Fraction(q) / m), K, form) for q in q_values]
