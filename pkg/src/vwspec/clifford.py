"""The 8-dimensional real Clifford module carrying gamma_1..4, rho_1..3 and Gamma.

R^8 is identified with pairs of quaternions (x, y). The gammas act by left
multiplication and swap the two summands, the rhos act by right
multiplication on each summand, and Gamma is +1 on x and -1 on y.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

# quaternion basis order: (1, i, j, k)
_UNITS = {"1": (1, 0, 0, 0), "i": (0, 1, 0, 0), "j": (0, 0, 1, 0), "k": (0, 0, 0, 1)}
_E = [_UNITS["i"], _UNITS["j"], _UNITS["k"], _UNITS["1"]]


def _left(q):
    a, b, c, d = q
    return np.array([[a, -b, -c, -d], [b, a, -d, c], [c, d, a, -b], [d, -c, b, a]], dtype=np.int64)


def _right(q):
    a, b, c, d = q
    return np.array([[a, -b, -c, -d], [b, a, d, -c], [c, -d, a, b], [d, c, -b, a]], dtype=np.int64)


def _conj(q):
    return (q[0], -q[1], -q[2], -q[3])


@dataclass(frozen=True)
class CliffordRep:
    """Integer matrices gamma[0..3], rho[0..2], Gamma. Complex copies via properties."""

    gamma: tuple
    rho: tuple
    Gamma: np.ndarray
    _meta: dict = field(default_factory=dict, compare=False)

    @property
    def gamma_c(self):
        return tuple(g.astype(complex) for g in self.gamma)

    @property
    def rho_c(self):
        return tuple(r.astype(complex) for r in self.rho)

    @property
    def Gamma_c(self):
        return self.Gamma.astype(complex)

    @property
    def gamma_s(self):
        # the circle direction uses gamma_4
        return self.gamma[3]

    def matrices(self):
        """Named list of all eight generators."""
        out = [(f"γ{_sub(a + 1)}", g) for a, g in enumerate(self.gamma)]
        out += [(f"ρ{_sub(k + 1)}", r) for k, r in enumerate(self.rho)]
        out.append(("Γ", self.Gamma))
        return out

    def conjugated(self, O):
        """Rep conjugated by an orthogonal matrix O (float entries)."""
        O = np.asarray(O, dtype=float)
        c = lambda m: O @ m @ O.T
        return CliffordRep(tuple(c(g) for g in self.gamma), tuple(c(r) for r in self.rho), c(self.Gamma))

    def to_json(self):
        return {name: np.asarray(m).astype(int).tolist() for name, m in self.matrices()}


_SUBS = "₀₁₂₃₄₅₆₇₈₉"


def _sub(n: int) -> str:
    return "".join(_SUBS[int(ch)] for ch in str(n))


def build_clifford_rep() -> CliffordRep:
    Z = np.zeros((4, 4), dtype=np.int64)
    gamma = tuple(np.block([[Z, _left(e)], [-_left(_conj(e)), Z]]) for e in _E)
    rho = tuple(np.block([[_right(e), Z], [Z, -_right(e)]]) for e in _E[:3])
    Gamma = np.diag([1, 1, 1, 1, -1, -1, -1, -1]).astype(np.int64)
    rep = CliffordRep(gamma, rho, Gamma)
    bad = verify_relations(rep)
    if bad:  # pragma: no cover - construction is fixed
        raise RuntimeError("; ".join(bad))
    return rep


def _exact(m):
    """Integer copy when every entry is integral, otherwise None."""
    a = np.asarray(m)
    if np.iscomplexobj(a):
        if np.any(a.imag != 0):
            return None
        a = a.real
    r = np.rint(a)
    if not np.array_equal(r, a):
        return None
    return r.astype(np.int64)


def verify_relations(rep: CliffordRep) -> list[str]:
    """All violated identities of the module; empty list when valid.

    Integer matrices are checked exactly. Non-integer input (for instance a
    conjugated rep) is checked at 1e-12.
    """
    named = rep.matrices()
    if len(named) != 8 or any(np.shape(m) != (8, 8) for _, m in named):
        return ["rep must hold eight 8×8 matrices"]
    ints = [_exact(m) for _, m in named]
    exact = all(x is not None for x in ints)
    mats = ints if exact else [np.asarray(m, dtype=float) for _, m in named]
    names = [n for n, _ in named]
    eye = np.eye(8, dtype=np.int64 if exact else float)

    def same(x, y):
        return np.array_equal(x, y) if exact else np.allclose(x, y, atol=1e-12, rtol=0)

    report = []
    kind = ["g"] * 4 + ["r"] * 3 + ["G"]
    for n, m, kd in zip(names, mats, kind):
        if kd == "G":
            if not same(m.T, m):
                report.append(f"{n} not symmetric")
        elif not same(m.T, -m):
            report.append(f"{n} not anti-symmetric")
    # 8 squares + 28 pairs
    for a in range(8):
        sq = mats[a] @ mats[a]
        want = eye if kind[a] == "G" else -eye
        if not same(sq, want):
            report.append(f"{names[a]}² ≠ {'+' if kind[a] == 'G' else '−'}𝕀")
    for a, b in itertools.combinations(range(8), 2):
        x, y = mats[a], mats[b]
        if kind[a] == "r" and kind[b] == "G":
            if not same(x @ y, y @ x):
                report.append(f"{names[a]}{names[b]} − {names[b]}{names[a]} ≠ 0")
        elif not same(x @ y + y @ x, 0 * eye):
            report.append(f"{names[a]}{names[b]} + {names[b]}{names[a]} ≠ 0")
    G = mats[7]
    if not same(np.trace(G) * eye[:1, :1], 0 * eye[:1, :1]):
        report.append("trace(Γ) ≠ 0")
    return report


SIGNS = tuple(itertools.product((-1, 1), repeat=3))


def involutions(rep: CliffordRep, eps: int = 1):
    """The three commuting Hermitian involutions i·eps·gamma_k·rho_k."""
    return [1j * eps * (rep.gamma_c[k] @ rep.rho_c[k]) for k in range(3)]


def joint_eigenprojectors(rep: CliffordRep, eps: int = 1) -> dict:
    """Map (iota1, iota2, iota3) -> rank-1 projector onto the joint eigenline."""
    if eps not in (1, -1):
        raise ValueError("eps must be +1 or -1")
    bad = verify_relations(rep)
    if bad:
        raise ValueError("invalid Clifford rep: " + "; ".join(bad))
    J = involutions(rep, eps)
    eye = np.eye(8)
    out = {}
    for sig in SIGNS:
        P = eye.astype(complex)
        for k in range(3):
            P = P @ (eye + sig[k] * J[k]) / 2
        out[sig] = P
    return out


def joint_eigenbasis(rep: CliffordRep, eps: int = 1) -> dict:
    """Unit vectors spanning each joint eigenline (arbitrary phase)."""
    out = {}
    for sig, P in joint_eigenprojectors(rep, eps).items():
        col = int(np.argmax(np.linalg.norm(P, axis=0)))
        v = P[:, col]
        out[sig] = v / np.linalg.norm(v)
    return out
