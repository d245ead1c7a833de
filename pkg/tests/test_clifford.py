import itertools

import numpy as np
import pytest
from scipy.stats import special_ortho_group

from vwspec.clifford import (
    CliffordRep,
    build_clifford_rep,
    involutions,
    joint_eigenprojectors,
    verify_relations,
)


def test_relations_hold_exactly(rep):
    assert verify_relations(rep) == []


def test_entries_are_signs(rep):
    for _, m in rep.matrices():
        assert set(np.unique(m)).issubset({-1, 0, 1})
        assert m.dtype.kind == "i"


def test_examples(rep):
    I = np.eye(8, dtype=int)
    assert np.array_equal(rep.gamma[0] @ rep.gamma[0], -I)
    assert not np.any(rep.gamma[1] @ rep.rho[2] + rep.rho[2] @ rep.gamma[1])
    assert np.trace(rep.Gamma) == 0
    assert np.array_equal(rep.Gamma @ rep.Gamma, I)


def test_broken_rep_reported(rep):
    bad = CliffordRep((np.eye(8, dtype=int),) + tuple(rep.gamma[1:]), rep.rho, rep.Gamma)
    report = verify_relations(bad)
    assert "γ₁ not anti-symmetric" in report
    assert "γ₁² ≠ −𝕀" in report


def test_rho_swap_still_valid(rep):
    swapped = CliffordRep(rep.gamma, (rep.rho[1], rep.rho[0], rep.rho[2]), rep.Gamma)
    assert verify_relations(swapped) == []


def test_conjugated_rep_valid(rep):
    O = special_ortho_group.rvs(8, random_state=3)
    assert verify_relations(rep.conjugated(O)) == []


@pytest.mark.parametrize("eps", [1, -1])
def test_projectors(rep, eps):
    P = joint_eigenprojectors(rep, eps)
    assert len(P) == 8
    assert np.allclose(sum(P.values()), np.eye(8), atol=1e-14)
    for p in P.values():
        assert np.allclose(p @ p, p, atol=1e-14)
        assert round(np.trace(p).real) == 1
    for a, b in itertools.combinations(P.values(), 2):
        assert np.allclose(a @ b, 0, atol=1e-14)
    for J in involutions(rep, eps):
        assert np.allclose(J @ J, np.eye(8), atol=0)


def test_gamma_s_commutes_and_Gamma_anticommutes(rep):
    gs = rep.gamma_c[3]
    for J in involutions(rep):
        assert np.array_equal(gs @ J, J @ gs)
        assert np.array_equal(rep.Gamma_c @ J, -J @ rep.Gamma_c)


def test_Gamma_swaps_projectors(rep):
    P = joint_eigenprojectors(rep)
    G = rep.Gamma_c
    for sig, p in P.items():
        flipped = tuple(-s for s in sig)
        assert np.allclose(G @ p @ G, P[flipped], atol=1e-14)


def test_deterministic():
    a, b = build_clifford_rep(), build_clifford_rep()
    assert a.to_json() == b.to_json()
