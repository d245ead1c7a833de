import random
from fractions import Fraction

import pytest

from vwspec.lattice_cohomology import (
    CohClass,
    LatticeError,
    UnimodularForm,
    boundedness_criterion,
    e8_gram,
    even_form,
    index_formula,
    kahler_t_search,
    odd_form,
    pairing,
    pontrjagin_class_search,
    prop515_estimate,
    prop515_sequence,
    symplectic_zeta_search,
)

O33 = odd_form(3, 3)


def test_pairing_examples():
    assert pairing(even_form(1), [1, 0], [0, 1]) == 1
    assert pairing(odd_form(1, 1), [1, 1], [1, 1]) == 0
    assert pairing(even_form(0, 1), [1] + [0] * 7, [1] + [0] * 7) == 2
    with pytest.raises(LatticeError):
        pairing(O33, [1, 0], [1, 0])


def test_e8_unimodular_even():
    from vwspec.lattice_cohomology import _det

    g = e8_gram()
    assert _det(g) == 1 and all(g[i][i] == 2 for i in range(8))


def test_form_validation():
    with pytest.raises(LatticeError):
        UnimodularForm("odd", ((2, 0), (0, 1)), ("P1", "Q1"), {})


def test_pontrjagin_examples():
    S = even_form(2)
    assert pontrjagin_class_search(S, 2, 1).t.coeffs == tuple(map(Fraction, (1, 1, 0, 0)))
    assert pontrjagin_class_search(S, 0, 100).t.coeffs == tuple(map(Fraction, (100, 0, 0, 0)))
    r = pontrjagin_class_search(odd_form(2, 1), 4)
    assert r.t.coeffs == tuple(map(Fraction, (2, 1, 1)))


@pytest.mark.parametrize("k", range(-40, 41, 2))
def test_pontrjagin_even_all(k):
    S = even_form(2)
    for cm in (1, 9):
        t = pontrjagin_class_search(S, k, cm).t
        assert pairing(S, t, t) == k
        assert max(abs(c) for c in t.coeffs) >= cm


def test_pontrjagin_odd_congruences():
    for k in range(-40, 41):
        ok = k % 4 == 0 or k % 4 == 1 or (-k) % 4 == 1
        if ok:
            t = pontrjagin_class_search(O33, k, 5).t
            assert pairing(O33, t, t) == k
    with pytest.raises(LatticeError):
        pontrjagin_class_search(O33, 2)


def test_kahler_example():
    r = kahler_t_search(O33, [1] * 6, [2, 1, 1, 0, 0, 0])
    t = r.t
    assert t.coeffs == tuple(map(Fraction, (1, -1, 0, 1, -1, 0)))
    assert pairing(O33, t, t) == 0 and pairing(O33, t, [1] * 6) == 0
    assert pairing(O33, t, [2, 1, 1, 0, 0, 0]) == 1


def test_kahler_proportional_rejected():
    with pytest.raises(LatticeError, match="proportional"):
        kahler_t_search(O33, [2] * 6, [1] * 6)


def test_kahler_spin_definite_route():
    SE = even_form(2, 1)
    K = [1, 0, 0, 0] + [0] * 8
    w = [0, 2, 0, 0, 1] + [0] * 7
    r = kahler_t_search(SE, K, w, route="definite")
    t = r.t
    assert pairing(SE, t, t) == 0 and pairing(SE, t, K) == 0 and pairing(SE, t, w) != 0


@pytest.mark.parametrize("form", [O33, odd_form(4, 5), even_form(2, 1), even_form(3, -1)], ids=str)
def test_kahler_random(form):
    rng = random.Random(7)
    n = 0
    while n < 15:
        K = [rng.randint(-3, 3) for _ in range(form.rank)]
        w = [rng.randint(-3, 3) for _ in range(form.rank)]
        try:
            r = kahler_t_search(form, K, w)
        except LatticeError as e:
            assert "proportional" in str(e) or "zero" in str(e)
            continue
        n += 1
        assert pairing(form, r.t, r.t) == 0 and pairing(form, r.t, K) == 0 and pairing(form, r.t, w) != 0


def test_zeta_examples():
    w = [1, 0, 0, 0, 0, 0]
    for K in ([1, 0, 0, 1, 1, 0], [1, 1, 0, 1, 1, 0], [1, 0, 0, 1, 0, 0]):
        z = symplectic_zeta_search(O33, K, w).zeta
        assert pairing(O33, z, z) == 0 and pairing(O33, z, K) == 0 and pairing(O33, z, w) != 0
    with pytest.raises(LatticeError, match="universal"):
        symplectic_zeta_search(O33, [2, 0, 0, 1, 0, 0], w)


def test_zeta_K_itself():
    r = symplectic_zeta_search(O33, [1, 0, 0, 1, 0, 0], [1, 0, 0, 0, 0, 0])
    assert pairing(O33, [1, 0, 0, 1, 0, 0], [1, 0, 0, 1, 0, 0]) == 0
    assert r.zeta.cleared().coeffs in {tuple(map(Fraction, (1, 0, 0, 1, 0, 0))), tuple(map(Fraction, (-1, 0, 0, -1, 0, 0)))} or "K" in r.route


def test_index_examples():
    assert index_formula(4, 3, 0, 0) == 0
    assert index_formula(0, 3, 0, 5) == -1
    assert index_formula(0, 1, 0, 0) == 2
    base = index_formula(1, 2, 0, 0)
    assert index_formula(1, 2, 3, 0) - base == 3
    assert index_formula(1, 2, 0, 3) - base == -3
    assert index_formula(1, 2, 0, 3, tK_sign=1) - base == 3


def test_boundedness():
    assert boundedness_criterion(0, 0.5).bounded
    b = boundedness_criterion(3, 0.5)
    assert not b.bounded and b.slope == 3 and b.divergence_rate == 3
    assert boundedness_criterion(0, 0.0, eps=lambda q: 0.0).variation == 0.0


def test_prop515():
    K = [1, 0, 0, 1, 1, 0]
    z = symplectic_zeta_search(O33, K, [1, 0, 0, 0, 0, 0]).zeta
    assert all(e.central == 0 for e in prop515_sequence(z, K, O33, 2, range(1, 6)))
    assert prop515_estimate([0] * 6, K, O33).central == 0
    seq = prop515_sequence([1, 0, 0, 0, 0, 0], K, O33, 2, range(1, 6))
    vals = [e.central for e in seq]
    assert vals == [Fraction(q, 2) for q in range(1, 6)]


def test_json_roundtrip():
    f = odd_form(2, 1)
    assert UnimodularForm.from_json(f.to_json()).gram == f.gram
    assert CohClass.of(["1/2", 3]).as_strings() == ["1/2", "3"]
