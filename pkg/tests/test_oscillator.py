import math

import numpy as np
import pytest
from scipy.stats import ortho_group

from vwspec.oscillator import (
    FitError,
    OscBasisSpec,
    block_eigensolve,
    build_D0,
    build_model_1d,
    d0_kernel,
    d0_spectrum_closedform,
    d0_spectrum_numeric,
    dsquared_sector_check,
    gaussian_decay_fit,
    ladder_matrices,
    model_1d_spectrum,
)

TWO34 = 2 ** 0.75


def test_ladder_commutator():
    R, lam, n = 3.0, 0.7, 12
    a, ad = ladder_matrices(R, lam, n)
    C = a @ ad - ad @ a
    assert np.allclose(C[:n, :n], 2 * math.sqrt(2) * R * lam * np.eye(n), atol=1e-10)
    g = np.zeros(n + 1)
    g[0] = 1
    assert np.allclose(a @ g, 0)
    v = g.copy()
    for _ in range(4):
        v = ad @ v
    v /= np.linalg.norm(v)
    assert abs(v[4]) == pytest.approx(1.0)


def test_ladder_rejects_bad_input():
    with pytest.raises(ValueError):
        ladder_matrices(-1, 1, 4)


def test_closed_form_examples():
    sl = d0_spectrum_closedform(OscBasisSpec(1.0, (1, 1, 1), 1), 5)
    i0 = list(sl.eigenvalues).index(0.0)
    assert sl.multiplicities[i0] == 1
    assert min(e for e in sl.eigenvalues if e > 0) == pytest.approx(TWO34, abs=1e-7)
    sl = d0_spectrum_closedform(OscBasisSpec(1.0, (1, 2, 3), 1), 5)
    assert min(e for e in sl.eigenvalues if e > 0) == pytest.approx(TWO34, abs=1e-12)


@pytest.mark.parametrize("M,R,tol", [(np.eye(3), 1.0, 1e-8), (np.diag([1.0, 2, 3]), 5.0, 1e-6)])
def test_numeric_matches_closed_form(rep, M, R, tol):
    num = d0_spectrum_numeric(M, R, rep, n_max=40, count=10, residual=False)
    cf = d0_spectrum_closedform(OscBasisSpec(R, tuple(np.linalg.svd(M, compute_uv=False)), 40), 10)
    assert np.allclose(num.eigenvalues, cf.eigenvalues, atol=tol)
    assert np.array_equal(num.multiplicities, cf.multiplicities)


def test_negative_determinant_same_spectrum(rep):
    a = d0_spectrum_numeric(np.eye(3), 1.0, rep, n_max=20, count=8, residual=False)
    b = d0_spectrum_numeric(-np.eye(3), 1.0, rep, n_max=20, count=8, residual=False)
    assert np.allclose(a.eigenvalues, b.eigenvalues, atol=1e-10)
    assert np.array_equal(a.multiplicities, b.multiplicities)


def test_orthogonal_invariance(rep):
    M = np.diag([0.8, 1.3, 2.0])
    U, V = ortho_group.rvs(3, random_state=1), ortho_group.rvs(3, random_state=2)
    a = d0_spectrum_numeric(M, 2.0, rep, n_max=16, count=8, residual=False)
    b = d0_spectrum_numeric(U @ M @ V, 2.0, rep, n_max=16, count=8, residual=False)
    assert np.allclose(a.eigenvalues, b.eigenvalues, atol=1e-9)


def test_symmetric_spectrum_and_gamma_s(rep):
    op = build_D0(np.array([[1.0, 0.3, 0], [0, 1.2, 0.1], [0.2, 0, 0.9]]), 2.0, rep, n_max=10)
    w = block_eigensolve(op.matrix).values
    assert np.allclose(np.sort(w), np.sort(-w), atol=1e-8)
    vec, E0, E1 = d0_kernel(op)
    assert abs(E0) < 1e-10 and abs(E1) > 1
    assert _sigma(op, rep) == pytest.approx(1j)


def _sigma(op, rep):
    vec, _, _ = d0_kernel(op)
    u = op.basis.spinor_at_ground(vec)
    u = u / np.linalg.norm(u)
    return np.vdot(u, rep.gamma_c[3] @ u)


def test_gamma_s_sign_flips_with_determinant(rep):
    assert _sigma(build_D0(-np.eye(3), 1.0, rep, n_max=4), rep) == pytest.approx(-1j)


def test_square_sector_decomposition(rep):
    op = build_D0(np.array([[1.0, 0.2, 0], [0.1, 0.7, 0], [0, 0.3, 1.4]]), 1.5, rep, n_max=8)
    assert dsquared_sector_check(op) < 1e-10


def test_singular_rejected(rep):
    with pytest.raises(ValueError):
        build_D0(np.zeros((3, 3)), 1.0, rep)


def test_model_1d(rep):
    sl = model_1d_spectrum(1.0, rep, n_max=40, count=5)
    assert list(sl.multiplicities) == [4] * 5
    assert np.allclose(sl.eigenvalues, [-2 * 2 ** 0.25, -TWO34, 0, TWO34, 2 * 2 ** 0.25], atol=1e-8)
    s4 = model_1d_spectrum(4.0, rep, n_max=40, count=5)
    assert np.allclose(s4.eigenvalues, 2 * sl.eigenvalues, atol=1e-8)
    with pytest.raises(ValueError):
        build_model_1d(0.0)


def test_decay_fit_kernel(rep):
    op = build_D0(np.eye(3), 1.0, rep, n_max=12)
    vec, _, _ = d0_kernel(op)
    fit = gaussian_decay_fit(vec, op.basis, OscBasisSpec(1.0, (1, 1, 1), 12))
    assert fit.c == pytest.approx(1 / math.sqrt(2), rel=0.05)


def test_decay_fit_model1d(rep):
    op = build_model_1d(1.0, rep, n_max=20)
    w, v = np.linalg.eigh(op.matrix)
    k = int(np.argmin(np.abs(w)))
    fit = gaussian_decay_fit(v[:, k], op.basis)
    assert fit.c == pytest.approx(1 / math.sqrt(2), rel=0.05)


def test_decay_fit_rejects_high_vector(rep):
    op = build_model_1d(1.0, rep, n_max=20)
    w, v = np.linalg.eigh(op.matrix)
    with pytest.raises(FitError):
        gaussian_decay_fit(v[:, int(np.argmax(w))], op.basis)
