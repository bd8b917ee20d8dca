import numpy as np
import pytest
from scipy.optimize import linprog

from glmsparse.matrix_io import RowMatrix
from glmsparse.regressors import (ConvergenceError, RegressionProblem, embed, irls, lasso_cd,
                                  reference_solve, solve)
from glmsparse.sparsifier import SparsifyConfig


def planted(rng, m=500, n=6, outliers=0.05, noise=0.5):
    a = rng.standard_normal((m, n))
    b = a @ rng.standard_normal(n) + noise * rng.standard_normal(m)
    bad = rng.random(m) < outliers
    b[bad] += 20 * rng.standard_normal(bad.sum())
    return RowMatrix.from_dense(a), b


def l1_lp(a, b):
    """min ||a x - b||_1 as a linear program (independent oracle)."""
    m, n = a.shape
    c = np.concatenate([np.zeros(n), np.ones(m)])
    A_ub = np.block([[a, -np.eye(m)], [-a, -np.eye(m)]])
    res = linprog(c, A_ub=A_ub, b_ub=np.concatenate([b, -b]),
                  bounds=[(None, None)] * n + [(0, None)] * m, method="highs")
    return res.fun


def test_ridge_embedding_example():
    A = RowMatrix.from_dense([[1.0, 2.0], [3.0, 4.0]])
    emb = embed(RegressionProblem("ridge", A, np.zeros(2), lam=4.0), s_min=1, s_max=2)
    E = emb.matrix.to_dense()
    assert E.shape == (4, 2)
    np.testing.assert_array_equal(E[2:], np.diag([2.0, 2.0]))


def test_lasso_family_row():
    A = RowMatrix.from_dense(np.random.default_rng(0).standard_normal((5, 4)))
    emb = embed(RegressionProblem("lasso", A, np.ones(5), lam=0.5), s_min=1, s_max=2)
    assert emb.family.eval(5 + 3, -2.0) == 1.0
    assert emb.family.m == 9


def test_linear_zero_response_identity():
    A = RowMatrix.from_dense(np.random.default_rng(0).standard_normal((5, 3)))
    emb = embed(RegressionProblem("linear", A, np.zeros(5)))
    assert emb.matrix == A and not emb.augmented


@pytest.mark.parametrize("kind,kw", [("linear", {}), ("ridge", {"lam": 2.0}),
                                     ("lasso", {"lam": 1.5}), ("ell_p", {"p": 1.3}),
                                     ("gamma_p", {"p": 1.0}), ("multiple", {})])
def test_embedding_faithful(rng, kind, kw):
    for _ in range(100):
        m, n = int(rng.integers(3, 15)), int(rng.integers(1, 4))
        a = rng.standard_normal((m, n)) * (rng.random((m, n)) < 0.7)
        A = RowMatrix.from_dense(a)
        if kind == "multiple":
            N = int(rng.integers(1, 4))
            B, x = rng.standard_normal((m, N)), rng.standard_normal((n, N))
            prob = RegressionProblem(kind, A, B)
            direct = np.sum((a @ x - B) ** 2)
        else:
            b, x = rng.standard_normal(m), rng.standard_normal(n)
            prob = RegressionProblem(kind, A, b, **kw)
            r = a @ x - b
            direct = {"linear": r @ r, "ridge": r @ r + kw.get("lam", 0) * x @ x,
                      "lasso": r @ r + kw.get("lam", 0) * np.abs(x).sum(),
                      "ell_p": np.sum(np.abs(r) ** kw.get("p", 2)),
                      "gamma_p": np.sum(np.where(np.abs(r) <= 1, 0.5 * r * r, np.abs(r) - 0.5))}[kind]
        emb = embed(prob, s_min=1.0, s_max=2.0)
        assert emb.objective(x) == pytest.approx(direct, rel=1e-10, abs=1e-12)
        assert prob.objective(x) == pytest.approx(direct, rel=1e-10, abs=1e-12)


def test_problem_validation(rng):
    A = RowMatrix.from_dense(rng.standard_normal((4, 2)))
    with pytest.raises(ValueError):
        RegressionProblem("ridge", A, np.zeros(4), lam=-1.0)
    with pytest.raises(ValueError):
        RegressionProblem("ell_p", A, np.zeros(4), p=3.0)
    with pytest.raises(ValueError):
        RegressionProblem("ell_p", A, np.zeros(4))
    with pytest.raises(ValueError):
        RegressionProblem("linear", A, np.zeros(3))
    with pytest.raises(ValueError):
        RegressionProblem("poisson", A, np.zeros(4))


def test_range_hint_defaults(rng):
    A, b = planted(rng)
    emb = embed(RegressionProblem("gamma_p", A, b, p=1.0), epsilon=0.3)
    prob = RegressionProblem("gamma_p", A, b, p=1.0)
    x_ref, f_ref = reference_solve(prob)
    assert 0 < emb.s_min <= f_ref <= emb.s_max <= prob.objective(np.zeros(A.n))


def test_interpolation():
    n = 5
    b = np.arange(1.0, n + 1)
    rep = solve(RegressionProblem("linear", RowMatrix.from_dense(np.eye(n)), b), 0.3)
    np.testing.assert_allclose(rep.x, b, atol=1e-12)
    assert rep.objective_full == pytest.approx(0.0, abs=1e-20)


def test_ridge_against_closed_form(rng):
    a = rng.standard_normal((200, 5))
    b = a @ rng.standard_normal(5) + rng.standard_normal(200)
    lam = 3.0
    x_star = np.linalg.solve(a.T @ a + lam * np.eye(5), a.T @ b)
    f_star = np.sum((a @ x_star - b) ** 2) + lam * x_star @ x_star
    rep = solve(RegressionProblem("ridge", RowMatrix.from_dense(a), b, lam=lam), 0.25)
    assert rep.objective_full <= 1.25 * f_star
    assert reference_solve(RegressionProblem("ridge", RowMatrix.from_dense(a), b, lam=lam))[1] \
        == pytest.approx(f_star, rel=1e-12)


def test_huber_with_outliers(rng):
    A, b = planted(rng, m=800, n=6)
    prob = RegressionProblem("gamma_p", A, b, p=1.0)
    rep = solve(prob, 0.3, SparsifyConfig(seed=2))
    assert rep.objective_full <= 1.3 * rep.reference_objective
    assert rep.objective_full >= rep.reference_objective - 1e-9


def test_reference_examples(rng):
    a = rng.standard_normal((50, 4))
    b = a @ rng.standard_normal(4)
    assert reference_solve(RegressionProblem("linear", RowMatrix.from_dense(a), b))[1] < 1e-20
    lam = 2.0 * np.abs(a.T @ b).max() * 1.0001
    x, f = reference_solve(RegressionProblem("lasso", RowMatrix.from_dense(a), b, lam=lam))
    assert np.all(x == 0.0)
    # Soft-threshold optimality at zero: |grad| <= lam.
    assert np.abs(2 * a.T @ b).max() <= lam
    lam2 = 0.9 * 2.0 * np.abs(a.T @ b).max()
    x2, _ = reference_solve(RegressionProblem("lasso", RowMatrix.from_dense(a), b, lam=lam2))
    assert np.any(x2 != 0.0)
    bn = b + rng.standard_normal(50)
    r_lin = reference_solve(RegressionProblem("linear", RowMatrix.from_dense(a), bn))[1]
    r_l2 = reference_solve(RegressionProblem("ell_p", RowMatrix.from_dense(a), bn, p=2.0))[1]
    assert r_l2 == pytest.approx(r_lin, rel=1e-12)


def test_l1_reference_matches_lp(rng):
    A, b = planted(rng, m=300, n=5)
    _, f = reference_solve(RegressionProblem("ell_p", A, b, p=1.0))
    assert f == pytest.approx(l1_lp(A.to_dense(), b), rel=1e-6)


def test_irls_monotone(rng):
    A, b = planted(rng, m=400, n=5)
    for p, gamma in ((1.0, False), (0.7, False), (1.5, False), (1.0, True), (0.5, True)):
        _, _, hist = irls(A.to_dense(), b, np.ones(400), p, gamma, tol=1e-12)
        assert all(h1 <= h0 for h0, h1 in zip(hist, hist[1:]))


def test_irls_cap(rng):
    A, b = planted(rng, m=100, n=3)
    with pytest.raises(ConvergenceError):
        irls(A.to_dense(), b, np.ones(100), 1.0, tol=0.0, max_iter=2)
    with pytest.raises(ConvergenceError):
        lasso_cd(A.to_dense(), b, np.ones(100), np.full(3, 0.1), tol=0.0, max_sweeps=2)


def test_p2_collapse(rng):
    A, b = planted(rng, m=400, n=5)
    cfg = SparsifyConfig(seed=3)
    lin = solve(RegressionProblem("linear", A, b), 0.3, cfg)
    l2 = solve(RegressionProblem("ell_p", A, b, p=2.0), 0.3, cfg)
    assert abs(lin.objective_full - l2.objective_full) <= 1e-8


def test_multiple_shares_sparsifier(rng):
    A, b = planted(rng, m=400, n=4, outliers=0.0)
    B = np.column_stack([b, 2 * b + 1, rng.standard_normal(400)])
    prob = RegressionProblem("multiple", A, B)
    rep = solve(prob, 0.3)
    assert rep.x.shape == (4, 3)
    assert rep.objective_full <= 1.3 * rep.reference_objective
    np.testing.assert_allclose(reference_solve(prob)[0],
                               np.linalg.lstsq(A.to_dense(), B, rcond=None)[0], atol=1e-10)


def test_lasso_solve(rng):
    A, b = planted(rng, m=600, n=6, outliers=0.0)
    prob = RegressionProblem("lasso", A, b, lam=100.0)
    rep = solve(prob, 0.3, SparsifyConfig(seed=1))
    assert rep.reference_objective - 1e-9 <= rep.objective_full <= 1.3 * rep.reference_objective
    assert rep.sparsifier_nnz <= rep.sample_count


def test_solve_rejects_bad_epsilon(rng):
    A, b = planted(rng, m=50, n=2)
    with pytest.raises(ValueError):
        solve(RegressionProblem("linear", A, b), 1.0)
