import math
from dataclasses import replace

import numpy as np
import pytest

from adsel.data import Dataset, FeatureMatrix
from adsel.graph import build_laplacian
from adsel.solver import (
    Hyperparams,
    ModelState,
    Problem,
    SolverError,
    _multiplicative,
    compute_bias,
    compute_centering,
    fit,
    init_state,
    objective,
    objective_gradient,
    update_Q,
    update_reweight_D,
    update_reweight_V,
    update_U,
    update_W,
    w_step_gradient,
)
from adsel.synthetic import random_dataset

from helpers import masked


def tiny_problem(seed=0, n=2, k=2, d=3, beta_graph=True):
    """Hand-sized problem with an explicit graph."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((d, n))
    Y = np.eye(n, k) if n == k else (rng.uniform(size=(n, k)) < 0.5).astype(float)
    P = np.ones((n, k))
    P[0, -1] = 0.0
    Y = Y * P
    S = rng.uniform(size=(n, n))
    S = np.triu(S, 1)
    S = S + S.T
    ds = Dataset(FeatureMatrix(X), Y, P)
    A = np.eye(d)
    L = build_laplacian(S).L
    return ds, Problem.build(ds, Hyperparams(q=1), A=A, L=L), S


def random_state(rng, d, n, k):
    W = rng.standard_normal((d, k))
    Q = rng.uniform(0.1, 1.0, (n, n))
    U = rng.uniform(0.1, 1.0, (k, k))
    return ModelState(W=W, Q=Q, U=U, D=update_reweight_D(W), V=update_reweight_V(U))


# ----------------------------------------------------------- centering, D, V

def test_centering_n2():
    np.testing.assert_array_equal(compute_centering(2), [[0.5, -0.5], [-0.5, 0.5]])


def test_centering_kills_constants(rng):
    H = compute_centering(6)
    np.testing.assert_allclose(H @ np.ones(6), 0.0, atol=1e-15)
    H2 = np.array([[sum(H[i, t] * H[t, j] for t in range(6)) for j in range(6)] for i in range(6)])
    np.testing.assert_allclose(H2, H, atol=1e-10)
    np.testing.assert_array_equal(H, H.T)


def test_reweight_zero_row():
    D = update_reweight_D(np.zeros((1, 3)), 1e-8)
    assert D[0] == pytest.approx(5000.0, rel=1e-12)


def test_reweight_norm():
    assert update_reweight_D(np.array([[3.0, 4.0]]), 0.0)[0] == pytest.approx(0.1, rel=1e-15)
    assert update_reweight_D(np.array([[3.0, 4.0]]), 1e-8)[0] == pytest.approx(0.1, rel=1e-8)


def test_reweight_homogeneity(rng):
    W = rng.standard_normal((4, 3))
    D1 = update_reweight_D(W, 0.0)
    W2 = W.copy()
    W2[2] *= 2
    D2 = update_reweight_D(W2, 0.0)
    assert D2[2] == pytest.approx(D1[2] / 2, rel=1e-14)
    np.testing.assert_array_equal(update_reweight_V(W, 0.0), D1)


# ------------------------------------------------------------------ init

def test_init_deterministic_and_shapes():
    ds = random_dataset(3, d=10, n=7, k=3)
    a = init_state(ds, Hyperparams(seed=4))
    b = init_state(ds, Hyperparams(seed=4))
    for name in ("W", "Q", "U", "D", "V"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert a.W.shape == (10, 3) and a.Q.shape == (7, 7) and a.U.shape == (3, 3)
    assert a.Q.min() >= 0 and a.U.min() >= 0


def test_init_no_dual_se_is_identity():
    ds = random_dataset(3, d=10, n=7, k=3)
    st = init_state(ds, Hyperparams(ablation="no_dual_se"))
    assert np.array_equal(st.Q @ ds.labels @ st.U, ds.labels)


# ---------------------------------------------------------------- W step

def test_update_W_zero_target():
    ds, prob, _ = tiny_problem()
    st = init_state(ds, Hyperparams())
    st.Q = np.zeros_like(st.Q)
    np.testing.assert_array_equal(update_W(st, prob, Hyperparams()), 0.0)


def test_update_W_scalar_case():
    X = np.array([[1.0, 3.0]])
    Y = np.eye(2)
    ds = Dataset(FeatureMatrix(X), Y)
    prob = Problem.build(ds, Hyperparams(q=1), A=np.ones((1, 1)), L=np.zeros((2, 2)))
    W0 = np.array([[0.3, 0.4]])
    st = ModelState(W=W0, Q=np.eye(2), U=np.eye(2), D=update_reweight_D(W0, 1e-8), V=np.ones(2))
    # X H X' = 2, mu A = 1, delta D = 1 / (2 sqrt(0.25 + 1e-8)); rhs = X H Y = [-1, 1]
    lhs = 2.0 + 1.0 + 1.0 / (2.0 * math.sqrt(0.25 + 1e-8))
    W = update_W(st, prob, Hyperparams(mu=1.0, delta=1.0))
    np.testing.assert_allclose(W, [[-1.0 / lhs, 1.0 / lhs]], rtol=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_update_W_stationary(seed):
    rng = np.random.default_rng(seed)
    ds = random_dataset(seed, d=15, n=20, k=3)
    hp = Hyperparams(mu=0.5, delta=2.0)
    prob = Problem.build(ds, hp)
    st = random_state(rng, 15, 20, 3)
    st.W = update_W(st, prob, hp)
    g = w_step_gradient(st, prob, hp)
    assert np.linalg.norm(g) <= 1e-6 * (1 + np.linalg.norm(st.W))


def test_update_W_singular_falls_back_to_jitter():
    # duplicated feature rows, no regularization: X H X' is singular
    X = np.array([[1.0, 2.0, 4.0], [1.0, 2.0, 4.0]])
    ds = Dataset(FeatureMatrix(X), np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))
    hp = Hyperparams(mu=0.0, delta=0.0)
    prob = Problem.build(ds, Hyperparams(q=1), A=np.zeros((2, 2)), L=np.zeros((3, 3)))
    st = ModelState(W=np.ones((2, 2)), Q=np.eye(3), U=np.eye(2), D=np.ones(2), V=np.ones(2))
    W = update_W(st, prob, hp)
    assert np.all(np.isfinite(W))


# ------------------------------------------------------------ Q / U steps

def scripted_factors(ds, prob, st, hp, S, rule):
    """Literal matrix evaluation of the Q/U numerator and denominator blocks."""
    n = ds.n_samples
    H = np.eye(n) - np.ones((n, n)) / n
    X, Y, P = ds.X, ds.labels, ds.mask
    M = st.Q @ Y @ st.U
    HXW = H @ X.T @ st.W
    if rule == "clamp":
        num = HXW + hp.lam * (P * Y)
        den = H @ M + hp.beta * prob.L @ M + hp.lam * (P * M)
    else:
        G = np.diag(S.sum(axis=1))
        num = np.maximum(HXW, 0) + hp.lam * (P * Y) + np.ones((n, n)) @ M / n + hp.beta * S @ M
        den = np.maximum(-HXW, 0) + M + hp.beta * G @ M + hp.lam * (P * M)
    return num, den


@pytest.mark.parametrize("rule", ["clamp", "split"])
def test_update_Q_single_step(rule):
    ds, prob, S = tiny_problem(1)
    hp = Hyperparams(lam=0.7, beta=1.3, update_rule=rule)
    st = random_state(np.random.default_rng(7), 3, 2, 2)
    num, den = scripted_factors(ds, prob, st, hp, S, rule)
    R = st.U.T @ ds.labels.T
    expect = st.Q * np.maximum(num @ R, 0) / np.maximum(den @ R, hp.epsilon_div)
    np.testing.assert_allclose(update_Q(st, prob, hp), expect, rtol=1e-12)


@pytest.mark.parametrize("rule", ["clamp", "split"])
def test_update_U_single_step(rule):
    ds, prob, S = tiny_problem(2)
    hp = Hyperparams(lam=0.7, alpha=0.4, beta=1.3, update_rule=rule)
    st = random_state(np.random.default_rng(8), 3, 2, 2)
    num, den = scripted_factors(ds, prob, st, hp, S, rule)
    N = ds.labels.T @ st.Q.T
    den_u = N @ den + hp.alpha * np.diag(st.V) @ st.U
    expect = st.U * np.maximum(N @ num, 0) / np.maximum(den_u, hp.epsilon_div)
    np.testing.assert_allclose(update_U(st, prob, hp), expect, rtol=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_split_preserves_gradient(seed):
    """Both rules share den - num, which is half the objective gradient."""
    ds, prob, S = tiny_problem(seed, n=5, k=3, d=4)
    hp = Hyperparams(lam=0.9, alpha=0.5, beta=0.8, mu=0.3, delta=0.2)
    st = random_state(np.random.default_rng(seed), 4, 5, 3)
    st.V = update_reweight_V(st.U, 0.0)
    _, gQ, gU = objective_gradient(st, prob, hp)
    for rule in ("clamp", "split"):
        num, den = scripted_factors(ds, prob, st, replace(hp, update_rule=rule), S, rule)
        R = st.U.T @ ds.labels.T
        np.testing.assert_allclose((den - num) @ R, gQ / 2, atol=1e-12)
        N = ds.labels.T @ st.Q.T
        np.testing.assert_allclose(N @ (den - num) + hp.alpha * np.diag(st.V) @ st.U, gU / 2, atol=1e-12)


def test_zero_entries_stay_zero():
    ds, prob, _ = tiny_problem(3, n=4, k=3, d=3)
    st = random_state(np.random.default_rng(3), 3, 4, 3)
    st.Q[1, 2] = 0.0
    st.U[0, 1] = 0.0
    hp = Hyperparams()
    assert update_Q(st, prob, hp)[1, 2] == 0.0
    assert update_U(st, prob, hp)[0, 1] == 0.0


def test_fixed_point_unchanged(rng):
    Q = rng.uniform(size=(3, 3))
    num = rng.uniform(0.5, 2.0, size=(3, 3))
    np.testing.assert_array_equal(_multiplicative(Q, num, num.copy(), 1e-12, "Q", 0), Q)


def test_non_finite_update_raises():
    Q = np.ones((2, 2))
    num = np.array([[1.0, np.nan], [1.0, 1.0]])
    with pytest.raises(SolverError, match=r"iteration 5, cell \(0, 1\)"):
        _multiplicative(Q, num, np.ones((2, 2)), 1e-12, "Q", 5)


def test_clamping_keeps_nonnegative():
    Q = np.ones((2, 2))
    out = _multiplicative(Q, np.array([[-1.0, 2.0], [1.0, 1.0]]), np.array([[1.0, -3.0], [0.0, 1.0]]), 1e-12, "Q", 0)
    assert out.min() >= 0
    assert out[0, 0] == 0.0
    assert out[0, 1] == 2.0 / 1e-12


# ------------------------------------------------------------------ bias

def test_bias_zero():
    ds = random_dataset(0, d=4, n=6, k=2)
    st = ModelState(W=np.zeros((4, 2)), Q=np.zeros((6, 6)), U=np.eye(2), D=np.ones(4), V=np.ones(2))
    np.testing.assert_array_equal(compute_bias(st, ds.X, ds.labels), 0.0)


def test_bias_centered_identity():
    ds = random_dataset(1, d=4, n=6, k=2)
    Xc = ds.X - ds.X.mean(axis=1, keepdims=True)
    W = np.random.default_rng(1).standard_normal((4, 2))
    st = ModelState(W=W, Q=np.eye(6), U=np.eye(2), D=np.ones(4), V=np.ones(2))
    expect = ds.labels.mean(axis=0) - (Xc.T @ W).mean(axis=0)
    np.testing.assert_allclose(compute_bias(st, Xc, ds.labels), expect, atol=1e-15)


def test_bias_is_stationary(rng):
    ds = random_dataset(2, d=5, n=8, k=3)
    st = random_state(rng, 5, 8, 3)
    b = compute_bias(st, ds.X, ds.labels)
    M = st.Q @ ds.labels @ st.U

    def loss(bv):
        R = ds.X.T @ st.W + np.outer(np.ones(8), bv) - M
        return float(np.sum(R * R))

    grad = 2 * (ds.X.T @ st.W + np.outer(np.ones(8), b) - M).T @ np.ones(8)
    assert np.abs(grad).max() <= 1e-10 * (1 + np.abs(M).sum())
    h = 1e-4
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        assert abs((loss(b + e) - loss(b - e)) / (2 * h)) <= 1e-6


# ------------------------------------------------------------- objective

def test_objective_all_zero_state():
    ds = masked(random_dataset(4, d=5, n=8, k=3), 0.25, 1)
    prob = Problem.build(ds, Hyperparams(q=2))
    st = ModelState(W=np.zeros((5, 3)), Q=np.zeros((8, 8)), U=np.zeros((3, 3)), D=np.ones(5), V=np.ones(3))
    hp = Hyperparams(lam=2.5)
    assert objective(st, prob, hp) == pytest.approx(2.5 * np.sum((ds.mask * ds.labels) ** 2), rel=1e-15)
    zero = Hyperparams(lam=0, alpha=0, beta=0, mu=0, delta=0)
    assert objective(st, prob, zero) == 0.0


@pytest.mark.parametrize("seed", range(3))
def test_objective_term_by_term(seed):
    rng = np.random.default_rng(seed)
    ds = masked(random_dataset(seed, d=5, n=7, k=3), 0.3, seed)
    prob = Problem.build(ds, Hyperparams(q=3))
    st = random_state(rng, 5, 7, 3)
    hp = Hyperparams(lam=1.5, alpha=0.3, beta=0.7, mu=2.0, delta=0.9)
    n = 7
    H = np.eye(n) - np.ones((n, n)) / n
    M = st.Q @ ds.labels @ st.U
    l21 = lambda Z: sum(math.sqrt(sum(v * v for v in row)) for row in Z)
    expect = (
        np.linalg.norm(H @ ds.X.T @ st.W - H @ M) ** 2
        + 0.9 * l21(st.W)
        + 1.5 * np.linalg.norm(ds.mask * (ds.labels - M)) ** 2
        + 0.3 * l21(st.U)
        + 0.7 * np.trace(M.T @ prob.L @ M)
        + 2.0 * np.trace(st.W.T @ prob.A @ st.W)
    )
    assert objective(st, prob, hp) == pytest.approx(expect, rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    ds = masked(random_dataset(seed, d=6, n=9, k=3), 0.3, seed)
    prob = Problem.build(ds, Hyperparams(q=3))
    hp = Hyperparams(lam=1.2, alpha=0.6, beta=0.9, mu=0.4, delta=0.8)
    st = random_state(rng, 6, 9, 3)
    gW, gQ, gU = objective_gradient(st, prob, hp)
    dW, dQ, dU = (rng.standard_normal(a.shape) for a in (st.W, st.Q, st.U))
    analytic = np.sum(gW * dW) + np.sum(gQ * dQ) + np.sum(gU * dU)
    h = 1e-6

    def at(t):
        s = ModelState(W=st.W + t * dW, Q=st.Q + t * dQ, U=st.U + t * dU, D=st.D, V=st.V)
        return objective(s, prob, hp)

    numeric = (at(h) - at(-h)) / (2 * h)
    assert abs(numeric - analytic) <= 1e-4 * max(1.0, abs(analytic))


# ------------------------------------------------------------------- fit

def test_fit_huge_tol_single_iteration(small_ds):
    st = fit(small_ds, Hyperparams(tol=1e10, q=3))
    assert st.iter == 1 and len(st.objective_trace) == 1 and st.converged


def test_fit_no_dual_se_keeps_identity(small_ds):
    seen = []

    def cb(stage, st, prob):
        seen.append(np.array_equal(st.Q, np.eye(12)) and np.array_equal(st.U, np.eye(3)))

    fit(small_ds, Hyperparams(ablation="no_dual_se", max_iter=15, q=3), callback=cb)
    assert seen and all(seen)


def test_fit_descends():
    ds = masked(random_dataset(11, d=20, n=30, k=3), 0.2, 11)
    st = fit(ds, Hyperparams(max_iter=100))
    assert st.objective_trace[-1] < st.initial_objective
    assert st.objective_trace[-1] < st.objective_trace[0]
    assert np.all(np.diff(st.objective_trace) <= 1e-9 * np.abs(st.objective_trace[:-1]))


def test_fit_invariants_each_iteration():
    ds = masked(random_dataset(5, d=12, n=25, k=3), 0.3, 5)
    worst = []

    def cb(stage, st, prob):
        if stage == "iteration":
            worst.append(min(st.Q.min(), st.U.min()))
            assert np.all(st.D > 0) and np.all(st.V > 0)

    st = fit(ds, Hyperparams(max_iter=40), callback=cb)
    assert min(worst) >= 0
    assert np.all(np.isfinite(st.objective_trace))
    assert st.b.shape == (3,)


def test_fit_deterministic():
    ds = masked(random_dataset(6, d=10, n=20, k=3), 0.3, 6)
    a = fit(ds, Hyperparams(seed=9, max_iter=30))
    b = fit(ds, Hyperparams(seed=9, max_iter=30))
    assert np.array_equal(a.W, b.W) and np.array_equal(a.Q, b.Q) and np.array_equal(a.U, b.U)
    assert a.objective_trace == b.objective_trace


def test_fit_rejects_invalid_dataset():
    ds = Dataset(FeatureMatrix(np.ones((3, 4))), np.full((4, 2), 0.5))
    with pytest.raises(ValueError, match="non-binary"):
        fit(ds, Hyperparams(q=2))


def test_fit_requires_positive_weights(small_ds):
    with pytest.raises(ValueError):
        fit(small_ds, Hyperparams(mu=0.0, q=3))
    fit(small_ds, Hyperparams(mu=0.0, q=3, ablation="no_gfrl", max_iter=2))


def test_ablation_zeroes_terms(small_ds):
    a = fit(small_ds, Hyperparams(ablation="no_gfrl", max_iter=5, q=3))
    assert all(t["redundancy"] == 0.0 for t in a.term_trace)
    b = fit(small_ds, Hyperparams(ablation="no_gmr", max_iter=5, q=3))
    assert all(t["manifold"] == 0.0 for t in b.term_trace)


def test_reconstruction_error_trend_in_lambda():
    ds = random_dataset(21, d=15, n=30, k=3)
    errs = []
    for lam in (0.1, 1.0, 10.0):
        st = fit(ds, Hyperparams(lam=lam, seed=3))
        M = st.Q @ ds.labels @ st.U
        errs.append(float(np.sum((ds.mask * (ds.labels - M)) ** 2)))
    assert errs[0] >= errs[1] >= errs[2]


def test_hyperparams_aliases():
    hp = Hyperparams.from_dict({"lambda": 3.0, "eta": 0.5, "unknown": 1})
    assert hp.lam == 3.0 and hp.beta == 0.5
    assert hp.to_dict()["lambda"] == 3.0
    with pytest.raises(ValueError):
        Hyperparams(ablation="nope")
