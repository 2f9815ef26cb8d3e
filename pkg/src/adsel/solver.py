"""Alternating optimization for ADSEL.

The bias-free objective minimized here is::

    ||H X'W - H M||^2 + delta ||W||_{2,1} + lam ||P o (Y - M)||^2
        + alpha ||U||_{2,1} + beta tr(M' L M) + mu tr(W' A W),   M = Q Y U

with Q >= 0 and U >= 0. W has a closed form given the l2,1 reweighting
diagonal D; Q and U take multiplicative steps. The centering matrix H is
never formed inside the loop; products with it are column-mean removals.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.linalg

from .data import Dataset, validate_dataset
from .graph import build_affinity, build_laplacian
from .redundancy import build_redundancy

log = logging.getLogger(__name__)

ABLATIONS = ("full", "no_dual_se", "no_gfrl", "no_gmr")
UPDATE_RULES = ("split", "clamp")
WEIGHTS = ("lam", "alpha", "beta", "mu", "delta")
# external key -> field name; "eta" is the manifold weight's alternate symbol
ALIASES = {"lambda": "lam", "lambda_": "lam", "eta": "beta"}


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    lam: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    mu: float = 1.0
    delta: float = 1.0
    q: int = 5
    sigma: object = "auto"
    epsilon: float = 1e-8
    epsilon_div: float = 1e-12
    max_iter: int = 200
    tol: float = 1e-6
    seed: int = 0
    ablation: str = "full"
    update_rule: str = "split"

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        for name in WEIGHTS:
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.update_rule not in UPDATE_RULES:
            raise ValueError(f"update_rule must be one of {UPDATE_RULES}, got {self.update_rule!r}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")

    @classmethod
    def from_dict(cls, d):
        """Build from a flat mapping, accepting ``lambda``/``eta`` and ignoring unknown keys."""
        known = {f for f in cls.__dataclass_fields__}
        kw = {}
        for key, value in d.items():
            key = ALIASES.get(key, key)
            if key in known:
                kw[key] = value
        return cls(**kw)

    def to_dict(self):
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    def effective(self):
        """Weights after applying the ablation switch."""
        if self.ablation == "no_gfrl":
            return replace(self, mu=0.0)
        if self.ablation == "no_gmr":
            return replace(self, beta=0.0)
        return self

    def check_positive(self):
        hp = self.effective()
        for name in WEIGHTS:
            if self.ablation == "no_gfrl" and name == "mu":
                continue
            if self.ablation == "no_gmr" and name == "beta":
                continue
            if not getattr(hp, name) > 0:
                raise ValueError(f"{name} must be positive in ablation mode {self.ablation!r}")


@dataclass
class ModelState:
    W: np.ndarray
    Q: np.ndarray
    U: np.ndarray
    D: np.ndarray  # diagonal of the d x d reweighting matrix
    V: np.ndarray  # diagonal of the k x k reweighting matrix
    b: Optional[np.ndarray] = None
    iter: int = 0
    initial_objective: float = float("nan")
    objective_trace: list = field(default_factory=list)
    term_trace: list = field(default_factory=list)
    converged: bool = False


@dataclass(frozen=True)
class Problem:
    """Quantities that stay fixed during a fit."""

    X: np.ndarray  # d x n
    Xc: np.ndarray  # X with row means removed, i.e. X H
    Y: np.ndarray
    P: np.ndarray
    PY: np.ndarray
    L: np.ndarray
    A: np.ndarray
    XHXt: np.ndarray
    degree: np.ndarray

    @classmethod
    def build(cls, ds: Dataset, hp: Hyperparams, A=None, L=None):
        X = ds.X
        if L is None:
            L = build_laplacian(build_affinity(X, hp.q, hp.sigma)).L
        if A is None:
            A = build_redundancy(X).A
        Xc = X - X.mean(axis=1, keepdims=True)
        P = ds.mask
        Y = ds.labels
        L = np.asarray(L, dtype=np.float64)
        return cls(X, Xc, Y, P, P * Y, L, np.asarray(A), Xc @ Xc.T, np.diag(L).copy())


def _center(Z):
    """H @ Z without forming H."""
    return Z - Z.mean(axis=0, keepdims=True)


def compute_centering(n):
    """The n x n centering matrix I - 11'/n."""
    return np.eye(n) - np.full((n, n), 1.0 / n)


def update_reweight_D(W, epsilon=1e-8):
    return 1.0 / (2.0 * np.sqrt(np.einsum("ij,ij->i", W, W) + epsilon))


update_reweight_V = update_reweight_D


def init_state(ds: Dataset, hp: Hyperparams) -> ModelState:
    """Seeded random start: W ~ 0.01 N(0,1); Q, U ~ U(0,1).

    With ``no_dual_se`` Q and U are identities and stay fixed.
    """
    rng = np.random.default_rng(hp.seed)
    d, n, k = ds.n_features, ds.n_samples, ds.n_labels
    W = 0.01 * rng.standard_normal((d, k))
    if hp.ablation == "no_dual_se":
        Q = np.eye(n)
        U = np.eye(k)
    else:
        Q = rng.uniform(0.0, 1.0, (n, n))
        U = rng.uniform(0.0, 1.0, (k, k))
    return ModelState(W=W, Q=Q, U=U, D=update_reweight_D(W, hp.epsilon), V=update_reweight_V(U, hp.epsilon))


def update_W(state: ModelState, prob: Problem, hp: Hyperparams):
    """Solve ``(X H X' + mu A + delta D) W = X H Q Y U``."""
    hp = hp.effective()
    M = state.Q @ prob.Y @ state.U
    lhs = prob.XHXt + hp.mu * prob.A + np.diag(hp.delta * state.D)
    rhs = prob.Xc @ M
    return _solve_spd(lhs, rhs)


def _solve_spd(lhs, rhs):
    d = lhs.shape[0]
    try:
        W = scipy.linalg.cho_solve(scipy.linalg.cho_factor(lhs), rhs)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        tau = 1e-8 * np.trace(lhs) / d
        if not tau > 0:
            tau = 1e-8
        log.debug("W system not positive definite, retrying with jitter %g", tau)
        lhs = lhs + tau * np.eye(d)
        try:
            W = scipy.linalg.solve(lhs, rhs, assume_a="sym")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
            raise SolverError(f"W system is singular: {exc}") from exc
    if not np.all(np.isfinite(W)):
        raise SolverError("W system produced non-finite values")
    # one refinement step when conditioning costs accuracy
    r = rhs - lhs @ W
    if np.linalg.norm(r) > 1e-10 * (1.0 + np.linalg.norm(rhs)):
        W = W + scipy.linalg.solve(lhs, r, assume_a="sym")
    return W


def _multiplicative(X, num, den, eps_div, what, it):
    ratio = np.maximum(num, 0.0) / np.maximum(den, eps_div)
    out = X * ratio
    bad = ~np.isfinite(out)
    if bad.any():
        cell = tuple(int(i) for i in np.argwhere(bad)[0])
        raise SolverError(f"non-finite {what} at iteration {it}, cell {cell}")
    return out


def _pos(Z):
    return np.maximum(Z, 0.0)


def _neg(Z):
    return np.maximum(-Z, 0.0)


def _label_factors(state: ModelState, prob: Problem, hp: Hyperparams):
    """Numerator and denominator n x k blocks shared by the Q and U steps.

    ``clamp`` uses the raw sign-indefinite blocks. ``split`` moves every
    negative part to the opposite side: ``H M = M - 11'M/n`` and
    ``L M = G M - S M`` contribute ``11'M/n`` and ``S M`` to the numerator,
    and ``H X'W`` is split elementwise. Both leave ``den - num`` (half the
    gradient w.r.t. M) unchanged.
    """
    M = state.Q @ prob.Y @ state.U
    T = _center(prob.X.T @ state.W)
    if hp.update_rule == "clamp":
        num = T + hp.lam * prob.PY
        den = _center(M) + hp.beta * (prob.L @ M) + hp.lam * (prob.P * M)
        return num, den
    LM = prob.L @ M
    SM = prob.degree[:, None] * M - LM
    colmean = np.broadcast_to(M.mean(axis=0, keepdims=True), M.shape)
    num = _pos(T) + hp.lam * prob.PY + colmean + hp.beta * _pos(SM)
    den = _neg(T) + M + hp.beta * (prob.degree[:, None] * M + _neg(SM)) + hp.lam * (prob.P * M)
    return num, den


def update_Q(state: ModelState, prob: Problem, hp: Hyperparams):
    """Multiplicative Q step; the result stays elementwise nonnegative."""
    hp = hp.effective()
    R = state.U.T @ prob.Y.T  # k x n
    num, den = _label_factors(state, prob, hp)
    return _multiplicative(state.Q, num @ R, den @ R, hp.epsilon_div, "Q", state.iter)


def update_U(state: ModelState, prob: Problem, hp: Hyperparams):
    hp = hp.effective()
    N = prob.Y.T @ state.Q.T  # k x n
    num, den = _label_factors(state, prob, hp)
    reg = hp.alpha * (state.V[:, None] * state.U)
    return _multiplicative(state.U, N @ num, N @ den + reg, hp.epsilon_div, "U", state.iter)


def compute_bias(state: ModelState, X, Y):
    """Optimal bias given W, Q, U: mean of QYU rows minus mean of X'W rows."""
    n = X.shape[1]
    ones = np.ones(n)
    return (state.U.T @ Y.T @ state.Q.T @ ones - state.W.T @ X @ ones) / n


def _l21(Z):
    return float(np.sqrt(np.einsum("ij,ij->i", Z, Z)).sum())


def objective_terms(state: ModelState, prob: Problem, hp: Hyperparams) -> dict:
    """Weighted contribution of every objective term."""
    hp = hp.effective()
    W, Q, U = state.W, state.Q, state.U
    M = Q @ prob.Y @ U
    fit = _center(prob.X.T @ W) - _center(M)
    rec = prob.P * (prob.Y - M)
    return {
        "regression": float(np.sum(fit * fit)),
        "sparsity_W": hp.delta * _l21(W),
        "reconstruction": hp.lam * float(np.sum(rec * rec)),
        "sparsity_U": hp.alpha * _l21(U),
        "manifold": hp.beta * float(np.sum(M * (prob.L @ M))),
        "redundancy": hp.mu * float(np.sum(W * (prob.A @ W))),
    }


def objective(state: ModelState, prob: Problem, hp: Hyperparams) -> float:
    return float(sum(objective_terms(state, prob, hp).values()))


def objective_gradient(state: ModelState, prob: Problem, hp: Hyperparams):
    """Gradients of the objective w.r.t. W, Q and U (rows of W and U must be nonzero)."""
    hp = hp.effective()
    W, Q, U = state.W, state.Q, state.U
    Y = prob.Y
    M = Q @ Y @ U
    resid = _center(prob.X.T @ W) - _center(M)
    Ls = prob.L + prob.L.T
    gM = -2.0 * resid - 2.0 * hp.lam * prob.P * prob.P * (Y - M) + hp.beta * (Ls @ M)
    wn = np.sqrt(np.einsum("ij,ij->i", W, W))
    un = np.sqrt(np.einsum("ij,ij->i", U, U))
    gW = 2.0 * prob.Xc @ resid + hp.delta * W / wn[:, None] + hp.mu * (prob.A + prob.A.T) @ W
    gQ = gM @ (Y @ U).T
    gU = (Q @ Y).T @ gM + hp.alpha * U / un[:, None]
    return gW, gQ, gU


def w_step_gradient(state: ModelState, prob: Problem, hp: Hyperparams, W=None):
    """Gradient of the W subproblem with D frozen at ``state.D``."""
    hp = hp.effective()
    W = state.W if W is None else W
    M = state.Q @ prob.Y @ state.U
    return 2 * (prob.XHXt @ W) - 2 * (prob.Xc @ M) + 2 * hp.mu * (prob.A @ W) + 2 * hp.delta * (state.D[:, None] * W)


def fit(ds: Dataset, hp: Hyperparams, A=None, L=None, callback=None) -> ModelState:
    """Run the alternating updates until the relative objective change drops below ``tol``.

    Per iteration the order is D, V, W, Q, U. ``callback(stage, state, prob)`` is
    invoked with stage "W" after every update of W and with "iteration"
    after each full iteration; it is meant for instrumentation.
    """
    problems = validate_dataset(ds)
    if problems:
        raise ValueError("invalid dataset: " + "; ".join(problems))
    hp.check_positive()
    prob = Problem.build(ds, hp, A=A, L=L)
    state = init_state(ds, hp)
    frozen = hp.ablation == "no_dual_se"
    prev = objective(state, prob, hp)
    state.initial_objective = prev

    for it in range(1, hp.max_iter + 1):
        state.iter = it
        try:
            state.D = update_reweight_D(state.W, hp.epsilon)
            state.V = update_reweight_V(state.U, hp.epsilon)
            state.W = update_W(state, prob, hp)
            if callback is not None:
                callback("W", state, prob)
            if not frozen:
                state.Q = update_Q(state, prob, hp)
                state.U = update_U(state, prob, hp)
        except SolverError:
            raise
        except (np.linalg.LinAlgError, FloatingPointError) as exc:
            raise SolverError(f"iteration {it}: {exc}") from exc
        terms = objective_terms(state, prob, hp)
        obj = float(sum(terms.values()))
        if not np.isfinite(obj):
            raise SolverError(f"non-finite objective at iteration {it}")
        state.objective_trace.append(obj)
        state.term_trace.append(terms)
        if callback is not None:
            callback("iteration", state, prob)
        if abs(obj - prev) / max(1.0, abs(prev)) < hp.tol:
            state.converged = True
            break
        prev = obj

    state.b = compute_bias(state, ds.X, ds.labels)
    log.debug("fit finished after %d iterations, objective %.6g", state.iter, state.objective_trace[-1])
    return state
