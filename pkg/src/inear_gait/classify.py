"""One-class and two-class RBF support vector machines.

Both problems are instances of the box- and equality-constrained quadratic
program

    minimize    0.5 * a' Q a + p' a
    subject to  y' a = const,   0 <= a_i <= C

which :func:`smo_solve` solves by repeatedly optimizing the maximally
KKT-violating pair of variables in closed form.

* one-class: Q = K, p = 0, y = 1, C = 1, sum(a) = nu * n; the stored
  coefficients are a / (nu n), so they lie in [0, 1/(nu n)] and sum to one.
  Score ``sum_i a_i K(x_i, x) - rho``.
* two-class: Q = (y y') * K, p = -1, y in {+1, -1}, y' a = 0.
  Score ``sum_i a_i y_i K(x_i, x) - rho``.

Features are z-scored with statistics of the training matrix before the
kernel is applied.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDataError, LayoutError, ParameterError

log = logging.getLogger(__name__)

DEFAULT_NU = 0.1
DEFAULT_C = 1.0
KKT_TOL = 1e-3
MAX_PAIR_UPDATES = 100_000
STALL_LIMIT = 50
MIN_ONE_CLASS_ROWS = 8
MIN_ROWS_PER_CLASS = 4
_TAU = 1e-12


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Scaler":
        X = np.asarray(X, dtype=np.float64)
        std = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(std > 0, std, 1.0))

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) / self.std


@dataclass(frozen=True)
class SvmModel:
    """A trained decision function; immutable once built."""

    kind: str
    support_vectors: np.ndarray
    dual_coefs: np.ndarray
    bias: float
    gamma: float
    scaler: Scaler
    feature_layout: str = ""
    decision_threshold: float = 0.0
    hyperparams: dict = field(default_factory=dict)
    preprocessing: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("support_vectors", "dual_coefs"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.kind not in ("one_class", "two_class"):
            raise ParameterError(f"unknown model kind {self.kind!r}")

    @property
    def n_support(self) -> int:
        return len(self.dual_coefs)

    def with_threshold(self, threshold: float) -> "SvmModel":
        return SvmModel(self.kind, self.support_vectors, self.dual_coefs, self.bias,
                        self.gamma, self.scaler, self.feature_layout, threshold,
                        dict(self.hyperparams), dict(self.preprocessing))


@dataclass
class SolverResult:
    alpha: np.ndarray
    rho: float
    objective: float
    iterations: int
    converged: bool


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    aa = np.einsum("ij,ij->i", A, A)[:, None]
    bb = np.einsum("ij,ij->i", B, B)[None, :]
    sq = np.maximum(aa + bb - 2.0 * A @ B.T, 0.0)
    return np.exp(-gamma * sq)


def smo_solve(Q: np.ndarray, p: np.ndarray, y: np.ndarray, C: float, alpha0: np.ndarray,
              tol: float = KKT_TOL, max_iter: int = MAX_PAIR_UPDATES) -> SolverResult:
    """Sequential pairwise optimization of the dual from a feasible start.

    Stops when the maximal KKT violation drops below ``tol``, after
    ``max_iter`` pair updates, or after ``STALL_LIMIT`` consecutive updates
    that fail to move any variable.
    """
    len(p)
    alpha = np.array(alpha0, dtype=np.float64)
    G = Q @ alpha + p
    diagQ = np.diag(Q).copy()
    converged = False
    stalled = 0
    it = 0
    while it < max_iter:
        yG = -y * G
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        if not up.any() or not low.any():
            converged = True
            break
        i = int(np.argmax(np.where(up, yG, -np.inf)))
        j = int(np.argmin(np.where(low, yG, np.inf)))
        if yG[i] - yG[j] < tol:
            converged = True
            break
        it += 1

        old_i, old_j = alpha[i], alpha[j]
        Qij = Q[i, j]
        if y[i] != y[j]:
            quad = diagQ[i] + diagQ[j] + 2.0 * Qij
            delta = (-G[i] - G[j]) / max(quad, _TAU)
            diff = old_i - old_j
            ai, aj = old_i + delta, old_j + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            quad = diagQ[i] + diagQ[j] - 2.0 * Qij
            delta = (G[i] - G[j]) / max(quad, _TAU)
            total = old_i + old_j
            ai, aj = old_i - delta, old_j + delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
            elif aj < 0:
                aj, ai = 0.0, total
            if total > C:
                if aj > C:
                    aj, ai = C, total - C
            elif ai < 0:
                ai, aj = 0.0, total
        d_i, d_j = ai - old_i, aj - old_j
        if abs(d_i) + abs(d_j) < 1e-15:
            stalled += 1
            if stalled >= STALL_LIMIT:
                log.warning("SMO stalled after %d pair updates", it)
                break
            continue
        stalled = 0
        alpha[i], alpha[j] = ai, aj
        G += Q[:, i] * d_i + Q[:, j] * d_j
    else:
        log.warning("SMO hit the %d pair-update cap before reaching tol=%g", max_iter, tol)

    rho = _rho(alpha, G, y, C)
    objective = 0.5 * alpha @ (G - p) + p @ alpha
    return SolverResult(alpha, rho, float(objective), it, converged)


def _rho(alpha, G, y, C) -> float:
    yG = y * G
    eps = 1e-12 * max(C, 1.0)
    at_upper = alpha >= C - eps
    at_lower = alpha <= eps
    free = ~at_upper & ~at_lower
    if free.any():
        return float(yG[free].mean())
    ub_mask = (at_upper & (y < 0)) | (at_lower & (y > 0))
    lb_mask = (at_upper & (y > 0)) | (at_lower & (y < 0))
    ub = yG[ub_mask].min() if ub_mask.any() else np.inf
    lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
    if np.isinf(ub):
        return float(lb)
    if np.isinf(lb):
        return float(ub)
    return float((ub + lb) / 2.0)


def _prepare(X, gamma):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ParameterError(f"feature matrix must be 2-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ParameterError("feature matrix contains non-finite values")
    if np.all(X == X[0]):
        raise DegenerateDataError("all training rows are identical")
    scaler = Scaler.fit(X)
    Z = scaler.transform(X)
    if gamma in (None, "auto"):
        mean_var = Z.var(axis=0).mean()
        gamma = 1.0 / (Z.shape[1] * mean_var)
    gamma = float(gamma)
    if not gamma > 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    return scaler, Z, gamma


def _check_invariants(model: SvmModel, C: float) -> None:
    coefs = model.dual_coefs
    if model.n_support == 0:
        raise DegenerateDataError("training produced no support vectors")
    slack = 1e-9 * max(C, 1.0)
    if model.kind == "one_class":
        if coefs.min() < -slack or coefs.max() > C + slack or abs(coefs.sum() - 1.0) > 1e-9:
            raise AssertionError("one-class dual coefficients left their feasible set")
    elif np.abs(coefs).max() > C + slack or abs(coefs.sum()) > 1e-6:
        raise AssertionError("two-class dual coefficients left their feasible set")


def train_one_class(X, nu: float = DEFAULT_NU, gamma="auto", layout: str = "",
                    tol: float = KKT_TOL, max_iter: int = MAX_PAIR_UPDATES,
                    preprocessing: dict | None = None) -> SvmModel:
    """Fit a nu-one-class SVM to the legitimate user's cycles.

    Dual coefficients lie in ``[0, 1/(nu n)]`` and sum to one, so at most a
    fraction ``nu`` of training points end up outside the boundary.
    """
    if not 0 < nu <= 1:
        raise ParameterError(f"nu must lie in (0, 1], got {nu}")
    X = np.asarray(X, dtype=np.float64)
    if len(X) < MIN_ONE_CLASS_ROWS:
        raise ParameterError(f"one-class training needs >= {MIN_ONE_CLASS_ROWS} rows, got {len(X)}")
    scaler, Z, gamma = _prepare(X, gamma)
    n = len(Z)
    # Solved with a unit box and sum(a) = nu n so the KKT tolerance is on the
    # usual scale; coefficients and rho are divided by nu n afterwards.
    total = nu * n
    alpha0 = np.zeros(n)
    n_full = min(int(total), n)
    alpha0[:n_full] = 1.0
    if n_full < n:
        alpha0[n_full] = total - n_full

    K = rbf_kernel(Z, Z, gamma)
    res = smo_solve(K, np.zeros(n), np.ones(n), 1.0, alpha0, tol, max_iter)
    sv = res.alpha > 0
    C = 1.0 / total
    model = SvmModel(
        "one_class", Z[sv], res.alpha[sv] / total, -res.rho / total, gamma, scaler, layout,
        hyperparams={"nu": nu, "gamma": gamma, "tol": tol, "objective": res.objective / total ** 2,
                     "iterations": res.iterations, "converged": res.converged},
        preprocessing=dict(preprocessing or {}),
    )
    _check_invariants(model, C)
    return model


def encode_labels(y) -> np.ndarray:
    """Map labels to +1 (legit) / -1 (impostor)."""
    y = np.asarray(y)
    if y.dtype.kind in "US":
        unknown = set(y.tolist()) - {"legit", "impostor"}
        if unknown:
            raise ParameterError(f"labels must be 'legit' or 'impostor', got {sorted(unknown)}")
        return np.where(y == "legit", 1.0, -1.0)
    if y.dtype == bool:
        return np.where(y, 1.0, -1.0)
    y = y.astype(np.float64)
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ParameterError("numeric labels must be +1 or -1")
    return y


def train_two_class(X, y, C: float = DEFAULT_C, gamma="auto", layout: str = "",
                    tol: float = KKT_TOL, max_iter: int = MAX_PAIR_UPDATES,
                    min_per_class: int = MIN_ROWS_PER_CLASS,
                    preprocessing: dict | None = None) -> SvmModel:
    """Soft-margin C-SVC separating the legitimate user from impostors."""
    if not C > 0:
        raise ParameterError(f"C must be positive, got {C}")
    X = np.asarray(X, dtype=np.float64)
    y = encode_labels(y)
    if len(y) != len(X):
        raise ParameterError("X and y differ in length")
    n_pos, n_neg = int((y > 0).sum()), int((y < 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ParameterError("two-class training needs both legit and impostor rows")
    if min(n_pos, n_neg) < min_per_class:
        raise ParameterError(f"each class needs >= {min_per_class} rows, got {n_pos}/{n_neg}")
    scaler, Z, gamma = _prepare(X, gamma)
    K = rbf_kernel(Z, Z, gamma)
    Q = (y[:, None] * y[None, :]) * K
    res = smo_solve(Q, -np.ones(len(y)), y, C, np.zeros(len(y)), tol, max_iter)
    sv = res.alpha > 0
    model = SvmModel(
        "two_class", Z[sv], res.alpha[sv] * y[sv], -res.rho, gamma, scaler, layout,
        hyperparams={"C": C, "gamma": gamma, "tol": tol, "objective": res.objective,
                     "iterations": res.iterations, "converged": res.converged},
        preprocessing=dict(preprocessing or {}),
    )
    _check_invariants(model, C)
    return model


def decision_scores(model: SvmModel, X) -> np.ndarray:
    """Scores for a matrix of raw (unscaled) feature rows."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.support_vectors.shape[1]:
        raise LayoutError(f"{X.shape[1]} features given, model expects {model.support_vectors.shape[1]}")
    K = rbf_kernel(model.scaler.transform(X), model.support_vectors, model.gamma)
    return K @ model.dual_coefs + model.bias


def verdicts(model: SvmModel, X) -> np.ndarray:
    """Boolean accept mask; a score equal to the threshold is rejected."""
    return decision_scores(model, X) > model.decision_threshold


@dataclass(frozen=True)
class Decision:
    verdict: str
    score: float

    @property
    def accepted(self) -> bool:
        return self.verdict == "accept"


def decide(model: SvmModel, v) -> Decision:
    """Score one feature vector; ``v`` may be a FeatureVector or a plain array.

    A FeatureVector whose layout differs from the model's is refused.
    """
    tag = getattr(v, "tag", None)
    if tag is not None:
        if model.feature_layout and tag != model.feature_layout:
            raise LayoutError(f"vector layout {tag!r} does not match model layout {model.feature_layout!r}")
        v = v.values
    score = float(decision_scores(model, v)[0])
    return Decision("accept" if score > model.decision_threshold else "reject", score)
