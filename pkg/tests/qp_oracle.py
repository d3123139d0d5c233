"""Independent solvers for the SVM dual used as test oracles.

Both solve  min 0.5 a'Qa + p'a  s.t.  y'a = delta,  0 <= a <= C.
"""

import itertools

import numpy as np


def objective(Q, p, a):
    return 0.5 * a @ Q @ a + p @ a


def enumerate_active_sets(Q, p, y, C, delta):
    """Exact optimum by trying every (lower, upper, free) labelling.

    A convex QP's optimum is the stationary point of the face it lies on, so
    the best feasible face-stationary point is the global minimum.  n <= 8.
    """
    n = len(p)
    best, best_a = np.inf, None
    for states in itertools.product((0, 1, 2), repeat=n):
        states = np.array(states)
        a = np.where(states == 1, C, 0.0).astype(float)
        free = np.flatnonzero(states == 2)
        fixed = np.flatnonzero(states != 2)
        if len(free):
            k = len(free)
            # KKT of the face: Q_ff a_f + lam y_f = -(p_f + Q_fx a_x); y_f' a_f = delta - y_x' a_x
            A = np.zeros((k + 1, k + 1))
            A[:k, :k] = Q[np.ix_(free, free)]
            A[:k, k] = y[free]
            A[k, :k] = y[free]
            rhs = np.concatenate([-(p[free] + Q[np.ix_(free, fixed)] @ a[fixed]),
                                  [delta - y[fixed] @ a[fixed]]])
            sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
            if np.linalg.norm(A @ sol - rhs) > 1e-8 * (1 + np.linalg.norm(rhs)):
                continue
            a[free] = sol[:k]
        if abs(y @ a - delta) > 1e-9 or a.min() < -1e-9 or a.max() > C + 1e-9:
            continue
        val = objective(Q, p, a)
        if val < best:
            best, best_a = val, a.copy()
    return best, best_a


def cvxpy_solve(Q, p, y, C, delta):
    import cvxpy as cp

    n = len(p)
    a = cp.Variable(n)
    Qp = cp.psd_wrap(0.5 * (Q + Q.T))
    prob = cp.Problem(cp.Minimize(0.5 * cp.quad_form(a, Qp) + p @ a),
                      [y @ a == delta, a >= 0, a <= C])
    prob.solve(solver=cp.CLARABEL if "CLARABEL" in cp.installed_solvers() else None)
    return float(prob.value), np.asarray(a.value)
