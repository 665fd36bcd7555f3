"""Small dense QP helpers used by the optimal-set machinery.

``nonneg_eq_lsq`` minimizes 0.5 ||M a - m||^2 over {a >= 0, G a = b} with an
augmented Lagrangian outer loop and projected accelerated gradient inner
steps; the result is accepted only when its own KKT system verifies.
``ball_lstsq`` solves min ||M v - t|| over ||v|| <= radius in closed form
via the secular equation (dimensions here are tiny).
"""

import numpy as np

from .core import SolverError


def _project_nonneg(a):
    return np.maximum(a, 0.0)


def _inner_pgd(hess_mv, lin, a0, lipschitz, max_iters, tol):
    """Projected FISTA for 0.5 a^T H a + lin^T a over a >= 0."""
    a = _project_nonneg(a0)
    z = a.copy()
    t = 1.0
    eta = 1.0 / max(lipschitz, 1e-300)

    def value(x):
        return 0.5 * float(x @ hess_mv(x)) + float(lin @ x)

    f_a = value(a)
    for _ in range(max_iters):
        g = hess_mv(z) + lin
        a_next = _project_nonneg(z - eta * g)
        f_next = value(a_next)
        if f_next > f_a + 1e-14:
            z = a.copy()
            t = 1.0
            g = hess_mv(z) + lin
            a_next = _project_nonneg(z - eta * g)
            f_next = value(a_next)
            if f_next > f_a + 1e-14:
                a_next, f_next = a, f_a
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = a_next + ((t - 1.0) / t_next) * (a_next - a)
        move = np.linalg.norm(a_next - a)
        a, f_a, t = a_next, f_next, t_next
        # projected-gradient fixed point test
        g_a = hess_mv(a) + lin
        if np.linalg.norm(a - _project_nonneg(a - eta * g_a)) <= tol * eta:
            break
        if move == 0.0:
            break
    return a


def nonneg_eq_lsq(M, m, G, b, a0=None, tol=1e-10, max_outer=60, max_inner=20_000):
    """Minimize 0.5||M a - m||^2 subject to G a = b and a >= 0.

    Returns (a, nu) where nu are the equality multipliers.  Raises
    SolverError if the KKT residuals cannot be driven below tolerance.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    m = np.asarray(m, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    k = M.shape[1]
    a = np.zeros(k) if a0 is None else _project_nonneg(np.asarray(a0, dtype=float))
    nu = np.zeros(G.shape[0])
    scale = 1.0 + np.linalg.norm(b)
    norm_M2 = np.linalg.norm(M, 2) ** 2
    norm_G2 = np.linalg.norm(G, 2) ** 2 if G.size else 0.0
    mu = 10.0 * max(1.0, norm_M2) / max(norm_G2, 1e-12)

    def kkt_ok(a_try, nu_try):
        gap = G @ a_try - b
        s = M.T @ (M @ a_try - m) + G.T @ nu_try
        feas = np.linalg.norm(gap)
        stat = float(np.linalg.norm(np.minimum(s, 0.0)))
        comp = float(np.max(np.abs(s * a_try), initial=0.0))
        return feas, stat, comp

    def polish(a_cur, nu_cur):
        """Equality-constrained solve on the support identified by a_cur."""
        support = np.flatnonzero(a_cur > 1e-10 * (1.0 + np.max(a_cur, initial=0.0)))
        if support.size == 0:
            return None
        Ms = M[:, support]
        Gs = G[:, support]
        ks, ge = support.size, G.shape[0]
        sys = np.zeros((ks + ge, ks + ge))
        sys[:ks, :ks] = Ms.T @ Ms
        sys[:ks, ks:] = Gs.T
        sys[ks:, :ks] = Gs
        rhs = np.concatenate([Ms.T @ m, b])
        sol, *_ = np.linalg.lstsq(sys, rhs, rcond=None)
        a_try = np.zeros(k)
        a_try[support] = np.maximum(sol[:ks], 0.0)
        return a_try, sol[ks:]

    prev_feas = np.inf
    feas = stat = np.inf
    for _ in range(max_outer):
        MtM = M.T @ M + mu * (G.T @ G)
        lin = -(M.T @ m) + G.T @ (nu - mu * b)

        def hess_mv(x, H=MtM):
            return H @ x

        lipschitz = norm_M2 + mu * norm_G2
        a = _inner_pgd(hess_mv, lin, a, lipschitz, max_inner, tol * 1e-2)
        gap = G @ a - b
        nu = nu + mu * gap
        feas, stat, comp = kkt_ok(a, nu)
        if feas <= tol * scale and stat <= tol * scale and comp <= tol * scale * 10:
            return a, nu
        if feas <= 1e-4 * scale:
            out = polish(a, nu)
            if out is not None:
                feas_p, stat_p, comp_p = kkt_ok(*out)
                if (
                    feas_p <= tol * scale
                    and stat_p <= tol * scale
                    and comp_p <= tol * scale * 10
                ):
                    return out
        if feas > 0.1 * tol * scale and feas > 0.25 * prev_feas:
            mu *= 5.0
        prev_feas = feas
    raise SolverError(
        f"nonneg_eq_lsq failed: feasibility {feas:.2e}, stationarity {stat:.2e}"
    )


def ball_lstsq(M, t, radius=1.0):
    """min ||M v - t||_2 over ||v||_2 <= radius, by the secular equation."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    t = np.asarray(t, dtype=float).ravel()
    v, *_ = np.linalg.lstsq(M, t, rcond=None)
    if np.linalg.norm(v) <= radius:
        return v
    # boundary solution: v(mu) = (M^T M + mu I)^{-1} M^T t with ||v(mu)|| = radius
    H = M.T @ M
    g = M.T @ t
    evals, V = np.linalg.eigh(H)
    c = V.T @ g

    def norm_at(mu):
        return np.sqrt(np.sum((c / (evals + mu)) ** 2))

    lo, hi = 0.0, 1.0
    while norm_at(hi) > radius:
        hi *= 10.0
        if hi > 1e300:
            break
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if norm_at(mid) > radius:
            lo = mid
        else:
            hi = mid
    mu = 0.5 * (lo + hi)
    return V @ (c / (evals + mu))
