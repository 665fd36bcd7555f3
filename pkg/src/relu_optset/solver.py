"""First-order solvers for the constrained group lasso.

Unconstrained problems are solved with a monotone accelerated proximal
gradient method (block soft-thresholding steps).  Constrained problems wrap
the same inner method in an augmented Lagrangian loop over the cone
constraints.  A solve is accepted only when the full KKT report from
:mod:`relu_optset.core` passes, so downstream consumers always receive
certified primal/dual pairs.

Solves are deterministic: the default initialization is the zero vector and
no randomized steps are taken, so repeated runs are bit-identical.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .core import (
    CglProblem,
    DualCertificate,
    SolverError,
    kkt_report,
    objective,
)


@dataclass
class SolverOptions:
    """Knobs for :func:`solve`.

    ``seed`` is reserved for randomized initialization strategies; the
    default zero start never consumes it.
    """

    max_iters: int = 50_000
    kkt_tol: float = 1e-6
    step_rule: str = "fixed"  # "fixed" | "backtracking"
    al_penalty_init: float = 10.0
    al_penalty_growth: float = 10.0
    seed: int = 0
    check_every: int = 25
    max_outer: int = 80
    trace: bool = False

    def __post_init__(self):
        if self.max_iters <= 0:
            raise ValueError("max_iters must be positive")
        if self.kkt_tol <= 0:
            raise ValueError("kkt_tol must be positive")
        if self.al_penalty_growth <= 1:
            raise ValueError("al_penalty_growth must exceed 1")
        if self.step_rule not in ("fixed", "backtracking"):
            raise ValueError(f"unknown step rule {self.step_rule!r}")


@dataclass
class SolveResult:
    """Primal weights plus the certificate and report backing them."""

    w: np.ndarray
    certificate: DualCertificate
    report: object
    converged: bool
    iterations: int
    objective: float
    trace: list = field(default_factory=list)

    def write_trace(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "objective", "kkt_violation"])
            for row in self.trace:
                writer.writerow(row)


def prox_block(v, threshold):
    """Block soft-threshold: shrink ||v|| by ``threshold``, keep direction.

    Returns the zero vector when ||v|| <= threshold (0/0 convention).
    """
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    v = np.asarray(v, dtype=float)
    norm = np.linalg.norm(v)
    if norm <= threshold or norm == 0.0:
        return np.zeros_like(v)
    return (1.0 - threshold / norm) * v


def _prox_all(partition, w, threshold):
    out = np.empty_like(w)
    for b in partition.blocks:
        out[b] = prox_block(w[b], threshold)
    return out


def power_iteration(X, iters=30, tol=1e-10):
    """Largest squared singular value of X, via power iteration on X^T X."""
    X = np.asarray(X, dtype=float)
    d = X.shape[1]
    if d == 0:
        return 0.0
    v = np.full(d, 1.0 / np.sqrt(d))
    last = 0.0
    for _ in range(iters):
        u = X.T @ (X @ v)
        norm = np.linalg.norm(u)
        if norm == 0.0:
            return 0.0
        v = u / norm
        if abs(norm - last) <= tol * max(1.0, norm):
            break
        last = norm
    return float(norm)


def _penalty(partition, w, lam):
    return lam * sum(np.linalg.norm(w[b]) for b in partition.blocks)


def _fista(partition, smooth, grad, lam, w0, lipschitz, max_iters, gap_tol,
           step_rule, stop_cb=None, check_every=25):
    """Monotone FISTA on smooth(w) + lam * sum ||w_b||.

    ``stop_cb(w)`` may return True to stop early (used for KKT-based
    stopping).  The accepted iterate never increases the composite
    objective, restarting momentum whenever acceleration overshoots.
    """
    w = w0.copy()
    z = w0.copy()
    t = 1.0
    eta = 1.0 / lipschitz if lipschitz > 0 else 1.0
    f_w = smooth(w) + _penalty(partition, w, lam)
    n_iters = 0
    for k in range(max_iters):
        n_iters = k + 1
        g = grad(z)
        step = eta
        if step_rule == "backtracking":
            fz = smooth(z)
            while True:
                cand = _prox_all(partition, z - step * g, lam * step)
                diff = cand - z
                if smooth(cand) <= fz + g @ diff + (diff @ diff) / (2 * step):
                    break
                step *= 0.5
                if step < 1e-18:
                    break
            w_next = cand
        else:
            w_next = _prox_all(partition, z - step * g, lam * step)
        f_next = smooth(w_next) + _penalty(partition, w_next, lam)
        if f_next > f_w + 1e-12:
            # overshoot: restart momentum from the best point so far
            z = w.copy()
            t = 1.0
            g = grad(z)
            w_next = _prox_all(partition, z - step * g, lam * step)
            f_next = smooth(w_next) + _penalty(partition, w_next, lam)
            if f_next > f_w + 1e-12:
                w_next, f_next = w, f_w
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = w_next + ((t - 1.0) / t_next) * (w_next - w)
        move = np.linalg.norm(w_next - w)
        w, f_w, t = w_next, f_next, t_next
        if (k + 1) % check_every == 0 or move <= gap_tol * max(1.0, np.linalg.norm(w)):
            if stop_cb is not None and stop_cb(w):
                break
            if move == 0.0:
                break
    return w, n_iters


def _try_polish(problem, w, rho_inactive, options):
    """Newton polish on the identified active set and active constraints.

    Solves the reduced stationarity system in (w_A, rho_B) to machine
    precision once the first-order loop has localized the solution; the
    caller keeps the polished point only if its full KKT report improves.
    Returns (w, rho, report) or None.
    """
    lam = problem.lam
    part = problem.partition
    norm_w = np.linalg.norm(w)
    act = [
        i
        for i in range(problem.m)
        if np.linalg.norm(part.block(w, i)) > 1e-6 * (1.0 + norm_w)
    ]
    if not act:
        return None
    coords = np.concatenate([part.blocks[i] for i in act])
    X_A = problem.X[:, coords]
    dA = coords.size
    # active constraint rows: nearly tight or carrying a multiplier
    row_ids = []
    for i in act:
        K = problem.constraints[i]
        if K is None:
            continue
        wb = part.block(w, i)
        vals = K.T @ wb
        rb = rho_inactive[i] if rho_inactive[i] is not None else None
        for j in range(K.shape[1]):
            mult_j = rb[j] if rb is not None and rb.size else 0.0
            if abs(vals[j]) <= 1e-4 * (1.0 + np.linalg.norm(wb)) or mult_j > 1e-10:
                row_ids.append((i, j))
    aB = len(row_ids)
    K_B = np.zeros((dA, aB))
    offsets = {}
    pos = 0
    for i in act:
        offsets[i] = pos
        pos += part.blocks[i].size
    for col, (i, j) in enumerate(row_ids):
        K = problem.constraints[i]
        width = part.blocks[i].size
        K_B[offsets[i] : offsets[i] + width, col] = K[:, j]

    w_A0 = w[coords].copy()

    def newton(rows):
        aB = len(rows)
        K_B = np.zeros((dA, aB))
        for col, (i, j) in enumerate(rows):
            K = problem.constraints[i]
            width = part.blocks[i].size
            K_B[offsets[i] : offsets[i] + width, col] = K[:, j]
        w_vec = w_A0.copy()
        rho_vec = np.array(
            [
                rho_inactive[i][j]
                if rho_inactive[i] is not None and rho_inactive[i].size
                else 0.0
                for (i, j) in rows
            ]
        )

        def residual(w_v, rho_v):
            grad = X_A.T @ (X_A @ w_v - problem.y)
            for i in act:
                width = part.blocks[i].size
                seg = slice(offsets[i], offsets[i] + width)
                nb = np.linalg.norm(w_v[seg])
                if nb == 0.0:
                    return None
                grad[seg] += lam * w_v[seg] / nb
            if aB:
                grad += K_B @ rho_v
                return np.concatenate([grad, K_B.T @ w_v])
            return grad

        def jac(w_v):
            H = X_A.T @ X_A
            for i in act:
                width = part.blocks[i].size
                seg = slice(offsets[i], offsets[i] + width)
                nb = np.linalg.norm(w_v[seg])
                u = w_v[seg] / nb
                H[seg, seg] += lam * (np.eye(width) - np.outer(u, u)) / nb
            if aB:
                top = np.hstack([H, K_B])
                bottom = np.hstack([K_B.T, np.zeros((aB, aB))])
                return np.vstack([top, bottom])
            return H

        F = residual(w_vec, rho_vec)
        if F is None:
            return None
        for _ in range(40):
            if np.linalg.norm(F) <= 1e-14 * (1.0 + np.linalg.norm(problem.y)):
                break
            try:
                delta = np.linalg.solve(jac(w_vec), -F)
            except np.linalg.LinAlgError:
                return None
            step = 1.0
            base = np.linalg.norm(F)
            improved = False
            for _ in range(30):
                w_try = w_vec + step * delta[:dA]
                rho_try = rho_vec + step * delta[dA:] if aB else rho_vec
                F_try = residual(w_try, rho_try)
                if F_try is not None and np.linalg.norm(F_try) < base:
                    w_vec, rho_vec, F = w_try, rho_try, F_try
                    improved = True
                    break
                step *= 0.5
            if not improved:
                break
        return w_vec, rho_vec

    # working-set loop over constraint rows: drop rows whose multiplier
    # turns negative, add rows the polished point violates
    rows = list(row_ids)
    scale_w = 1.0 + np.linalg.norm(w)
    for _ in range(12):
        out = newton(rows)
        if out is None:
            return None
        w_A, rho_B = out
        neg = [k for k in range(len(rows)) if rho_B[k] < -1e-10]
        if neg:
            worst = min(neg, key=lambda k: rho_B[k])
            rows.pop(worst)
            continue
        added = False
        for i in act:
            K = problem.constraints[i]
            if K is None:
                continue
            seg = slice(offsets[i], offsets[i] + part.blocks[i].size)
            vals = K.T @ w_A[seg]
            for j in range(K.shape[1]):
                if (i, j) in rows:
                    continue
                if vals[j] > 1e-12 * scale_w:
                    rows.append((i, j))
                    added = True
            if added:
                break
        if not added:
            break
    else:
        return None

    w_new = np.zeros(problem.d)
    w_new[coords] = w_A
    rho_blocks = []
    r_new = problem.y - problem.X @ w_new
    for i in range(problem.m):
        K = problem.constraints[i]
        if K is None:
            rho_blocks.append(np.zeros(0))
            continue
        rb = np.zeros(K.shape[1])
        if i in act:
            for col, (bi, j) in enumerate(rows):
                if bi == i:
                    rb[j] = max(0.0, rho_B[col])
        else:
            c = problem.X_block(i).T @ r_new
            from scipy.optimize import nnls as _nnls

            rb, _ = _nnls(K, c)
        rho_blocks.append(rb)
    rho_new = DualCertificate(rho_blocks)
    report = kkt_report(problem, w_new, rho_new, options.kkt_tol)
    return w_new, rho_new, report


def _polish_loop(problem, w, rho_hint, options, rounds=6):
    """Newton polish with active-set growth.

    When a polished point still violates stationarity on a zero block
    (its correlation norm exceeds lambda), that block is seeded along its
    v-direction and the polish re-runs.  Returns the best verified attempt
    or None.
    """
    w_cur = np.asarray(w, dtype=float).copy()
    hint = list(rho_hint)
    tried = set()
    best = None
    for _ in range(rounds):
        out = _try_polish(problem, w_cur, hint, options)
        if out is None:
            return best
        w_new, rho_new, report = out
        if best is None or report.max_violation < best[2].max_violation:
            best = out
        if report.satisfied:
            return out
        lam = problem.lam
        norm_w = np.linalg.norm(w_new)
        defects = []
        for i in range(problem.m):
            if np.linalg.norm(problem.partition.block(w_new, i)) > 1e-6 * (1 + norm_w):
                continue
            gap = np.linalg.norm(report.v_vectors[i]) - lam
            if i not in tried and gap > 0.1 * options.kkt_tol:
                defects.append((gap, i))
        if not defects:
            # growth exhausted: try zeroing active blocks instead, since a
            # stalled first-order iterate may carry spurious active blocks
            actives = sorted(
                (
                    np.linalg.norm(problem.partition.block(w_new, i)),
                    i,
                )
                for i in range(problem.m)
                if np.linalg.norm(problem.partition.block(w_new, i))
                > 1e-6 * (1 + norm_w)
            )
            for _, i in actives[:-1]:
                w_try = w_new.copy()
                w_try[problem.partition.blocks[i]] = 0.0
                dropped = _try_polish(problem, w_try, hint, options)
                if dropped is not None and dropped[2].satisfied:
                    return dropped
                if dropped is not None and (
                    dropped[2].max_violation < best[2].max_violation
                ):
                    best = dropped
            return best
        _, j = max(defects)
        tried.add(j)
        w_cur = w_new.copy()
        v = report.v_vectors[j]
        seed = 1e-3 * (1.0 + norm_w) / max(np.linalg.norm(v), 1e-300)
        w_cur[problem.partition.blocks[j]] = seed * v
        hint = [
            rho_new.block(i) if problem.constraints[i] is not None else None
            for i in range(problem.m)
        ]
    return best


def _validate_inputs(problem, w0):
    if not isinstance(problem, CglProblem):
        raise TypeError("expected a CglProblem")
    if w0 is not None:
        w0 = problem.check_weights(np.asarray(w0, dtype=float))
        if not np.all(np.isfinite(w0)):
            raise ValueError("initial weights must be finite")
        return w0.copy()
    return np.zeros(problem.d)


def _solve_unconstrained(problem, options, w0):
    X, y, lam = problem.X, problem.y, problem.lam
    part = problem.partition
    L = power_iteration(X)

    def smooth(w):
        r = X @ w - y
        return 0.5 * float(r @ r)

    def grad(w):
        return X.T @ (X @ w - y)

    rho = DualCertificate.zeros(problem)
    trace = []
    best = {"report": None}
    # run the first-order loop to a moderate tolerance and let the Newton
    # polish close the remaining gap when a tighter one was requested
    coarse_tol = max(options.kkt_tol, 1e-7)

    def stop(w):
        rep = kkt_report(problem, w, rho, options.kkt_tol)
        best["report"] = rep
        if options.trace:
            trace.append((len(trace), objective(problem, w), rep.max_violation))
        return rep.satisfied or rep.max_violation <= coarse_tol

    w, iters = _fista(
        part, smooth, grad, lam, w0, L, options.max_iters, options.kkt_tol * 1e-3,
        options.step_rule, stop_cb=stop, check_every=options.check_every,
    )
    report = best["report"] or kkt_report(problem, w, rho, options.kkt_tol)
    if not report.satisfied:
        polished = _polish_loop(problem, w, [None] * problem.m, options)
        if polished is not None and (
            polished[2].satisfied
            or polished[2].max_violation < report.max_violation
        ):
            w, rho, report = polished
    return SolveResult(
        w=w,
        certificate=rho,
        report=report,
        converged=report.satisfied,
        iterations=iters,
        objective=objective(problem, w),
        trace=trace,
    )


def _solve_constrained(problem, options, w0, rho0=None):
    X, y, lam = problem.X, problem.y, problem.lam
    part = problem.partition
    constraints = problem.constraints
    L_X = power_iteration(X)
    L_K = max(
        (power_iteration(K.T) for K in constraints if K is not None), default=0.0
    )

    idx = [i for i, K in enumerate(constraints) if K is not None]
    mu = float(options.al_penalty_init)
    if rho0 is not None:
        mult = {i: rho0.block(i).copy() for i in idx}
    else:
        mult = {i: np.zeros(constraints[i].shape[1]) for i in idx}
    w = w0
    trace = []
    total_iters = 0
    prev_viol = np.inf
    report = None
    inner_cap = max(200, min(options.max_iters // 10, 3000))
    for outer in range(options.max_outer):
        def smooth(wv, mu=mu):
            r = X @ wv - y
            val = 0.5 * float(r @ r)
            for i in idx:
                g = constraints[i].T @ wv[part.blocks[i]]
                t = np.maximum(0.0, mult[i] + mu * g)
                val += float(t @ t - mult[i] @ mult[i]) / (2.0 * mu)
            return val

        def grad(wv, mu=mu):
            g_full = X.T @ (X @ wv - y)
            for i in idx:
                K = constraints[i]
                t = np.maximum(0.0, mult[i] + mu * (K.T @ wv[part.blocks[i]]))
                g_full[part.blocks[i]] += K @ t
            return g_full

        # inner tolerance follows the current constraint violation, measured
        # by the proximal-gradient fixed-point residual of the AL objective
        inner_tol = max(0.5 * options.kkt_tol, 0.05 * min(prev_viol, 1.0))
        lipschitz = L_X + mu * L_K ** 2
        eta = 1.0 / max(lipschitz, 1e-300)

        def stop(wv):
            step_pt = _prox_all(part, wv - eta * grad(wv), lam * eta)
            gm = np.linalg.norm(wv - step_pt) / eta
            return gm <= inner_tol

        w, inner_iters = _fista(
            part, smooth, grad, lam, w, lipschitz,
            inner_cap, options.kkt_tol * 1e-3, options.step_rule,
            stop_cb=stop, check_every=options.check_every,
        )
        total_iters += inner_iters
        for i in idx:
            g = constraints[i].T @ w[part.blocks[i]]
            mult[i] = np.maximum(0.0, mult[i] + mu * g)
        rho = DualCertificate(
            [mult[i] if i in mult else np.zeros(0) for i in range(problem.m)]
        )
        report = kkt_report(problem, w, rho, options.kkt_tol)
        viol = report.max_violation
        if options.trace:
            trace.append((total_iters, objective(problem, w), viol))
        if report.satisfied:
            break
        if viol <= 1e-2 and (viol <= 100 * options.kkt_tol or outer % 3 == 2):
            rho_hint = [
                mult[i] if problem.constraints[i] is not None else None
                for i in range(problem.m)
            ]
            polished = _polish_loop(problem, w, rho_hint, options)
            if polished is not None and polished[2].satisfied:
                return SolveResult(
                    w=polished[0],
                    certificate=polished[1],
                    report=polished[2],
                    converged=True,
                    iterations=total_iters,
                    objective=objective(problem, polished[0]),
                    trace=trace,
                )
        feas = max(report.feasibility_violation, report.slackness_violation)
        if feas > max(0.1 * options.kkt_tol, 0.25 * prev_viol):
            mu *= options.al_penalty_growth
        prev_viol = feas
        if total_iters >= options.max_iters:
            break
    rho = DualCertificate(
        [mult.get(i, np.zeros(0)) for i in range(problem.m)]
    )
    if report is None:
        report = kkt_report(problem, w, rho, options.kkt_tol)
    return SolveResult(
        w=w,
        certificate=rho,
        report=report,
        converged=report.satisfied,
        iterations=total_iters,
        objective=objective(problem, w),
        trace=trace,
    )


def solve(problem, options=None, w0=None, rho0=None):
    """Solve a CGL problem to certified KKT tolerance.

    ``w0`` and ``rho0`` warm-start the primal weights and (for constrained
    problems) the augmented Lagrangian multipliers.  Returns a
    :class:`SolveResult`; when the iteration budget runs out the result
    carries ``converged=False`` together with the best iterate and its
    report, rather than raising.
    """
    options = options or SolverOptions()
    w0 = _validate_inputs(problem, w0)
    if problem.constrained:
        return _solve_constrained(problem, options, w0, rho0=rho0)
    return _solve_unconstrained(problem, options, w0)


def solve_or_raise(problem, options=None, w0=None):
    result = solve(problem, options, w0)
    if not result.converged:
        raise SolverError(
            f"solver stopped at violation {result.report.max_violation:.3e} "
            f"after {result.iterations} iterations"
        )
    return result


def extended_l2_problem(problem, delta):
    """CGL problem equivalent to adding (delta/2)*||w||^2 to the objective.

    Stacks sqrt(delta) * I under the design and zeros under the targets; the
    extended design has full column rank, so the solution is unique.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    X_ext = np.vstack([problem.X, np.sqrt(delta) * np.eye(problem.d)])
    y_ext = np.concatenate([problem.y, np.zeros(problem.d)])
    return CglProblem(X_ext, y_ext, problem.partition, problem.constraints, problem.lam)


def objective_l2(problem, w, delta):
    """Objective of the l2-penalized problem, evaluated directly."""
    w = problem.check_weights(w)
    return objective(problem, w) + 0.5 * delta * float(w @ w)


def solve_l2(problem, delta, options=None, w0=None):
    """Solve the l2-penalized variant by solving the extended problem.

    The returned report certifies the extended problem, whose solution is
    unique because the extended design has full column rank.
    """
    ext = extended_l2_problem(problem, delta)
    return solve(ext, options, w0)
