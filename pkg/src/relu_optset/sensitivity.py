"""Differential sensitivity of minimal CGL solutions.

At a minimal solution with linear-independence and strict-complementarity
qualifications, the active weights follow a locally smooth solution
function of (lambda, y).  Its Jacobians come from the implicit function
theorem applied to the KKT system of the problem reduced to the active
blocks; the finite-difference oracle re-solves perturbed problems at a
tightened tolerance for cross-checks.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from .core import (
    CertificateError,
    CglProblem,
    DualCertificate,
    active_set,
    kkt_report,
)
from .pruning import is_minimal
from .solver import SolverOptions, solve

SCS_EPSILON = 1e-8


def group_curvature(wb):
    """Curvature block (1/||w||) (I - u u^T) of the group-norm Hessian."""
    wb = np.asarray(wb, dtype=float)
    norm = np.linalg.norm(wb)
    if norm == 0.0:
        raise ValueError("curvature block undefined at a zero block")
    u = wb / norm
    return (np.eye(wb.size) - np.outer(u, u)) / norm


def reduced_problem(problem, w):
    """Restriction of the problem to the active blocks of a minimal w.

    Returns (reduced, active_blocks).  The reduced problem's unique
    solution is exactly the active part of w, which callers may verify by
    re-solving.  Non-minimal inputs are refused.
    """
    w = problem.check_weights(w)
    check = is_minimal(problem, w)
    if not check.minimal:
        raise CertificateError(
            f"reduced problem requires a minimal solution "
            f"(sigma_min {check.sigma_min:.3e} <= {check.threshold:.3e})"
        )
    act = active_set(problem, w)
    if not act:
        raise CertificateError("reduced problem undefined for the zero solution")
    cols = np.concatenate([problem.partition.blocks[i] for i in act])
    widths = [problem.partition.blocks[i].size for i in act]
    from .core import BlockPartition

    reduced = CglProblem(
        problem.X[:, cols],
        problem.y,
        BlockPartition.from_sizes(widths),
        [problem.constraints[i] for i in act],
        problem.lam,
    )
    return reduced, act


@dataclass(eq=False)
class CqReport:
    licq: bool
    scs: bool
    active_constraints: tuple  # (block, row) pairs
    scs_witness: DualCertificate | None = None


def _active_rows(problem, w, act, tol):
    rows = []
    for i in act:
        K = problem.constraints[i]
        if K is None:
            continue
        wb = problem.partition.block(w, i)
        vals = K.T @ wb
        scale = 1.0 + np.linalg.norm(wb)
        for j in range(K.shape[1]):
            if abs(vals[j]) <= tol * scale:
                rows.append((i, j))
    return rows


def check_cq(problem, w, rho, tol=1e-6):
    """Constraint qualifications at a verified pair.

    LICQ: the constraint columns active at w (over active blocks) are
    linearly independent.  SCS: some dual certificate puts mass at least
    SCS_EPSILON on every active constraint row while staying within the
    stationarity budget; the search re-runs the per-block dual recovery
    with shifted variables.  Both hold vacuously without constraints.
    """
    w = problem.check_weights(w)
    report = kkt_report(problem, w, rho, tol)
    if not report.satisfied:
        raise CertificateError("check_cq requires a verified pair")
    act = list(report.active)
    rows = _active_rows(problem, w, act, tol)

    if rows:
        cols = []
        for (i, j) in rows:
            K = problem.constraints[i]
            col = np.zeros(problem.d)
            col[problem.partition.blocks[i]] = K[:, j]
            cols.append(col)
        mat = np.column_stack(cols)
        s = np.linalg.svd(mat, compute_uv=False)
        licq = bool(s[-1] > max(mat.shape) * s[0] * 1e-12)
    else:
        licq = True

    lam = problem.lam
    r = problem.y - problem.X @ w
    scs = True
    witness_blocks = []
    for i in range(problem.m):
        K = problem.constraints[i]
        if K is None:
            witness_blocks.append(np.zeros(0))
            continue
        c = problem.X_block(i).T @ r
        wb = problem.partition.block(w, i)
        norm_wb = np.linalg.norm(wb)
        if i in act:
            need = [j for (bi, j) in rows if bi == i]
        elif i in report.equicorrelation:
            need = list(range(K.shape[1]))  # every row is active at w_b = 0
        else:
            witness_blocks.append(rho.block(i).copy())
            continue
        if not need:
            witness_blocks.append(rho.block(i).copy())
            continue
        shift = np.zeros(K.shape[1])
        shift[need] = SCS_EPSILON
        base = K @ shift
        if i in act:
            target = c - lam * wb / norm_wb - base
            rho_b, resid = nnls(K, target)
            ok = resid <= tol * (1.0 + np.linalg.norm(target))
        else:
            rho_b, _ = nnls(K, c - base)
            ok = np.linalg.norm(c - base - K @ rho_b) <= lam + tol
        if not ok:
            scs = False
            witness_blocks.append(rho.block(i).copy())
        else:
            witness_blocks.append(rho_b + shift)
    witness = DualCertificate(witness_blocks) if scs else None
    if witness is not None:
        if not kkt_report(problem, w, witness, max(tol, 10 * SCS_EPSILON)).satisfied:
            scs = False
            witness = None
    return CqReport(
        licq=licq, scs=scs, active_constraints=tuple(rows), scs_witness=witness
    )


@dataclass(eq=False)
class SensitivityReport:
    jacobian_lambda: np.ndarray | None
    jacobian_y: np.ndarray | None
    licq: bool
    scs: bool
    active_coords: tuple
    active_blocks: tuple
    d_condition: float | None
    present: bool
    reason: str | None = None


def jacobians(problem, w, rho, tol=1e-6):
    """Analytic Jacobians of the active weights w.r.t. lambda and y.

    Assembles the KKT Jacobian of the reduced problem,

        D = [[X_A^T X_A + lam * M,  K_A],
             [rho_A * K_A^T,        diag(K_A^T w_A)]],

    where M is the block-diagonal group curvature, and reads the Jacobians
    off the leading principal block of D^{-1}:
    d w/d lambda = -[D^{-1}]_A u_A and d w/d y = [D^{-1}]_A X_A^T.
    Emitted only when the solution is minimal and LICQ/SCS hold.
    """
    w = problem.check_weights(w)
    check = is_minimal(problem, w)
    if not check.minimal:
        return SensitivityReport(
            None, None, False, False, (), (), None, False,
            reason="solution is not minimal",
        )
    cq = check_cq(problem, w, rho, tol)
    if not (cq.licq and cq.scs):
        failed = "LICQ" if not cq.licq else "SCS"
        return SensitivityReport(
            None, None, cq.licq, cq.scs, (), (), None, False,
            reason=f"{failed} failed",
        )
    act = list(active_set(problem, w))
    coords = np.concatenate([problem.partition.blocks[i] for i in act])
    X_A = problem.X[:, coords]
    dA = coords.size
    lam = problem.lam

    # block-diagonal curvature over the active blocks
    M = np.zeros((dA, dA))
    u = np.zeros(dA)
    pos = 0
    for i in act:
        wb = problem.partition.block(w, i)
        width = wb.size
        M[pos : pos + width, pos : pos + width] = group_curvature(wb)
        u[pos : pos + width] = wb / np.linalg.norm(wb)
        pos += width

    # stacked constraint matrix over active blocks
    k_cols = []
    rho_entries = []
    pos = 0
    for i in act:
        K = problem.constraints[i]
        width = problem.partition.blocks[i].size
        if K is not None:
            for j in range(K.shape[1]):
                col = np.zeros(dA)
                col[pos : pos + width] = K[:, j]
                k_cols.append(col)
                rho_entries.append(rho.block(i)[j])
        pos += width
    K_A = np.column_stack(k_cols) if k_cols else np.zeros((dA, 0))
    rho_A = np.asarray(rho_entries)
    aA = K_A.shape[1]

    H = X_A.T @ X_A + lam * M
    D = np.zeros((dA + aA, dA + aA))
    D[:dA, :dA] = H
    if aA:
        D[:dA, dA:] = K_A
        D[dA:, :dA] = rho_A[:, None] * K_A.T
        D[dA:, dA:] = np.diag(K_A.T @ (w[coords]))
    cond = float(np.linalg.cond(D))
    rhs_lam = np.concatenate([u, np.zeros(aA)])
    rhs_y = np.vstack([X_A.T, np.zeros((aA, problem.n))])
    try:
        sol_lam = np.linalg.solve(D, rhs_lam)
        sol_y = np.linalg.solve(D, rhs_y)
    except np.linalg.LinAlgError:
        return SensitivityReport(
            None, None, cq.licq, cq.scs, tuple(coords), tuple(act), cond,
            False, reason="KKT Jacobian is singular",
        )
    return SensitivityReport(
        jacobian_lambda=-sol_lam[:dA],
        jacobian_y=sol_y[:dA],
        licq=cq.licq,
        scs=cq.scs,
        active_coords=tuple(int(c) for c in coords),
        active_blocks=tuple(act),
        d_condition=cond,
        present=True,
    )


def reduced_hessian(problem, w):
    """X_A^T X_A + lam * M(w) over the active coordinates."""
    act = list(active_set(problem, w))
    coords = np.concatenate([problem.partition.blocks[i] for i in act])
    X_A = problem.X[:, coords]
    dA = coords.size
    M = np.zeros((dA, dA))
    pos = 0
    for i in act:
        wb = problem.partition.block(w, i)
        M[pos : pos + wb.size, pos : pos + wb.size] = group_curvature(wb)
        pos += wb.size
    return X_A.T @ X_A + problem.lam * M


def fd_jacobian(problem, w, rho, what, h=None, options=None):
    """Central-difference Jacobian through full re-solves.

    Returns (jacobian, support_changed) restricted to the active
    coordinates of w; ``support_changed`` flags perturbations whose
    solution moved to a different active set, where the comparison with
    the analytic Jacobian is not meaningful.
    """
    w = problem.check_weights(w)
    if h is None:
        h = 1e-5 * (1.0 + problem.lam)
    if h <= 0:
        raise ValueError("h must be positive")
    options = options or SolverOptions()
    tight = dataclasses.replace(options, kkt_tol=min(1e-10, options.kkt_tol))
    act = active_set(problem, w)
    coords = np.concatenate([problem.partition.blocks[i] for i in act])

    def resolve(new_problem):
        res = solve(new_problem, tight, w0=w, rho0=rho)
        if not res.converged:
            raise CertificateError(
                f"finite-difference re-solve stalled at "
                f"{res.report.max_violation:.3e}"
            )
        return res.w, active_set(new_problem, res.w)

    if what == "lambda":
        w_hi, act_hi = resolve(problem.with_lambda(problem.lam + h))
        w_lo, act_lo = resolve(problem.with_lambda(problem.lam - h))
        changed = act_hi != act or act_lo != act
        return (w_hi - w_lo)[coords] / (2 * h), changed
    if what == "y":
        jac = np.zeros((coords.size, problem.n))
        changed = False
        for j in range(problem.n):
            bump = np.zeros(problem.n)
            bump[j] = h
            p_hi = CglProblem(
                problem.X, problem.y + bump, problem.partition,
                problem.constraints, problem.lam,
            )
            p_lo = CglProblem(
                problem.X, problem.y - bump, problem.partition,
                problem.constraints, problem.lam,
            )
            w_hi, act_hi = resolve(p_hi)
            w_lo, act_lo = resolve(p_lo)
            changed = changed or act_hi != act or act_lo != act
            jac[:, j] = (w_hi - w_lo)[coords] / (2 * h)
        return jac, changed
    raise ValueError(f"unknown perturbation target {what!r}")
