"""Exact and approximate pruning of group-lasso solutions and ReLU networks.

Exact pruning walks a verified solution to a vertex of the optimal set:
while the active fits {X_i w_i} are linearly dependent, slide along a
dependence direction until some block hits zero.  Every intermediate point
is optimal, so the objective and penalty are preserved to round-off.

Approximate network pruning keeps the same update algebra but fits the
dependence coefficients by least squares once the neuron outputs become
independent, accepting the smallest possible damage to the train fit.
"""

from dataclasses import dataclass, field

import numpy as np

from .core import CertificateError, active_set, kkt_report, objective
from .optimal_set import rank_threshold, recover_dual
from .reformulation import ReluNetwork, predict


@dataclass(eq=False)
class PruneStep:
    removed: tuple
    t: float
    beta_norm: float
    objective_before: float
    objective_after: float
    support_before: int
    support_after: int


@dataclass(eq=False)
class PruneTrace:
    steps: list = field(default_factory=list)
    initial_support: int = 0
    final_support: int = 0

    def to_dict(self):
        return {
            "schema_version": 1,
            "initial_support": self.initial_support,
            "final_support": self.final_support,
            "steps": [
                {
                    "removed": list(s.removed),
                    "t": s.t,
                    "beta_norm": s.beta_norm,
                    "objective_before": s.objective_before,
                    "objective_after": s.objective_after,
                    "support_before": s.support_before,
                    "support_after": s.support_after,
                }
                for s in self.steps
            ],
        }


@dataclass(eq=False)
class MinimalityCheck:
    minimal: bool
    sigma_min: float
    threshold: float

    def __bool__(self):
        return self.minimal


def _active_fit_matrix(problem, w, active):
    cols = [problem.X_block(i) @ problem.partition.block(w, i) for i in active]
    if not cols:
        return np.zeros((problem.n, 0))
    return np.column_stack(cols)


def is_minimal(problem, w):
    """Linear independence of the active fits, with the SVD margin.

    A minimal solution is the unique optimal point on its support, so this
    doubles as a per-support uniqueness check.
    """
    w = problem.check_weights(w)
    act = active_set(problem, w)
    Q = _active_fit_matrix(problem, w, act)
    if Q.shape[1] == 0:
        return MinimalityCheck(minimal=True, sigma_min=np.inf, threshold=0.0)
    s = np.linalg.svd(Q, compute_uv=False)
    cutoff = rank_threshold(s, Q.shape)
    return MinimalityCheck(
        minimal=bool(s[-1] > cutoff), sigma_min=float(s[-1]), threshold=cutoff
    )


def _dependence_direction(Q, limit):
    """Null coefficients over at most ``limit`` columns of Q.

    Any n+1 vectors in R^n are dependent, so restricting the search to the
    first n+1 active fits keeps each step O(n^3) without losing exactness.
    Returns (indices, beta) or None when the columns are independent.
    """
    k = Q.shape[1]
    subset = list(range(min(k, limit)))
    sub = Q[:, subset]
    vt = np.linalg.svd(sub)[2]
    s = np.linalg.svd(sub, compute_uv=False)
    if len(subset) > len(s) or s[-1] <= rank_threshold(s, sub.shape):
        return subset, vt[-1]
    return None


def optimal_prune(problem, w, rho=None, tol=1e-6):
    """Prune a verified solution to a minimal one, preserving optimality.

    Refuses inputs that cannot be certified optimal, because the key
    invariant (every slide stays inside the optimal set) only holds there.
    Ties in the dependence coefficients break toward the lowest block
    index.
    """
    w = problem.check_weights(w).copy()
    if rho is None:
        rho = recover_dual(problem, w, tol)
    report = kkt_report(problem, w, rho, tol)
    if not report.satisfied:
        raise CertificateError(
            f"refusing to prune: KKT violation {report.max_violation:.3e}"
        )
    trace = PruneTrace()
    act = list(active_set(problem, w))
    trace.initial_support = len(act)
    limit = problem.n + 1
    while True:
        Q = _active_fit_matrix(problem, w, act)
        found = _dependence_direction(Q, limit)
        if found is None:
            break
        subset, beta = found
        # normalize so the dominant coefficient is +1 at the victim; ties
        # remove the highest tied index, keeping mass on low-index blocks
        beta_full = np.zeros(len(act))
        beta_full[subset] = beta
        mags = np.abs(beta_full)
        top = float(np.max(mags))
        if top == 0.0:
            break
        victims = [k for k in range(len(act)) if mags[k] >= top * (1 - 1e-12)]
        victim = victims[-1]
        if beta_full[victim] < 0:
            beta_full = -beta_full
        t = 1.0 / beta_full[victim]
        obj_before = objective(problem, w)
        factors = 1.0 - t * beta_full
        removed = []
        for k, i in enumerate(act):
            block = problem.partition.blocks[i]
            w[block] = w[block] * max(factors[k], 0.0)
            if factors[k] <= 1e-12:
                removed.append(i)
        new_act = [i for i in act if i not in removed]
        trace.steps.append(
            PruneStep(
                removed=tuple(removed),
                t=float(t),
                beta_norm=float(np.linalg.norm(beta_full)),
                objective_before=obj_before,
                objective_after=objective(problem, w),
                support_before=len(act),
                support_after=len(new_act),
            )
        )
        if not removed:
            break
        act = new_act
    trace.final_support = len(act)
    return w, trace


# ---------------------------------------------------------------------------
# network pruning


def _neuron_outputs(Z, net):
    """Per-neuron contribution vectors q_i = (Z W1_i)_+ w2_i."""
    pre = Z @ net.W1.T
    if net.bias1 is not None:
        pre = pre + net.bias1
    if net.gates is not None:
        acts = ((Z @ net.gates.T) >= 0) * pre
    else:
        acts = np.maximum(pre, 0.0)
    return acts * net.w2


def score_neurons(Z, y, net, method, seed=None):
    """Pruning scores; the neuron with the smallest score is the victim."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if net.width == 0:
        raise ValueError("cannot score an empty network")
    if method == "magnitude":
        return np.linalg.norm(net.W1, axis=1) * np.abs(net.w2)
    if method == "gradient":
        q = _neuron_outputs(Z, net)
        r = q.sum(axis=1) - y
        mask = (Z @ net.W1.T) >= 0 if net.gates is None else (Z @ net.gates.T) >= 0
        scores = np.empty(net.width)
        for i in range(net.width):
            g1 = net.w2[i] * (Z.T @ (mask[:, i] * r))
            g2 = float(np.maximum(Z @ net.W1[i], 0.0) @ r) if net.gates is None \
                else float((mask[:, i] * (Z @ net.W1[i])) @ r)
            scores[i] = np.linalg.norm(net.W1[i] * g1 * net.w2[i] * g2)
        return scores
    if method == "random":
        rng = np.random.default_rng(seed)
        return rng.random(net.width)
    if method == "ls_residual":
        q = _neuron_outputs(Z, net)
        act = [i for i in range(net.width) if np.linalg.norm(q[:, i]) > 0]
        scores = np.full(net.width, np.inf)
        for i in act:
            others = [j for j in act if j != i]
            if others:
                beta, *_ = np.linalg.lstsq(q[:, others], q[:, i], rcond=None)
                scores[i] = np.linalg.norm(q[:, others] @ beta - q[:, i])
            else:
                scores[i] = np.linalg.norm(q[:, i])
        return scores
    raise ValueError(f"unknown scoring method {method!r}")


@dataclass(eq=False)
class PruneRound:
    round: int
    width: int
    train_mse: float
    test_mse: float
    exact: bool


def approximate_prune_relu(Z, y, net, target_width, score="ls_residual",
                           seed=None, Z_test=None, y_test=None):
    """Iterative neuron removal with least-squares weight correction.

    Each round scores a victim, fits its output on the remaining neuron
    outputs, and slides along the implied dependence direction until one
    neuron (the largest coefficient, possibly not the victim) reaches zero;
    both layers are rescaled by the square root of the slide factors.  When
    the outputs are linearly dependent the fit is exact and the train
    predictions do not move.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    W1 = net.W1.copy()
    w2 = net.w2.copy()
    gates = None if net.gates is None else net.gates.copy()
    bias1 = None if net.bias1 is None else net.bias1.copy()
    rng_seed = seed
    curve = []
    round_idx = 0
    n = Z.shape[0]

    def current():
        return ReluNetwork(W1=W1, w2=w2, gates=gates, bias1=bias1,
                           bias2=net.bias2)

    def mse(network, Zs, ys):
        r = predict(network, Zs) - ys
        return float(r @ r) / len(ys)

    def record(exact):
        nonlocal round_idx
        cur = current()
        active = cur.active_neurons(tol=0.0)
        test = (
            mse(cur, np.atleast_2d(Z_test), np.asarray(y_test, dtype=float))
            if Z_test is not None
            else float("nan")
        )
        curve.append(
            PruneRound(
                round=round_idx,
                width=len(active),
                train_mse=mse(cur, Z, y),
                test_mse=test,
                exact=exact,
            )
        )
        round_idx += 1

    record(exact=True)
    while True:
        cur = current()
        active = list(cur.active_neurons(tol=0.0))
        if len(active) <= target_width:
            break
        q = _neuron_outputs(Z, cur)
        scores = score_neurons(Z, y, cur, score, seed=rng_seed)
        if rng_seed is not None:
            rng_seed += 1
        victim = min(active, key=lambda i: (scores[i], i))
        others = [i for i in active if i != victim]
        if others:
            beta, *_ = np.linalg.lstsq(q[:, others], q[:, victim], rcond=None)
            resid = float(np.linalg.norm(q[:, others] @ beta - q[:, victim]))
        else:
            beta = np.zeros(0)
            resid = float(np.linalg.norm(q[:, victim]))
        exact_step = resid <= rank_threshold(
            np.linalg.svd(q[:, active], compute_uv=False), (n, len(active))
        ) * 10.0 + 1e-12
        # dependence direction with coefficient -1 on the victim
        gamma = np.zeros(len(active))
        gamma[active.index(victim)] = -1.0
        for pos, j in enumerate(others):
            gamma[active.index(j)] = beta[pos]
        mags = np.abs(gamma)
        top = float(np.max(mags))
        kill = [k for k in range(len(active)) if mags[k] >= top * (1 - 1e-12)]
        kill_idx = kill[0]
        if gamma[kill_idx] < 0:
            gamma = -gamma
        t = 1.0 / gamma[kill_idx]
        factors = np.clip(1.0 - t * gamma, 0.0, None)
        for k, i in enumerate(active):
            c = np.sqrt(factors[k])
            W1[i] = W1[i] * c
            w2[i] = w2[i] * c
        record(exact=exact_step)
    return current(), curve
