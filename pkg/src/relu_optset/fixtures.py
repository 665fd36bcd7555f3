"""Built-in synthetic instances used by the CLI and the acceptance suite.

The degenerate fixtures are small enough to solve by hand, which makes
them useful as oracles: the duplicated-column problem has a segment of
solutions, the interpolation fixture has a min-norm solution outside the
row space of its active design, and the width-one fixture has a closed
form regularization path with a genuine jump in the model fit.
"""

from dataclasses import dataclass

import numpy as np

from .core import BlockPartition, CglProblem
from .reformulation import enumerate_patterns

# breakpoint of the width-one closed-form path
WIDTH_ONE_BREAKPOINT = 99.0 / 9.99


def duplicate_columns_problem(lam=1.0):
    """Two identical columns as singleton blocks; solutions form a segment.

    At lam = 1 the optimal set is {(a, b) >= 0 : a + b = 1.5} with fit
    (1.5, 1.5); the min-norm point is (0.75, 0.75).
    """
    X = np.array([[1.0, 1.0], [1.0, 1.0]])
    y = np.array([2.0, 2.0])
    return CglProblem(X, y, BlockPartition.singletons(2), None, lam)


def min_norm_interp_problem(lam):
    """Width-2 block plus a singleton; the min-group-norm interpolant of
    this data is unique and has a null-space component."""
    X = np.array([[1.0, 2.0, 0.0], [1.0, 0.0, 2.0]])
    y = np.array([1.0, 1.0])
    partition = BlockPartition([np.array([0, 1]), np.array([2])])
    return CglProblem(X, y, partition, None, lam)


def min_norm_interp_null_direction():
    """Unit basis of Null(X) for the interpolation fixture."""
    z = np.array([-2.0, 1.0, 1.0])
    return z / np.linalg.norm(z)


def min_norm_interp_group_norm_search(num=2_000_001):
    """Brute-force the min group norm over interpolants w* + gamma * z.

    Scans gamma densely and polishes with a golden-section step; the
    optimum sits at gamma = -1/10 with group norm 4/5.
    """
    w_star = np.full(3, 1.0 / 3.0)
    z = np.array([-2.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0])

    def group_norm(gamma):
        w = w_star + gamma * z
        return np.hypot(w[0], w[1]) + abs(w[2])

    gammas = np.linspace(-0.9, 0.9, num)
    values = [group_norm(g) for g in gammas]
    k = int(np.argmin(values))
    lo, hi = gammas[max(0, k - 1)], gammas[min(num - 1, k + 1)]
    phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    for _ in range(200):
        c = b - phi * (b - a)
        d = a + phi * (b - a)
        if group_norm(c) <= group_norm(d):
            b = d
        else:
            a = c
    gamma = 0.5 * (a + b)
    return gamma, group_norm(gamma)


# ---------------------------------------------------------------------------
# width-one fixture


def one_neuron_data():
    """Two scalar samples, (-100, 1) and (1, 10)."""
    Z = np.array([[-100.0], [1.0]])
    y = np.array([1.0, 10.0])
    return Z, y


@dataclass(eq=False)
class WidthOnePath:
    lambdas: np.ndarray
    v: np.ndarray
    branch: list  # "neg" (active on sample 1) or "pos" (active on sample 2)
    objective: np.ndarray
    fits: list


def one_neuron_closed_form(lambda_grid):
    """Closed-form width-one path for the two-point fixture.

    Restricting the model to a single signed direction leaves two branches:
    v < 0 fits only the first sample, v > 0 only the second.  Their case
    values f_neg = y2^2 - lam * y1/x1 and f_pos = y1^2 + lam * y2/x2 cross
    at lam = 99/9.99, where the optimizer switches branch and the model
    fit jumps.  Above the breakpoint v = lam/10^4 - 0.01; below it the
    path reports v = 0.1 - lam/100.
    """
    Z, y = one_neuron_data()
    x1, x2 = Z[0, 0], Z[1, 0]
    y1, y2 = y
    lambdas = np.asarray(lambda_grid, dtype=float)
    vs = np.empty(lambdas.size)
    objs = np.empty(lambdas.size)
    fits = []
    branches = []
    for k, lam in enumerate(lambdas):
        f_neg = y2 ** 2 - lam * y1 / x1
        f_pos = y1 ** 2 + lam * y2 / x2
        if f_neg <= f_pos:
            branch = "neg"
            v = lam / x1 ** 2 + y1 / x1  # lam/10^4 - 0.01
            fit = np.array([x1 * v, 0.0])
            obj = f_neg
        else:
            branch = "pos"
            v = 0.1 - lam / 100.0
            fit = np.array([0.0, v])
            obj = f_pos
        vs[k] = v
        objs[k] = obj
        fits.append(fit)
        branches.append(branch)
    return WidthOnePath(lambdas=lambdas, v=vs, branch=branches,
                        objective=objs, fits=fits)


# ---------------------------------------------------------------------------
# seeded generators


def gaussian_data(seed, n, d, noise=0.1):
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n, d))
    teacher = rng.standard_normal(d)
    y = np.maximum(Z @ teacher, 0.0) - 0.3 * np.maximum(-(Z @ teacher), 0.0)
    y = y + noise * rng.standard_normal(n)
    return Z, y


def gaussian_instance(seed, n=8, d=2, p=4, arch="gated", lam_scale=0.3,
                      noise=0.1):
    """Seeded pattern-built CGL instance with lambda set relative to the
    shutdown threshold of the assembled design."""
    from .reformulation import build_cgl

    Z, y = gaussian_data(seed, n, d, noise)
    patterns = enumerate_patterns(Z, mode="sampled", count=8 * p, seed=seed + 1)
    if len(patterns) > p:
        import dataclasses as _dc

        patterns = _dc.replace(
            patterns,
            masks=patterns.masks[:p],
            witnesses=patterns.witnesses[:p],
        )
    probe = build_cgl(Z, y, patterns, 1.0, arch)
    lam_max = max(
        np.linalg.norm(probe.X_block(i).T @ y) for i in range(probe.m)
    )
    lam = lam_scale * lam_max
    return Z, y, patterns, build_cgl(Z, y, patterns, lam, arch)


def rank_deficient_problem(seed, n=10, blocks=6, span_dim=2, lam=0.5):
    """Unconstrained instance whose block designs live in a fixed span.

    Every fit X_i w_i then lies in a ``span_dim``-dimensional subspace, so
    solutions with more than ``span_dim`` active blocks are always prunable
    and every minimal solution has exactly dim span{X_i w_i} active blocks.
    """
    rng = np.random.default_rng(seed)
    basis = np.linalg.qr(rng.standard_normal((n, span_dim)))[0]
    widths = rng.integers(1, 3, size=blocks)
    cols = []
    for width in widths:
        cols.append(basis @ rng.standard_normal((span_dim, width)))
    X = np.hstack(cols)
    y = basis @ rng.standard_normal(span_dim) * 3.0
    partition = BlockPartition.from_sizes(widths.tolist())
    return CglProblem(X, y, partition, None, lam)


def split_indices(n, fractions, seed):
    """Deterministic disjoint covering splits of range(n)."""
    fractions = [float(f) for f in fractions]
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to one")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    out = []
    start = 0
    for f in fractions[:-1]:
        stop = start + int(round(f * n))
        out.append(np.sort(order[start:stop]))
        start = stop
    out.append(np.sort(order[start:]))
    return out
