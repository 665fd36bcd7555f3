"""From one verified solution to a description of all of them.

Fix lambda > 0 and a verified primal/dual pair (w, rho).  With v_i = c_i -
K_i rho_i and the (unique) optimal fit y_hat, every solution has the form
w_i = alpha_i v_i with alpha_i >= 0 on the supported blocks and zero
elsewhere, subject to sum_i alpha_i X_i v_i = y_hat.  That polytope of
alpha vectors is what this module constructs, samples, optimizes over, and
certifies uniqueness from.
"""

import math
from dataclasses import dataclass, field
from itertools import combinations, product

import numpy as np
from scipy.optimize import linprog, minimize, nnls

from .core import (
    CapabilityError,
    CertificateError,
    DualCertificate,
    active_set,
    kkt_report,
    objective,
    penalty_sum,
)
from ._qp import ball_lstsq, nonneg_eq_lsq
from .reformulation import build_cgl
from .solver import SolverOptions, solve

SUPPORT_LP_THRESHOLD = 1e-8


def rank_threshold(singular_values, shape):
    """Numerical-rank cutoff max(rows, cols) * sigma_max * 1e-12."""
    if len(singular_values) == 0:
        return 0.0
    return max(shape) * float(singular_values[0]) * 1e-12


# ---------------------------------------------------------------------------
# dual recovery


def recover_dual(problem, w, tol=1e-6):
    """Recover nonnegative multipliers certifying optimality of w.

    Active constrained blocks solve the linear feasibility problem
    K_i rho_i = c_i - lambda w_i/||w_i|| by nonnegative least squares;
    inactive blocks take any nonnegative regression minimizer of
    ||K_i rho_i - c_i||.  Raises CertificateError when no certificate
    reaches the KKT tolerance, which signals that w is not optimal.
    """
    w = problem.check_weights(w)
    lam = problem.lam
    r = problem.y - problem.X @ w
    rho_blocks = []
    act = set(active_set(problem, w))
    for i in range(problem.m):
        K = problem.constraints[i]
        if K is None:
            rho_blocks.append(np.zeros(0))
            continue
        c = problem.X_block(i).T @ r
        wb = problem.partition.block(w, i)
        if i in act:
            target = c - lam * wb / np.linalg.norm(wb)
            rho_b, resid = nnls(K, target)
            if resid > tol * (1.0 + np.linalg.norm(target)):
                raise CertificateError(
                    f"no nonnegative multipliers reproduce the stationarity "
                    f"target on block {i} (residual {resid:.3e})"
                )
        else:
            rho_b, _ = nnls(K, c)
            if np.linalg.norm(c - K @ rho_b) > lam + tol:
                raise CertificateError(
                    f"block {i}: nonnegative regression leaves correlation "
                    f"above lambda; weights are not optimal"
                )
        rho_blocks.append(rho_b)
    rho = DualCertificate(rho_blocks)
    report = kkt_report(problem, w, rho, tol)
    if not report.satisfied:
        raise CertificateError(
            f"recovered certificate fails KKT at {report.max_violation:.3e}"
        )
    return rho


# ---------------------------------------------------------------------------
# optimal-set description


@dataclass(eq=False)
class OptimalSetDescription:
    """Polyhedral parameterization {alpha >= 0 : G alpha = y_hat} of the
    optimal set, with per-block direction vectors v_i on the support."""

    problem: object
    rho: DualCertificate
    y_hat: np.ndarray
    equicorrelation: tuple
    support: tuple
    v_vectors: dict
    generators: np.ndarray  # columns X_i v_i for i in support
    alpha0: np.ndarray  # base solution in alpha coordinates
    support_certified: bool
    tol: float
    probe_alphas: dict = field(default_factory=dict)

    def weights_from_alpha(self, alpha):
        pieces = []
        alpha = np.asarray(alpha, dtype=float).ravel()
        lookup = dict(zip(self.support, alpha))
        for i in range(self.problem.m):
            width = self.problem.partition.blocks[i].size
            if i in lookup:
                pieces.append(lookup[i] * self.v_vectors[i])
            else:
                pieces.append(np.zeros(width))
        return self.problem.partition.join(pieces)

    def alpha_from_weights(self, w):
        w = self.problem.check_weights(w)
        lam = self.problem.lam
        alpha = np.empty(len(self.support))
        for k, i in enumerate(self.support):
            wb = self.problem.partition.block(w, i)
            v = self.v_vectors[i]
            alpha[k] = float(v @ wb) / (lam * lam)
        return alpha

    @property
    def base_weights(self):
        return self.weights_from_alpha(self.alpha0)


@dataclass(eq=False)
class Membership:
    contained: bool
    note: str | None = None

    def __bool__(self):
        return self.contained


@dataclass(eq=False)
class UniquenessCertificate:
    verdict: str  # "unique" | "non_unique" | "unknown"
    margin: float | None = None
    threshold: float | None = None
    witness: np.ndarray | None = None


def _eligible_blocks(problem, report, rho, tol):
    """Equicorrelated blocks whose direction v_i can carry positive weight
    without breaking feasibility or complementary slackness."""
    eligible = []
    for i in report.equicorrelation:
        K = problem.constraints[i]
        v = report.v_vectors[i]
        if K is not None:
            g = K.T @ v
            scale = 1.0 + np.linalg.norm(v)
            if g.size and np.max(g) > tol * scale:
                continue
            if abs(float(rho.block(i) @ g)) > tol * scale:
                continue
        eligible.append(i)
    return eligible


def _probe_lp(generators, y_hat, col, sense=-1.0, bound=None):
    """max (sense=-1) or min alpha[col] over {alpha >= 0, G alpha = y_hat}."""
    k = generators.shape[1]
    c = np.zeros(k)
    c[col] = sense
    bounds = [(0.0, bound)] * k
    res = linprog(c, A_eq=generators, b_eq=y_hat, bounds=bounds, method="highs")
    if not res.success:
        return None
    return res.x


def describe_set(problem, w, rho, tol=1e-6):
    """Construct the optimal-set description from a verified pair.

    The support starts from the active set of w and grows by one LP probe
    per equicorrelated candidate block (maximize its alpha over the
    polytope).  For unconstrained problems the probe is exact; for
    constrained problems candidates that never activate leave the support
    flagged as a certified subset only.
    """
    w = problem.check_weights(w)
    if problem.lam <= 0:
        raise ValueError("optimal-set description requires lambda > 0")
    report = kkt_report(problem, w, rho, tol)
    if not report.satisfied:
        raise CertificateError(
            f"cannot describe the optimal set: KKT violation "
            f"{report.max_violation:.3e} exceeds {tol:.1e}"
        )
    lam = problem.lam
    act = list(report.active)
    eligible = _eligible_blocks(problem, report, rho, tol)
    candidates = sorted(set(act) | set(eligible))
    v_vectors = {i: np.asarray(report.v_vectors[i], dtype=float) for i in candidates}
    gen_cols = [problem.X_block(i) @ v_vectors[i] for i in candidates]
    G_full = (
        np.column_stack(gen_cols) if gen_cols else np.zeros((problem.n, 0))
    )
    # alpha representation of w over the candidate blocks; y_hat is rebuilt
    # from it so the polytope is exactly feasible at alpha0
    alpha_full = np.zeros(len(candidates))
    for k, i in enumerate(candidates):
        wb = problem.partition.block(w, i)
        if i in act:
            alpha_full[k] = max(0.0, float(v_vectors[i] @ wb) / (lam * lam))
    y_hat = G_full @ alpha_full

    support = set(act)
    probe_alphas = {}
    undetermined = []
    bound = 10.0 * (penalty_sum(problem, w) / lam + 1.0)
    for k, i in enumerate(candidates):
        if i in support:
            continue
        sol = _probe_lp(G_full, y_hat, k, bound=bound)
        if sol is not None and sol[k] > SUPPORT_LP_THRESHOLD:
            support.add(i)
            probe_alphas[i] = sol
        else:
            undetermined.append(i)
    support = tuple(sorted(support))
    keep = [k for k, i in enumerate(candidates) if i in support]
    generators = G_full[:, keep]
    alpha0 = alpha_full[keep]
    # probes were taken over all candidates; restrict them to the support
    probe_alphas = {i: sol[keep] for i, sol in probe_alphas.items()}
    support_certified = (not problem.constrained) or not undetermined
    return OptimalSetDescription(
        problem=problem,
        rho=rho,
        y_hat=y_hat,
        equicorrelation=tuple(report.equicorrelation),
        support=support,
        v_vectors={i: v_vectors[i] for i in support},
        generators=generators,
        alpha0=alpha0,
        support_certified=support_certified,
        tol=tol,
        probe_alphas=probe_alphas,
    )


def membership(desc, w, tol=1e-6):
    """Check w against the parameterization; explains failures."""
    problem = desc.problem
    w = problem.check_weights(w)
    lam = problem.lam
    scale = 1.0 + np.linalg.norm(w)
    off_support_fail = False
    for i in range(problem.m):
        if i in desc.support:
            continue
        wb = problem.partition.block(w, i)
        if np.linalg.norm(wb) > tol * scale:
            off_support_fail = True
            break
    alpha = desc.alpha_from_weights(w)
    direction_ok = True
    for k, i in enumerate(desc.support):
        wb = problem.partition.block(w, i)
        resid = np.linalg.norm(wb - alpha[k] * desc.v_vectors[i])
        if resid > tol * scale:
            direction_ok = False
            break
    nonneg_ok = bool(np.all(alpha >= -tol))
    fit_ok = (
        np.linalg.norm(problem.X @ w - desc.y_hat)
        <= tol * (1.0 + np.linalg.norm(desc.y_hat))
    )
    ok = (not off_support_fail) and direction_ok and nonneg_ok and fit_ok
    note = None
    if not ok and off_support_fail and direction_ok and nonneg_ok and fit_ok:
        if not desc.support_certified:
            note = "indeterminate-support"
    return Membership(contained=ok, note=note)


def contains(desc, w, tol=1e-6):
    """True iff w lies in the described optimal set (within tolerance)."""
    return membership(desc, w, tol).contained


def _null_basis(G, rtol=1e-12):
    if G.size == 0:
        return np.zeros((G.shape[1], 0))
    u, s, vt = np.linalg.svd(G, full_matrices=True)
    cutoff = rank_threshold(s, G.shape)
    rank = int(np.sum(s > cutoff))
    return vt[rank:].T


def sample_solutions(desc, count, seed, burn_in=50, thin=5):
    """Hit-and-run samples from the alpha polytope, mapped back to weights.

    Walks inside {alpha >= 0 : G alpha = y_hat} starting from the base
    point; a trivial null space collapses every sample to the base
    solution.
    """
    rng = np.random.default_rng(seed)
    N = _null_basis(desc.generators)
    alpha = desc.alpha0.copy()
    if N.shape[1] == 0:
        return [desc.weights_from_alpha(alpha) for _ in range(count)]
    # start strictly inside when probes found room to move
    if desc.probe_alphas:
        stack = [alpha] + list(desc.probe_alphas.values())
        alpha = np.mean(stack, axis=0)
    samples = []
    total = burn_in + count * thin
    for step in range(total):
        direction = N @ rng.standard_normal(N.shape[1])
        norm = np.linalg.norm(direction)
        if norm == 0.0:
            continue
        direction /= norm
        t_lo, t_hi = -np.inf, np.inf
        for a_i, d_i in zip(alpha, direction):
            if d_i > 1e-14:
                t_lo = max(t_lo, -a_i / d_i)
            elif d_i < -1e-14:
                t_hi = min(t_hi, -a_i / d_i)
        if not np.isfinite(t_lo) or not np.isfinite(t_hi) or t_hi <= t_lo:
            continue
        alpha = alpha + rng.uniform(t_lo, t_hi) * direction
        alpha = np.maximum(alpha, 0.0)
        if step >= burn_in and (step - burn_in) % thin == thin - 1:
            samples.append(desc.weights_from_alpha(alpha))
    while len(samples) < count:
        samples.append(desc.weights_from_alpha(alpha))
    return samples[:count]


# ---------------------------------------------------------------------------
# uniqueness


def is_unique(problem, w, rho=None, tol=1e-6):
    """Certify whether the CGL solution is unique.

    Unique iff the generator columns {X_i v_i} over the support are
    linearly independent; a dependence is converted into a second, distinct
    verified solution via one pruning-style move inside the polytope.
    """
    w = problem.check_weights(w)
    if rho is None:
        rho = recover_dual(problem, w, tol)
    desc = describe_set(problem, w, rho, tol)
    G = desc.generators
    if G.shape[1] == 0:
        return UniquenessCertificate(verdict="unique", margin=np.inf, threshold=0.0)
    s = np.linalg.svd(G, compute_uv=False)
    cutoff = rank_threshold(s, G.shape)
    sigma_min = float(s[-1])
    if sigma_min > cutoff:
        return UniquenessCertificate(
            verdict="unique", margin=sigma_min, threshold=cutoff
        )
    witness = _dependence_witness(desc)
    if witness is None:
        return UniquenessCertificate(
            verdict="unknown", margin=sigma_min, threshold=cutoff
        )
    return UniquenessCertificate(
        verdict="non_unique", margin=sigma_min, threshold=cutoff, witness=witness
    )


def _dependence_witness(desc):
    """A second solution obtained by sliding along a generator dependence."""
    G = desc.generators
    # start from a point with full support so every direction has room
    stack = [desc.alpha0] + list(desc.probe_alphas.values())
    alpha_bar = np.mean(stack, axis=0)
    q_cols = G * alpha_bar  # columns X_i w_i at alpha_bar
    u, s, vt = np.linalg.svd(q_cols)
    cutoff = rank_threshold(s, q_cols.shape)
    if s[-1] > cutoff:
        return None
    beta = vt[-1]
    candidates = []
    for direction in (beta, -beta):
        pos = direction > 1e-14
        if not np.any(pos):
            continue
        t = 1.0 / np.max(direction[pos])
        alpha_new = alpha_bar * (1.0 - t * direction)
        candidates.append(np.maximum(alpha_new, 0.0))
    if not candidates:
        return None
    w0 = desc.weights_from_alpha(desc.alpha0)

    def preference(a):
        dist = np.linalg.norm(desc.weights_from_alpha(a) - w0)
        low_mass = float(np.sum(a * np.arange(len(a), 0, -1)))
        return (round(dist, 9), low_mass)

    best = max(candidates, key=preference)
    w_new = desc.weights_from_alpha(best)
    if np.linalg.norm(w_new - w0) < 1e-9:
        return None
    return w_new


# ---------------------------------------------------------------------------
# group general position


@dataclass(eq=False)
class GgpVerdict:
    holds: bool  # no violation found
    note: str
    violation: tuple | None = None

    def __bool__(self):
        return self.holds


def _affine_distance(X_pivot, points):
    """min ||X_pivot v - q|| over ||v|| <= 1, q in affine hull of points."""
    base = points[0]
    offsets = (
        np.column_stack([p - base for p in points[1:]])
        if len(points) > 1
        else np.zeros((base.size, 0))
    )
    if offsets.shape[1]:
        Q, _ = np.linalg.qr(offsets)
        proj = np.eye(base.size) - Q @ Q.T
    else:
        proj = np.eye(base.size)
    M = proj @ X_pivot
    t = proj @ base
    v = ball_lstsq(M, t, radius=1.0)
    return float(np.linalg.norm(M @ v - t)), v


def _sphere_grid(dim, resolution):
    """Deterministic grid on the unit sphere in R^dim."""
    if dim == 1:
        return [np.array([1.0]), np.array([-1.0])]
    if dim == 2:
        return [
            np.array([math.cos(t), math.sin(t)])
            for t in np.linspace(0.0, 2 * math.pi, resolution, endpoint=False)
        ]
    pts = []
    for theta in np.linspace(0.0, math.pi, max(3, resolution // 2)):
        for phi in np.linspace(0.0, 2 * math.pi, resolution, endpoint=False):
            pts.append(
                np.array(
                    [
                        math.sin(theta) * math.cos(phi),
                        math.sin(theta) * math.sin(phi),
                        math.cos(theta),
                    ]
                )
            )
    # dedupe the poles
    uniq = []
    for p in pts:
        if not any(np.allclose(p, q) for q in uniq[:1] + uniq[-1:]):
            uniq.append(p)
    return uniq


def _refine_assignment(X_blocks, pivot_matrix, z_list, violation_tol):
    """Polish non-pivot unit vectors with a local angular search."""
    dims = [X.shape[1] for X in X_blocks]

    def unpack(theta):
        out = []
        pos = 0
        for dim in dims:
            if dim == 1:
                out.append(np.array([1.0 if theta[pos] >= 0 else -1.0]))
                pos += 1
            elif dim == 2:
                out.append(np.array([math.cos(theta[pos]), math.sin(theta[pos])]))
                pos += 1
            else:
                t, p = theta[pos], theta[pos + 1]
                out.append(
                    np.array(
                        [
                            math.sin(t) * math.cos(p),
                            math.sin(t) * math.sin(p),
                            math.cos(t),
                        ]
                    )
                )
                pos += 2
        return out

    def pack(zs):
        theta = []
        for z, dim in zip(zs, dims):
            if dim == 1:
                theta.append(1.0 if z[0] >= 0 else -1.0)
            elif dim == 2:
                theta.append(math.atan2(z[1], z[0]))
            else:
                theta.extend([math.acos(np.clip(z[2], -1, 1)),
                              math.atan2(z[1], z[0])])
        return np.array(theta)

    def cost(theta):
        zs = unpack(theta)
        points = [X @ z for X, z in zip(X_blocks, zs)]
        dist, _ = _affine_distance(pivot_matrix, points)
        return dist

    res = minimize(cost, pack(z_list), method="Nelder-Mead",
                   options={"maxiter": 200, "xatol": 1e-10, "fatol": 1e-14})
    return float(res.fun), unpack(res.x)


def ggp_check(X, partition, mode="exact_small", resolution=24, n_probes=2000,
              seed=0, budget=1_000_000):
    """Search for violations of group general position.

    A violation is a subset of blocks, a pivot, and unit vectors z_i with
    the pivot's unit-ball image meeting the affine hull of the other
    blocks' points X_i z_i.  ``exact_small`` scans a deterministic sphere
    grid per non-pivot block (guarded to <= 8 blocks of width <= 3) and
    polishes promising assignments; a clean scan is reported as "no
    violation found", never as a proof.  ``sampled`` uses random probes.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    m = len(partition)
    blocks = [X[:, b] for b in partition.blocks]
    widths = [B.shape[1] for B in blocks]
    scale = max(1.0, float(np.max(np.abs(X))))
    violation_tol = 1e-7 * scale

    if mode == "exact_small":
        if m > 8 or max(widths) > 3:
            raise CapabilityError(
                "exact_small mode is guarded to at most 8 blocks of width "
                f"at most 3, got {m} blocks with widths {widths}"
            )
        grids = [_sphere_grid(wd, resolution) for wd in widths]
        work = 0
        max_size = min(m, n + 1)
        for size in range(2, max_size + 1):
            for subset in combinations(range(m), size):
                for pivot in subset:
                    others = [i for i in subset if i != pivot]
                    assignments = product(*(grids[i] for i in others))
                    for zs in assignments:
                        work += 1
                        if work > budget:
                            raise CapabilityError(
                                "ggp_check exceeded its evaluation budget"
                            )
                        points = [blocks[i] @ z for i, z in zip(others, zs)]
                        dist, v = _affine_distance(blocks[pivot], points)
                        if dist <= violation_tol:
                            return GgpVerdict(
                                holds=False,
                                note=f"violation at grid resolution {resolution}",
                                violation=(subset, pivot, dist),
                            )
                        if dist <= 1e-2 * scale:
                            dist2, _ = _refine_assignment(
                                [blocks[i] for i in others], blocks[pivot],
                                list(zs), violation_tol,
                            )
                            if dist2 <= violation_tol:
                                return GgpVerdict(
                                    holds=False,
                                    note="violation found after local refinement",
                                    violation=(subset, pivot, dist2),
                                )
        return GgpVerdict(
            holds=True,
            note=(
                f"no violation found (grid resolution {resolution}, "
                f"{work} assignments); not a proof"
            ),
        )
    if mode == "sampled":
        rng = np.random.default_rng(seed)
        max_size = min(m, n + 1)
        for _ in range(n_probes):
            size = rng.integers(2, max_size + 1)
            subset = sorted(rng.choice(m, size=size, replace=False).tolist())
            pivot = subset[rng.integers(0, size)]
            others = [i for i in subset if i != pivot]
            zs = []
            for i in others:
                z = rng.standard_normal(widths[i])
                zs.append(z / np.linalg.norm(z))
            points = [blocks[i] @ z for i, z in zip(others, zs)]
            dist, _ = _affine_distance(blocks[pivot], points)
            if dist <= violation_tol:
                return GgpVerdict(
                    holds=False,
                    note="violation found by random probe",
                    violation=(tuple(subset), pivot, dist),
                )
        return GgpVerdict(
            holds=True, note=f"no violation found ({n_probes} random probes)"
        )
    raise ValueError(f"unknown mode {mode!r}")


def lasso_general_position(A, budget=1_000_000):
    """Exact general-position verdict for the columns of A.

    Checks every subset of s <= min(n, p-1) + 1 signed columns and every
    pivot for membership of the pivot in the affine hull of the others,
    via equality-constrained least squares.  Raises CapabilityError when
    the enumeration would exceed ``budget`` membership tests.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n, p = A.shape
    max_size = min(n + 1, p)
    total = 0
    for size in range(2, max_size + 1):
        total += math.comb(p, size) * (2 ** size) * size
    if total > budget:
        raise CapabilityError(
            f"general-position enumeration needs {total} tests, budget is {budget}"
        )
    scale = max(1.0, float(np.max(np.abs(A))))
    tol = 1e-9 * scale
    for size in range(2, max_size + 1):
        for subset in combinations(range(p), size):
            cols = A[:, subset]
            for signs in product((1.0, -1.0), repeat=size):
                S = cols * np.asarray(signs)
                for j in range(size):
                    target = S[:, j]
                    others = np.delete(S, j, axis=1)
                    # membership of target in affine hull of others:
                    # solve min ||others @ beta - target|| s.t. sum beta = 1
                    k = others.shape[1]
                    M = np.vstack([others, np.ones((1, k)) * scale])
                    t = np.concatenate([target, [scale]])
                    beta, *_ = np.linalg.lstsq(M, t, rcond=None)
                    if np.linalg.norm(M @ beta - t) <= tol:
                        return False
    return True


# ---------------------------------------------------------------------------
# selections within the optimal set


def min_norm(desc):
    """Euclidean-min-norm solution: min ||alpha||^2 over the polytope."""
    k = desc.generators.shape[1]
    if k == 0:
        return desc.weights_from_alpha(desc.alpha0)
    M = np.sqrt(2.0) * np.eye(k)
    alpha, _ = nonneg_eq_lsq(M, np.zeros(k), desc.generators, desc.y_hat,
                             a0=desc.alpha0)
    w = desc.weights_from_alpha(alpha)
    if not contains(desc, w, tol=max(desc.tol, 1e-6)):
        raise CertificateError("min-norm candidate failed the membership check")
    return w


def max_norm_approx(desc):
    """Vertex approximately maximizing the norm: an LP maximizing sum(alpha).

    Ties between vertices break toward lower block indices via an
    infinitesimal lexicographic preference in the objective.
    """
    G = desc.generators
    k = G.shape[1]
    if k == 0:
        return desc.weights_from_alpha(desc.alpha0)
    pref = np.arange(k, 0, -1, dtype=float) / max(k, 1)
    c = -(1.0 + 1e-9 * pref)
    bound = 10.0 * (float(np.sum(desc.alpha0)) + 1.0)
    res = linprog(c, A_eq=G, b_eq=desc.y_hat, bounds=[(0.0, bound)] * k,
                  method="highs")
    if not res.success:
        raise CertificateError(f"norm-maximization LP failed: {res.message}")
    w = desc.weights_from_alpha(res.x)
    if not contains(desc, w, tol=max(desc.tol, 1e-6)):
        raise CertificateError("max-norm candidate failed the membership check")
    return w


def tune_over_set(desc, X_val, y_val):
    """Minimize validation squared error over the optimal set.

    The training objective is untouched by construction; the output is
    polished against the min-norm point so the tuned loss never exceeds it.
    """
    problem = desc.problem
    X_val = np.atleast_2d(np.asarray(X_val, dtype=float))
    y_val = np.asarray(y_val, dtype=float).ravel()
    if X_val.shape[1] != problem.d:
        raise ValueError("validation design has the wrong number of columns")
    if X_val.shape[0] != y_val.size:
        raise ValueError("validation design and targets disagree")
    k = desc.generators.shape[1]
    if k == 0:
        return desc.weights_from_alpha(desc.alpha0)
    cols = [
        X_val[:, problem.partition.blocks[i]] @ desc.v_vectors[i]
        for i in desc.support
    ]
    M = np.column_stack(cols)
    alpha, _ = nonneg_eq_lsq(M, y_val, desc.generators, desc.y_hat,
                             a0=desc.alpha0)
    w = desc.weights_from_alpha(alpha)
    if not contains(desc, w, tol=max(desc.tol, 1e-6)):
        raise CertificateError("tuned candidate failed the membership check")
    candidates = [w, min_norm(desc)]
    losses = [np.linalg.norm(X_val @ c - y_val) for c in candidates]
    return candidates[int(np.argmin(losses))]


# ---------------------------------------------------------------------------
# path tracing


def flag_fit_jumps(fits, window=2, factor=10.0, floor=0.0):
    """Mark adjacent-fit differences that tower over their neighborhood.

    The threshold at step k is ``factor`` times the median of the adjacent
    differences in a +-``window`` neighborhood (plus an absolute floor), so
    branch-dependent slopes do not trigger false positives.
    """
    fits = [np.asarray(f, dtype=float) for f in fits]
    diffs = [np.linalg.norm(b - a) for a, b in zip(fits, fits[1:])]
    flags = []
    for k, d_k in enumerate(diffs):
        lo = max(0, k - window)
        hi = min(len(diffs), k + window + 1)
        local = sorted(diffs[lo:hi])
        med = local[len(local) // 2]
        flags.append(d_k > factor * max(med, floor))
    return flags


@dataclass(eq=False)
class PathPoint:
    lam: float
    w: np.ndarray
    objective: float
    fit: np.ndarray
    penalty: float
    support_size: int
    kkt_violation: float
    converged: bool


@dataclass(eq=False)
class PathReport:
    points: list
    jump_flags: list
    jump_floor: float

    @property
    def lambdas(self):
        return [p.lam for p in self.points]

    def rows(self):
        out = []
        for idx, p in enumerate(self.points):
            jump = self.jump_flags[idx - 1] if idx > 0 else False
            out.append(
                {
                    "lambda": p.lam,
                    "objective": p.objective,
                    "fit_norm": float(np.linalg.norm(p.fit)),
                    "support_size": p.support_size,
                    "jump_flag": bool(jump),
                    "penalty": p.penalty,
                    "kkt_violation": p.kkt_violation,
                    "converged": p.converged,
                }
            )
        return out

    def jump_lambdas(self):
        return [
            (self.points[k].lam, self.points[k + 1].lam)
            for k, f in enumerate(self.jump_flags)
            if f
        ]


def trace_path(Z, y, patterns, arch, lambda_grid, options=None,
               per_pattern_best=False):
    """Solve along a decreasing lambda grid with warm starts.

    ``per_pattern_best`` solves one single-pattern problem per pattern at
    each grid point and keeps the best branch, tracing the path of
    width-limited models instead of the full convex program.  Solver
    failures are recorded per grid point and the trace continues.
    """
    lambda_grid = [float(l) for l in lambda_grid]
    if any(b >= a for a, b in zip(lambda_grid, lambda_grid[1:])):
        raise ValueError("lambda grid must be strictly decreasing")
    options = options or SolverOptions()
    y = np.asarray(y, dtype=float).ravel()

    points = []
    if per_pattern_best:
        import dataclasses as _dc

        sub_patterns = []
        for i in range(len(patterns)):
            sub = _dc.replace(
                patterns,
                masks=patterns.masks[i : i + 1],
                witnesses=patterns.witnesses[i : i + 1],
            )
            sub_patterns.append(sub)
        warm = [None] * len(sub_patterns)
        for lam in lambda_grid:
            best = None
            for j, sub in enumerate(sub_patterns):
                prob = build_cgl(Z, y, sub, lam, arch)
                res = solve(prob, options, w0=warm[j])
                warm[j] = res.w
                if best is None or res.objective < best[0].objective - 1e-12:
                    best = (res, prob)
            res, prob = best
            points.append(_path_point(prob, res, lam))
    else:
        warm = None
        for lam in lambda_grid:
            prob = build_cgl(Z, y, patterns, lam, arch)
            res = solve(prob, options, w0=warm)
            warm = res.w
            points.append(_path_point(prob, res, lam))
    floor = 1e-9 * (1.0 + float(np.linalg.norm(y)))
    flags = flag_fit_jumps([p.fit for p in points], floor=floor)
    return PathReport(points=points, jump_flags=flags, jump_floor=floor)


def _path_point(prob, res, lam):
    return PathPoint(
        lam=lam,
        w=res.w,
        objective=res.objective,
        fit=prob.X @ res.w,
        penalty=penalty_sum(prob, res.w),
        support_size=len(res.report.active),
        kkt_violation=res.report.max_violation,
        converged=res.converged,
    )
