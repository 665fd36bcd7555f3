"""Build CGL problems from raw data and map weights between parameterizations.

Activation patterns are binary masks 1(Z u >= 0) over the training rows.
Enumerating them exactly is a hyperplane-arrangement problem: we sweep
angles for one- and two-dimensional u-spaces and fall back to incremental
LP-certified candidate generation otherwise.  Every emitted mask stores a
witness direction u that realizes it exactly.

The convex problem built from a pattern set uses the stacked design
[D_1 Z ... D_p Z] for gated models (no constraints) and
[D_1 Z ... D_p Z, -D_1 Z ... -D_p Z] for ReLU models, where block i and
block p+i share the cone constraint K_i = -Z^T (2 D_i - I).  The sign on
the second copy makes the stacked fit equal the network output
sum_i (Z W1_i)_+ w2_i after the weight map, so objectives agree exactly
between the two parameterizations.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .core import BlockPartition, CapabilityError, CglProblem

REALIZABILITY_MARGIN = 1e-9

# budget on LP feasibility calls for the incremental enumerator
_LP_BUDGET = 200_000


@dataclass(eq=False)
class PatternSet:
    """Deduplicated activation masks with realizability witnesses.

    masks : (p, n) boolean array, rows sorted lexicographically.
    witnesses : (p, d) array; row i satisfies (Z @ witnesses[i] >= 0) == masks[i]
        entrywise, exactly.
    provenance : "enumerated" or "sampled".
    region_masks : number of masks realizable with strict signs on every row
        (the full-dimensional cells of the arrangement).
    region_bound : 2 * sum_{k < r} C(n_hyperplanes - 1, k), the cell-count
        bound for an arrangement of n_hyperplanes distinct hyperplanes in a
        rank-r space.
    """

    masks: np.ndarray
    witnesses: np.ndarray
    provenance: str
    rank: int
    n_hyperplanes: int
    region_masks: int
    region_bound: int
    seed: int | None = None
    requested: int | None = None

    def __len__(self):
        return self.masks.shape[0]

    @property
    def p(self):
        return self.masks.shape[0]

    @property
    def n(self):
        return self.masks.shape[1]

    def nnz(self):
        return self.masks.sum(axis=1)

    def to_dict(self):
        return {
            "schema_version": 1,
            "masks": ["".join("1" if b else "0" for b in row) for row in self.masks],
            "witnesses": [[float(x) for x in row] for row in self.witnesses],
            "provenance": self.provenance,
            "rank": int(self.rank),
            "n_hyperplanes": int(self.n_hyperplanes),
            "region_masks": int(self.region_masks),
            "region_bound": int(self.region_bound),
            "seed": self.seed,
            "requested": self.requested,
        }


@dataclass(eq=False)
class ReluNetwork:
    """Two-layer network weights.

    W1 rows are first-layer neurons, w2 the second-layer scalars.  Gated
    networks carry one gate direction per neuron; plain ReLU networks carry
    none.  The optional per-neuron biases only appear in networks produced
    by the one-dimensional reduction.
    """

    W1: np.ndarray
    w2: np.ndarray
    gates: np.ndarray | None = None
    bias1: np.ndarray | None = None
    bias2: float | None = None

    def __post_init__(self):
        self.W1 = np.atleast_2d(np.asarray(self.W1, dtype=float))
        self.w2 = np.asarray(self.w2, dtype=float).ravel()
        if self.W1.shape[0] != self.w2.size:
            if self.W1.size == 0 and self.w2.size == 0:
                self.W1 = self.W1.reshape(0, self.W1.shape[1] if self.W1.ndim == 2 else 0)
            else:
                raise ValueError("W1 and w2 disagree on the number of neurons")
        if self.gates is not None:
            self.gates = np.atleast_2d(np.asarray(self.gates, dtype=float))
            if self.gates.shape != self.W1.shape:
                raise ValueError("gates must match W1 in shape")
        if self.bias1 is not None:
            self.bias1 = np.asarray(self.bias1, dtype=float).ravel()
            if self.bias1.size != self.w2.size:
                raise ValueError("bias1 must have one entry per neuron")

    @property
    def width(self):
        return self.w2.size

    def active_neurons(self, tol=0.0):
        norms = np.linalg.norm(self.W1, axis=1) * np.abs(self.w2)
        return np.flatnonzero(norms > tol)


def predict(net, Z):
    """Network output on the rows of Z."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    out = np.zeros(Z.shape[0])
    if net.width == 0:
        if net.bias2 is not None:
            out += net.bias2
        return out
    pre = Z @ net.W1.T
    if net.bias1 is not None:
        pre = pre + net.bias1
    if net.gates is not None:
        open_gate = (Z @ net.gates.T) >= 0
        out = (open_gate * pre) @ net.w2
    else:
        out = np.maximum(pre, 0.0) @ net.w2
    if net.bias2 is not None:
        out = out + net.bias2
    return out


# ---------------------------------------------------------------------------
# pattern enumeration


def _mask_of(Z, u):
    return (Z @ u) >= 0


def _canonical_rows(Z, tol=1e-12):
    """Distinct nonzero rows up to positive/negative scaling."""
    seen = {}
    for row in Z:
        norm = np.linalg.norm(row)
        if norm <= tol:
            continue
        v = row / norm
        nz = np.flatnonzero(np.abs(v) > 1e-12)
        if nz.size and v[nz[0]] < 0:
            v = -v
        key = tuple(np.round(v, 10))
        seen[key] = True
    return len(seen)


def _region_bound(n_hyperplanes, rank):
    if n_hyperplanes == 0:
        return 1
    return 2 * sum(math.comb(n_hyperplanes - 1, k) for k in range(rank))


def _mask_feasible(Z, mask, strict_ones=False):
    """LP witness for the sign system of ``mask``.

    Rows with mask 1 require z_i^T u >= 0 (or >= s when strict_ones), rows
    with mask 0 require z_i^T u <= -s; the slack s is maximized subject to
    s <= 1 and box bounds on u.  Returns (witness, margin) or None.
    """
    n, d = Z.shape
    norms = np.linalg.norm(Z, axis=1)
    norms[norms == 0] = 1.0
    Zn = Z / norms[:, None]
    A_ub = []
    b_ub = []
    for i in range(n):
        if mask[i]:
            coef = 1.0 if strict_ones else 0.0
            A_ub.append(np.concatenate([-Zn[i], [coef]]))
        else:
            A_ub.append(np.concatenate([Zn[i], [1.0]]))
        b_ub.append(0.0)
    c = np.zeros(d + 1)
    c[-1] = -1.0
    bounds = [(-1.0, 1.0)] * d + [(0.0, 1.0)]
    res = linprog(c, A_ub=np.asarray(A_ub), b_ub=np.asarray(b_ub), bounds=bounds,
                  method="highs")
    if not res.success:
        return None
    margin = float(res.x[-1])
    if margin < REALIZABILITY_MARGIN:
        return None
    return res.x[:-1], margin


def _witness_for(Z, mask):
    """Direction realizing ``mask`` exactly, or None.

    The all-ones mask is realized by u = 0.  Otherwise a strictly-signed
    witness is sought first; masks realizable only on arrangement
    boundaries (degenerate row geometry, measure zero for continuous data)
    fall back to a projection repair and are dropped if that fails.
    """
    if mask.all():
        return np.zeros(Z.shape[1])
    fit = _mask_feasible(Z, mask, strict_ones=True)
    if fit is not None and np.array_equal(_mask_of(Z, fit[0]), mask):
        return fit[0]
    fit = _mask_feasible(Z, mask)
    if fit is None:
        return None
    u = fit[0]
    if np.array_equal(_mask_of(Z, u), mask):
        return u
    bad = np.flatnonzero(mask & ~(_mask_of(Z, u)))
    if bad.size:
        Zb = Z[bad]
        # remove the offending components of u along the violated normals
        u_fix = u - Zb.T @ np.linalg.lstsq(Zb @ Zb.T, Zb @ u, rcond=None)[0]
        if np.array_equal(_mask_of(Z, u_fix), mask):
            return u_fix
    return None


def _sweep_1d(Z):
    column = Z[:, 0]
    candidates = [np.array([1.0]), np.array([-1.0]), np.array([0.0])]
    return candidates


def _sweep_2d(Z):
    """Candidate directions covering every face of a central line arrangement.

    Cell interiors come first (angular midpoints between consecutive
    boundary rays) so that masks realizable on full-dimensional cells get
    strictly-signed witnesses; boundary rays are built as unnormalized
    perpendicular rotations (-z1, z0), whose dot product with the defining
    row is an exact floating-point zero.
    """
    rays = []
    angles = set()
    for row in Z:
        if np.linalg.norm(row) <= 1e-14:
            continue
        for perp in (np.array([-row[1], row[0]]), np.array([row[1], -row[0]])):
            rays.append(perp)
            angles.add(math.atan2(perp[1], perp[0]) % (2 * math.pi))
    if not angles:
        return [np.array([1.0, 0.0]), np.zeros(2)]
    angles = sorted(angles)
    mids = []
    for a, b in zip(angles, angles[1:] + [angles[0] + 2 * math.pi]):
        mid = (a + b) / 2.0
        mids.append(np.array([math.cos(mid), math.sin(mid)]))
    return mids + rays + [np.zeros(2)]


def _enumerate_sweep(Z):
    candidates = _sweep_1d(Z) if Z.shape[1] == 1 else _sweep_2d(Z)
    found = {}
    for u in candidates:
        mask = _mask_of(Z, u)
        key = tuple(mask.tolist())
        if key not in found:
            found[key] = u
    return found


def _enumerate_incremental(Z):
    """Row-by-row extension of realizable sign prefixes, LP-certified."""
    n = Z.shape[0]
    lp_calls = 0
    prefixes = [()]
    for k in range(1, n + 1):
        Zk = Z[:k]
        new = []
        for prefix in prefixes:
            for bit in (True, False):
                cand = prefix + (bit,)
                lp_calls += 1
                if lp_calls > _LP_BUDGET:
                    raise CapabilityError(
                        "exhaustive enumeration exceeded its LP budget; "
                        "use sampled mode"
                    )
                if _mask_feasible(Zk, np.array(cand)) is not None:
                    new.append(cand)
        prefixes = new
    found = {}
    for mask_t in prefixes:
        mask = np.array(mask_t)
        u = _witness_for(Z, mask)
        if u is None:
            continue
        found[mask_t] = u
    return found


def enumerate_patterns(Z, mode="exhaustive", count=None, seed=None):
    """Activation patterns of Z, either exhaustively or by sampling.

    Exhaustive mode is guarded to n <= 20 or d <= 3 and returns every
    realizable mask exactly once.  Sampled mode draws ``count`` Gaussian
    directions with the given seed, always including the all-ones mask
    (realized by u = 0).
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    n, d = Z.shape
    rank = int(np.linalg.matrix_rank(Z)) if Z.size else 0
    n_hyp = _canonical_rows(Z)
    bound = _region_bound(n_hyp, max(rank, 1))

    if mode == "exhaustive":
        if not (n <= 20 or d <= 3):
            raise CapabilityError(
                f"exhaustive enumeration is guarded to n <= 20 or d <= 3, "
                f"got n={n}, d={d}"
            )
        if d <= 2:
            found = _enumerate_sweep(Z)
        else:
            found = _enumerate_incremental(Z)
        provenance = "enumerated"
    elif mode == "sampled":
        if count is None or seed is None:
            raise ValueError("sampled mode requires count and seed")
        rng = np.random.default_rng(seed)
        found = {}
        ones = tuple([True] * n)
        found[ones] = np.zeros(d)
        for _ in range(int(count)):
            u = rng.standard_normal(d)
            mask = _mask_of(Z, u)
            key = tuple(mask.tolist())
            if key not in found:
                found[key] = u
        provenance = "sampled"
    else:
        raise ValueError(f"unknown mode {mode!r}")

    keys = sorted(found.keys())
    masks = np.array(keys, dtype=bool).reshape(len(keys), n)
    witnesses = np.array([found[k] for k in keys], dtype=float).reshape(len(keys), d)
    for mask, u in zip(masks, witnesses):
        realized = _mask_of(Z, u)
        if not np.array_equal(realized, mask):
            raise AssertionError("witness fails to realize its mask exactly")
    region = 0
    for mask, u in zip(masks, witnesses):
        signs = Z @ u
        if mask.all() and np.allclose(u, 0.0):
            # the zero direction realizes all-ones but never a full cell
            if _mask_feasible(Z, mask, strict_ones=True) is not None:
                region += 1
            continue
        if np.all(np.abs(signs) > 1e-12):
            region += 1
        elif _mask_feasible(Z, mask, strict_ones=True) is not None:
            region += 1
    return PatternSet(
        masks=masks,
        witnesses=witnesses,
        provenance=provenance,
        rank=rank,
        n_hyperplanes=n_hyp,
        region_masks=region,
        region_bound=bound,
        seed=seed,
        requested=count,
    )


# ---------------------------------------------------------------------------
# problem assembly


def build_cgl(Z, y, patterns, lam, arch):
    """Assemble the CGL instance for a pattern set.

    gated: p blocks of width d with design D_i Z and no constraints.
    relu: 2p blocks; block i has design D_i Z, block p+i has design -D_i Z,
    and both share the cone K_i = -Z^T (2 D_i - I).
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if len(patterns) == 0:
        raise ValueError("pattern set is empty")
    n, d = Z.shape
    if patterns.n != n:
        raise ValueError("pattern masks and Z disagree on the number of rows")
    designs = [patterns.masks[i][:, None] * Z for i in range(len(patterns))]
    if arch == "gated":
        X = np.hstack(designs)
        partition = BlockPartition.from_sizes([d] * len(patterns))
        constraints = None
    elif arch == "relu":
        X = np.hstack(designs + [-D for D in designs])
        partition = BlockPartition.from_sizes([d] * (2 * len(patterns)))
        cones = [
            -((2.0 * patterns.masks[i][:, None] - 1.0) * Z).T
            for i in range(len(patterns))
        ]
        constraints = cones + cones
    else:
        raise ValueError(f"unknown architecture {arch!r}")
    return CglProblem(X, y, partition, constraints, lam)


def split_convex_weights(problem, patterns, w):
    """Split stacked CGL weights into (v, u) per-pattern blocks for relu,
    or a single (p, d)-array for gated problems."""
    w = problem.check_weights(w)
    p = len(patterns)
    blocks = problem.partition.split(w)
    if problem.m == p:
        return np.array(blocks)
    if problem.m == 2 * p:
        return np.array(blocks[:p]), np.array(blocks[p:])
    raise ValueError("problem and pattern set disagree on the block count")


def convex_to_relu(v, u):
    """Map per-pattern convex weights to a plain ReLU network.

    Positive copies become neurons with w2 = sqrt(||v_i||), negative copies
    get w2 = -sqrt(||u_i||); zero blocks become zero neurons (0/0 = 0).
    """
    v = np.atleast_2d(np.asarray(v, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    rows = []
    outs = []
    for block, sign in ((v, 1.0), (u, -1.0)):
        for w_b in block:
            norm = np.linalg.norm(w_b)
            if norm == 0.0:
                rows.append(np.zeros_like(w_b))
                outs.append(0.0)
            else:
                rows.append(w_b / np.sqrt(norm))
                outs.append(sign * np.sqrt(norm))
    return ReluNetwork(W1=np.array(rows), w2=np.array(outs))


def convex_to_gated(w_blocks, patterns):
    """Map gated convex weights to a gated network, one gate per pattern."""
    w_blocks = np.atleast_2d(np.asarray(w_blocks, dtype=float))
    rows = []
    outs = []
    for w_b in w_blocks:
        norm = np.linalg.norm(w_b)
        if norm == 0.0:
            rows.append(np.zeros_like(w_b))
            outs.append(0.0)
        else:
            rows.append(w_b / np.sqrt(norm))
            outs.append(np.sqrt(norm))
    return ReluNetwork(W1=np.array(rows), w2=np.array(outs),
                       gates=patterns.witnesses.copy())


def _conforming_pattern(Z, patterns, direction, atol):
    """Sparsest supplied pattern whose cone contains ``direction``."""
    scores = []
    zd = Z @ direction
    scale = max(1.0, float(np.max(np.abs(zd))))
    for i in range(len(patterns)):
        signed = (2.0 * patterns.masks[i] - 1.0) * zd
        if np.all(signed >= -atol * scale):
            scores.append((int(patterns.masks[i].sum()), i))
    if not scores:
        return None
    return min(scores)[1]


def relu_to_convex(net, Z, patterns, atol=1e-10):
    """Map a plain ReLU network back to per-pattern convex weights.

    Each nonzero neuron is assigned the sparsest supplied pattern it
    conforms to; collinear neurons sharing a pattern and output sign merge
    by summing W1_i * |w2_i|.  Raises if some neuron fits no pattern.
    """
    if net.gates is not None:
        raise ValueError("relu_to_convex expects a plain ReLU network")
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    p = len(patterns)
    d = Z.shape[1]
    v = np.zeros((p, d))
    u = np.zeros((p, d))
    for i in range(net.width):
        w1 = net.W1[i]
        w2 = net.w2[i]
        if np.linalg.norm(w1) == 0.0 or w2 == 0.0:
            continue
        j = _conforming_pattern(Z, patterns, w1, atol)
        if j is None:
            raise ValueError(f"neuron {i} conforms to no supplied pattern")
        if w2 > 0:
            v[j] += w1 * w2
        else:
            u[j] += w1 * (-w2)
    return v, u


def canonical_form(net, Z, patterns, atol=1e-10):
    """Merge collinear same-pattern same-sign neurons and order by pattern.

    The result is the unique normal form of the network modulo permutation
    and split symmetries: one nonneg-output and one neg-output neuron per
    pattern, ordered by pattern index.
    """
    v, u = relu_to_convex(net, Z, patterns, atol=atol)
    return convex_to_relu(v, u)


def relu_penalty(net):
    """Weight-decay regularizer ||W1||_F^2 + ||w2||^2 (biases excluded)."""
    return float(np.sum(net.W1 ** 2) + np.sum(net.w2 ** 2))


def relu_objective(net, Z, y, lam):
    """Nonconvex training objective 0.5 ||f(Z) - y||^2 + (lam/2) R."""
    r = predict(net, Z) - np.asarray(y, dtype=float).ravel()
    return 0.5 * float(r @ r) + 0.5 * lam * relu_penalty(net)


def fourth_power_penalty(net):
    """sum_i ||W1_i||^4 + |w2_i|^4, the merge-sensitive model size measure."""
    return float(
        np.sum(np.linalg.norm(net.W1, axis=1) ** 4) + np.sum(net.w2 ** 4)
    )


def p_unique_precondition(patterns):
    """True when every mask has at least p*d active rows.

    This is the density premise under which, for data in general position,
    distinct equicorrelated patterns force a solution unique up to neuron
    permutations and splits.  Only the premise is checked here.
    """
    need = len(patterns) * patterns.witnesses.shape[1]
    return bool(np.all(patterns.nnz() >= need))


# ---------------------------------------------------------------------------
# one-dimensional reduction


@dataclass(eq=False)
class OneDLasso:
    """Lasso-with-intercept equivalent of the 1-D training problem.

    ``problem`` is the centered CGL instance over the hinge coefficients
    (singleton blocks, no constraints); the unpenalized intercept is
    recovered as mean(y - A v) after solving.
    """

    A: np.ndarray
    Z: np.ndarray
    y: np.ndarray
    lam: float
    problem: CglProblem
    has_intercept: bool = True

    def intercept_for(self, v):
        return float(np.mean(self.y - self.A @ v))

    def lasso_objective(self, v, b):
        r = self.A @ v + b - self.y
        return 0.5 * float(r @ r) + self.lam * float(np.sum(np.abs(v)))


def one_d_lasso_build(Z, y, lam):
    """Gap-matrix lasso equivalent for one-dimensional inputs.

    A = [A1 A2] where A1 holds the up-slope hinge columns (z - Z_j)_+ on
    successive breakpoints and A2 the reversed down-slope columns
    (Z_k - z)_+.  Requires n >= 2 strictly increasing inputs.
    """
    Z = np.asarray(Z, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    n = Z.size
    if n < 2:
        raise ValueError("need at least two samples")
    if y.size != n:
        raise ValueError("Z and y must have the same length")
    if np.any(np.diff(Z) <= 0):
        raise ValueError("inputs must be strictly increasing and distinct")
    A1 = np.zeros((n, n - 1))
    A2 = np.zeros((n, n - 1))
    for i in range(n):
        for j in range(n - 1):
            if i > j:
                A1[i, j] = Z[i] - Z[j]
            k = n - 1 - j  # 0-based index of the down-slope anchor
            if i < k:
                A2[i, j] = Z[k] - Z[i]
    A = np.hstack([A1, A2])
    A_centered = A - A.mean(axis=0)
    y_centered = y - y.mean()
    problem = CglProblem(
        A_centered,
        y_centered,
        BlockPartition.singletons(A.shape[1]),
        None,
        lam,
    )
    return OneDLasso(A=A, Z=Z, y=y, lam=lam, problem=problem)


def one_d_lasso_to_network(v, b, Z, atol=1e-10):
    """Map lasso coefficients to a biased width-2(n-1) ReLU network.

    Up-slope columns produce neurons v_i (z - Z_i)_+, down-slope columns
    the mirrored (Z_k - z)_+ neurons; the lasso intercept becomes the output
    bias.  The construction is verified against A v + b on the data points.
    """
    Z = np.asarray(Z, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    n = Z.size
    if v.size != 2 * (n - 1):
        raise ValueError(f"expected {2 * (n - 1)} coefficients, got {v.size}")
    W1 = []
    w2 = []
    bias1 = []
    for j in range(n - 1):
        vj = v[j]
        if vj == 0.0:
            W1.append(0.0); w2.append(0.0); bias1.append(0.0)
            continue
        root = np.sqrt(abs(vj))
        W1.append(root)
        w2.append(np.sign(vj) * root)
        bias1.append(-Z[j] * root)
    for j in range(n - 1):
        vj = v[n - 1 + j]
        if vj == 0.0:
            W1.append(0.0); w2.append(0.0); bias1.append(0.0)
            continue
        k = n - 1 - j
        root = np.sqrt(abs(vj))
        W1.append(-root)
        w2.append(np.sign(vj) * root)
        bias1.append(Z[k] * root)
    net = ReluNetwork(
        W1=np.array(W1)[:, None],
        w2=np.array(w2),
        bias1=np.array(bias1),
        bias2=float(b),
    )
    built = one_d_lasso_build(Z, np.zeros(n), 0.0) if n >= 2 else None
    target = built.A @ v + b
    got = predict(net, Z[:, None])
    if np.max(np.abs(got - target)) > atol * (1.0 + np.max(np.abs(target))):
        raise ValueError("hinge network failed to reproduce the lasso fit")
    return net
