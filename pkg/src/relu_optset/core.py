"""Problem containers and optimality diagnostics for the constrained group lasso.

The constrained group lasso (CGL) minimizes

    0.5 * ||X w - y||^2 + lambda * sum_i ||w_{b_i}||_2

over weight vectors w, where the coordinates of w are partitioned into
disjoint blocks b_1, ..., b_m and each block may carry a linear cone
constraint K_i^T w_{b_i} <= 0.  Everything else in this package (solvers,
optimal-set descriptions, pruning, sensitivity) consumes the types defined
here.

All containers are immutable values after construction and all functions
are pure, so concurrent use on distinct problems is safe.
"""

import numpy as np


class CglError(Exception):
    """Base class for errors raised by this package."""


class CapabilityError(CglError):
    """An operation was requested outside its guarded regime."""


class SolverError(CglError):
    """An iterative solve failed to reach its target tolerance."""


class CertificateError(CglError):
    """A primal/dual pair could not be verified or recovered."""


def _as_float_vector(x, name):
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    return arr


def _as_float_matrix(x, name):
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be two-dimensional, got shape {arr.shape}")
    return arr


class BlockPartition:
    """Disjoint partition of the feature indices {0, ..., d-1} into blocks."""

    def __init__(self, blocks):
        blocks = tuple(np.asarray(b, dtype=int) for b in blocks)
        if not blocks:
            raise ValueError("partition needs at least one block")
        seen = set()
        for b in blocks:
            if b.size == 0:
                raise ValueError("empty block in partition")
            if b.ndim != 1:
                raise ValueError("block index lists must be one-dimensional")
            dup = seen.intersection(b.tolist())
            if dup:
                raise ValueError(f"blocks overlap on indices {sorted(dup)}")
            seen.update(b.tolist())
        d = len(seen)
        if seen != set(range(d)):
            raise ValueError("blocks must cover exactly {0..d-1} with no gaps")
        self.blocks = blocks
        self.d = d

    @classmethod
    def from_sizes(cls, sizes):
        """Contiguous blocks of the given widths, in order."""
        idx = 0
        blocks = []
        for s in sizes:
            blocks.append(np.arange(idx, idx + int(s)))
            idx += int(s)
        return cls(blocks)

    @classmethod
    def singletons(cls, d):
        return cls.from_sizes([1] * int(d))

    def __len__(self):
        return len(self.blocks)

    def widths(self):
        return [b.size for b in self.blocks]

    def split(self, w):
        """Views of w restricted to each block, in block order."""
        w = np.asarray(w)
        return [w[b] for b in self.blocks]

    def block(self, w, i):
        return np.asarray(w)[self.blocks[i]]

    def join(self, pieces):
        """Inverse of split: scatter per-block vectors back into a length-d vector."""
        out = np.zeros(self.d)
        for b, piece in zip(self.blocks, pieces):
            out[b] = piece
        return out

    def __eq__(self, other):
        return (
            isinstance(other, BlockPartition)
            and len(self) == len(other)
            and all(np.array_equal(a, b) for a, b in zip(self.blocks, other.blocks))
        )

    def __repr__(self):
        return f"BlockPartition(widths={self.widths()})"


class CglProblem:
    """A constrained group lasso instance.

    Parameters
    ----------
    X : (n, d) design matrix.
    y : (n,) target vector.
    partition : BlockPartition over the d columns.
    constraints : per-block matrix K_i of shape (|b_i|, a_i) encoding
        K_i^T w_{b_i} <= 0, or None for an unconstrained block.  Passing
        ``None`` for the whole argument leaves every block unconstrained.
    lam : regularization strength, nonnegative.
    """

    def __init__(self, X, y, partition, constraints=None, lam=0.0):
        X = _as_float_matrix(X, "X")
        y = _as_float_vector(y, "y")
        if X.shape[0] != y.size:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.size} entries")
        if X.shape[1] != partition.d:
            raise ValueError(
                f"X has {X.shape[1]} columns but the partition covers {partition.d}"
            )
        if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
            raise ValueError("X and y must be finite")
        lam = float(lam)
        if lam < 0:
            raise ValueError("lambda must be nonnegative")
        if constraints is None:
            constraints = (None,) * len(partition)
        constraints = tuple(
            None if K is None else _as_float_matrix(K, f"K[{i}]")
            for i, K in enumerate(constraints)
        )
        if len(constraints) != len(partition):
            raise ValueError("one constraint entry per block required")
        for i, K in enumerate(constraints):
            if K is None:
                continue
            if K.shape[0] != partition.blocks[i].size:
                raise ValueError(
                    f"constraint matrix for block {i} has {K.shape[0]} rows, "
                    f"expected {partition.blocks[i].size}"
                )
            if not np.all(np.isfinite(K)):
                raise ValueError(f"constraint matrix for block {i} must be finite")
        self.X = X
        self.y = y
        self.partition = partition
        self.constraints = constraints
        self.lam = lam
        self._X_blocks = tuple(X[:, b] for b in partition.blocks)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def m(self):
        return len(self.partition)

    @property
    def constrained(self):
        return any(K is not None for K in self.constraints)

    def X_block(self, i):
        return self._X_blocks[i]

    def with_lambda(self, lam):
        return CglProblem(self.X, self.y, self.partition, self.constraints, lam)

    def check_weights(self, w):
        w = _as_float_vector(w, "w")
        if w.size != self.d:
            raise ValueError(f"weights have length {w.size}, problem dimension is {self.d}")
        return w

    def __repr__(self):
        return (
            f"CglProblem(n={self.n}, d={self.d}, blocks={self.m}, "
            f"lam={self.lam!r}, constrained={self.constrained})"
        )


class DualCertificate:
    """Per-block nonnegative multipliers for the cone constraints.

    Unconstrained blocks carry an empty vector.  Entries may dip to -1e-10
    before construction fails, to absorb solver round-off.
    """

    NEG_TOL = 1e-10

    def __init__(self, rho):
        rho = tuple(np.asarray(r, dtype=float).ravel() for r in rho)
        for i, r in enumerate(rho):
            if r.size and r.min() < -self.NEG_TOL:
                raise ValueError(f"dual block {i} has negative entry {r.min():.3e}")
        self.rho = tuple(np.maximum(r, 0.0) for r in rho)

    @classmethod
    def zeros(cls, problem):
        return cls(
            tuple(
                np.zeros(0 if K is None else K.shape[1]) for K in problem.constraints
            )
        )

    def block(self, i):
        return self.rho[i]

    def __len__(self):
        return len(self.rho)

    def __repr__(self):
        return f"DualCertificate(sizes={[r.size for r in self.rho]})"


class KktReport:
    """Snapshot of the first-order optimality conditions at a primal/dual pair."""

    def __init__(
        self,
        residual,
        correlations,
        v_vectors,
        stationarity_violation,
        feasibility_violation,
        slackness_violation,
        equicorrelation,
        active,
        satisfied,
        tol,
    ):
        self.residual = residual
        self.correlations = correlations
        self.v_vectors = v_vectors
        self.stationarity_violation = float(stationarity_violation)
        self.feasibility_violation = float(feasibility_violation)
        self.slackness_violation = float(slackness_violation)
        self.equicorrelation = tuple(sorted(equicorrelation))
        self.active = tuple(sorted(active))
        self.satisfied = bool(satisfied)
        self.tol = float(tol)

    @property
    def max_violation(self):
        return max(
            self.stationarity_violation,
            self.feasibility_violation,
            self.slackness_violation,
        )

    def __repr__(self):
        return (
            f"KktReport(satisfied={self.satisfied}, "
            f"stationarity={self.stationarity_violation:.3e}, "
            f"feasibility={self.feasibility_violation:.3e}, "
            f"slackness={self.slackness_violation:.3e}, "
            f"active={self.active}, equicorrelation={self.equicorrelation})"
        )


def active_tolerance(w):
    """Scale-invariant threshold below which a block counts as zero."""
    return 1e-8 * (1.0 + float(np.linalg.norm(w)))


def equicorrelation_tolerance(lam):
    return 1e-6 * (1.0 + float(lam))


def objective(problem, w):
    """CGL objective value; constraint feasibility is not checked here."""
    w = problem.check_weights(w)
    r = problem.X @ w - problem.y
    penalty = sum(np.linalg.norm(wb) for wb in problem.partition.split(w))
    return 0.5 * float(r @ r) + problem.lam * penalty


def penalty_sum(problem, w):
    """Sum of block norms of w."""
    w = problem.check_weights(w)
    return float(sum(np.linalg.norm(wb) for wb in problem.partition.split(w)))


def kkt_report(problem, w, rho, tol=1e-6):
    """Evaluate the KKT conditions for (w, rho) on a CGL problem.

    Per block, with residual r = y - X w, correlation c_i = X_i^T r and
    v_i = c_i - K_i rho_i, the stationarity defect is

        ||v_i - lambda * w_i / ||w_i|| ||   if the block is active,
        max(0, ||v_i|| - lambda)            otherwise.

    Feasibility and complementary slackness are measured in absolute terms
    and the report is satisfied when all three defects are at most ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    w = problem.check_weights(w)
    if len(rho) != problem.m:
        raise ValueError("dual certificate has wrong number of blocks")
    lam = problem.lam
    r = problem.y - problem.X @ w
    tol_act = active_tolerance(w)
    tol_eq = equicorrelation_tolerance(lam)

    correlations = []
    v_vectors = []
    stationarity = 0.0
    feasibility = 0.0
    slackness = 0.0
    equicorrelation = []
    active = []
    for i in range(problem.m):
        wb = problem.partition.block(w, i)
        c = problem.X_block(i).T @ r
        K = problem.constraints[i]
        rb = rho.block(i)
        if K is None:
            if rb.size:
                raise ValueError(f"dual block {i} must be empty: block is unconstrained")
            v = c
        else:
            if rb.size != K.shape[1]:
                raise ValueError(
                    f"dual block {i} has size {rb.size}, expected {K.shape[1]}"
                )
            v = c - K @ rb
            g = K.T @ wb
            if g.size:
                feasibility = max(feasibility, float(np.max(g, initial=0.0)))
                slackness = max(slackness, float(np.max(np.abs(rb * g), initial=0.0)))
        correlations.append(c)
        v_vectors.append(v)
        nb = np.linalg.norm(wb)
        if nb > tol_act:
            active.append(i)
            defect = np.linalg.norm(v - lam * wb / nb)
        else:
            defect = max(0.0, np.linalg.norm(v) - lam)
        stationarity = max(stationarity, float(defect))
        if abs(np.linalg.norm(v) - lam) <= tol_eq:
            equicorrelation.append(i)
    satisfied = max(stationarity, feasibility, slackness) <= tol
    return KktReport(
        residual=r,
        correlations=correlations,
        v_vectors=v_vectors,
        stationarity_violation=stationarity,
        feasibility_violation=feasibility,
        slackness_violation=slackness,
        equicorrelation=equicorrelation,
        active=active,
        satisfied=satisfied,
        tol=tol,
    )


def active_set(problem, w, tol=None):
    """Indices of blocks with non-negligible norm."""
    w = problem.check_weights(w)
    thresh = active_tolerance(w) if tol is None else tol * (1.0 + np.linalg.norm(w))
    return tuple(
        i
        for i, wb in enumerate(problem.partition.split(w))
        if np.linalg.norm(wb) > thresh
    )

def support_set(problem, solutions, tol=1e-8):
    """Union of active sets over a collection of (verified) solutions.

    With a single solution this is just its active set.  Callers are
    expected to have verified optimality of each input via kkt_report.
    """
    solutions = list(solutions)
    if not solutions:
        raise ValueError("support_set requires at least one solution")
    support = set()
    for w in solutions:
        support.update(active_set(problem, w, tol=tol))
    return tuple(sorted(support))
