import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relu_optset import (
    BlockPartition,
    CglProblem,
    DualCertificate,
    SolverOptions,
    active_set,
    kkt_report,
    objective,
    penalty_sum,
    solve,
    support_set,
)
from relu_optset import serialize
from relu_optset.fixtures import (
    duplicate_columns_problem,
    gaussian_instance,
    min_norm_interp_problem,
)


def reference_objective(problem, w):
    """Straight-line re-implementation used as the oracle for objective()."""
    total = 0.0
    for row, target in zip(problem.X, problem.y):
        pred = 0.0
        for j in range(problem.d):
            pred += row[j] * w[j]
        total += 0.5 * (pred - target) ** 2
    for block in problem.partition.blocks:
        sq = 0.0
        for j in block:
            sq += w[j] ** 2
        total += problem.lam * math.sqrt(sq)
    return total


class TestPartition:
    def test_rejects_overlap(self):
        with pytest.raises(ValueError, match="overlap"):
            BlockPartition([np.array([0, 1]), np.array([1, 2])])

    def test_rejects_gap(self):
        with pytest.raises(ValueError):
            BlockPartition([np.array([0]), np.array([2])])

    def test_rejects_empty_block(self):
        with pytest.raises(ValueError):
            BlockPartition([np.array([0]), np.array([], dtype=int)])

    @given(st.lists(st.integers(min_value=1, max_value=4), min_size=1, max_size=6),
           st.integers(0, 2 ** 31 - 1))
    @settings(max_examples=50, deadline=None)
    def test_split_join_roundtrip(self, sizes, seed):
        part = BlockPartition.from_sizes(sizes)
        rng = np.random.default_rng(seed)
        w = rng.standard_normal(part.d)
        assert np.array_equal(part.join(part.split(w)), w)


class TestObjective:
    def test_zero_weights(self):
        prob = CglProblem(
            np.array([[1.0], [1.0]]), np.array([1.0, 1.0]),
            BlockPartition.singletons(1), None, 0.7,
        )
        assert objective(prob, np.zeros(1)) == pytest.approx(1.0, abs=0)

    def test_interp_fixture_group_norm(self):
        # w = (1/3, 1/3, 1/3) interpolates, so only the penalty remains
        prob = min_norm_interp_problem(1.0)
        value = objective(prob, np.full(3, 1.0 / 3.0))
        assert value == pytest.approx((1 + math.sqrt(2)) / 3, abs=1e-12)

    def test_matches_reference_implementation(self):
        rng = np.random.default_rng(8)
        X = rng.standard_normal((8, 5))
        y = rng.standard_normal(8)
        part = BlockPartition.from_sizes([2, 2, 1])
        prob = CglProblem(X, y, part, None, 0.37)
        for _ in range(5):
            w = rng.standard_normal(5)
            assert objective(prob, w) == pytest.approx(
                reference_objective(prob, w), abs=1e-12
            )

    def test_shape_error(self):
        prob = duplicate_columns_problem()
        with pytest.raises(ValueError):
            objective(prob, np.zeros(3))


class TestKktReport:
    def test_unregularized_least_squares(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((6, 3))
        y = rng.standard_normal(6)
        prob = CglProblem(X, y, BlockPartition.from_sizes([3]), None, 0.0)
        w = np.linalg.lstsq(X, y, rcond=None)[0]
        rep = kkt_report(prob, w, DualCertificate.zeros(prob), tol=1e-8)
        assert rep.satisfied
        assert rep.max_violation <= 1e-10

    def test_duplicate_column_oracle(self):
        # objective in the fit s = a + b is (s-2)^2 + |s|, minimized at 1.5
        prob = duplicate_columns_problem()
        rep = kkt_report(prob, np.array([0.75, 0.75]), DualCertificate.zeros(prob))
        assert rep.satisfied
        assert rep.equicorrelation == (0, 1)
        assert rep.active == (0, 1)

    def test_solver_output_verifies(self):
        _, _, _, prob = gaussian_instance(11, n=8, d=2, p=3, arch="relu")
        res = solve(prob, SolverOptions(kkt_tol=1e-8))
        rep = kkt_report(prob, res.w, res.certificate, tol=1e-6)
        assert rep.satisfied

    def test_active_subset_of_equicorrelation(self):
        for seed in range(5):
            _, _, _, prob = gaussian_instance(seed, n=8, d=2, p=4, arch="gated")
            res = solve(prob, SolverOptions(kkt_tol=1e-8))
            rep = kkt_report(prob, res.w, res.certificate, tol=1e-6)
            assert rep.satisfied
            assert set(rep.active) <= set(rep.equicorrelation)

    def test_rejects_nonpositive_tol(self):
        prob = duplicate_columns_problem()
        with pytest.raises(ValueError):
            kkt_report(prob, np.zeros(2), DualCertificate.zeros(prob), tol=0.0)


class TestSolutionInvariants:
    def test_fit_and_penalty_unique_across_solutions(self):
        prob = duplicate_columns_problem()
        solutions = [np.array([0.75, 0.75]), np.array([1.5, 0.0]),
                     np.array([0.0, 1.5]), np.array([1.0, 0.5])]
        fits = [prob.X @ w for w in solutions]
        pens = [penalty_sum(prob, w) for w in solutions]
        for fit in fits[1:]:
            assert np.linalg.norm(fit - fits[0]) <= 1e-6 * (
                1 + np.linalg.norm(prob.y)
            )
        for pen in pens[1:]:
            assert abs(pen - pens[0]) <= 1e-6

    def test_penalty_bounded_by_least_squares_solution(self):
        for seed in range(4):
            _, _, _, prob = gaussian_instance(seed + 40, n=10, d=2, p=3,
                                              arch="gated")
            res = solve(prob, SolverOptions(kkt_tol=1e-8))
            w_bar = np.linalg.pinv(prob.X) @ prob.y
            assert penalty_sum(prob, res.w) <= penalty_sum(prob, w_bar) + 1e-8


class TestSupportSet:
    def test_single_solution(self):
        prob = duplicate_columns_problem()
        w = np.array([1.5, 0.0])
        assert support_set(prob, [w]) == active_set(prob, w)

    def test_union_of_vertices(self):
        prob = duplicate_columns_problem()
        assert support_set(prob, [np.array([1.5, 0.0]), np.array([0.0, 1.5])]) == (0, 1)

    def test_zero_solutions(self):
        prob = duplicate_columns_problem()
        assert support_set(prob, [np.zeros(2), np.zeros(2)]) == ()

    def test_empty_input_rejected(self):
        prob = duplicate_columns_problem()
        with pytest.raises(ValueError):
            support_set(prob, [])


class TestSerialization:
    def test_problem_roundtrip(self, tmp_path):
        _, _, _, prob = gaussian_instance(2, n=6, d=2, p=2, arch="relu")
        doc = serialize.problem_to_dict(prob)
        path = tmp_path / "problem.json"
        serialize.dump_json(doc, path)
        back = serialize.problem_from_dict(serialize.load_json(path))
        assert np.array_equal(back.X, prob.X)
        assert np.array_equal(back.y, prob.y)
        assert back.lam == prob.lam
        assert back.partition == prob.partition
        for K1, K2 in zip(back.constraints, prob.constraints):
            assert (K1 is None) == (K2 is None)
            if K1 is not None:
                assert np.array_equal(K1, K2)

    def test_schema_version_checked(self):
        doc = serialize.weights_to_dict(np.ones(3))
        doc["schema_version"] = 99
        with pytest.raises(ValueError, match="schema"):
            serialize.weights_from_dict(doc)

    def test_weights_dual_report_roundtrip(self):
        prob = duplicate_columns_problem()
        res = solve(prob)
        w2 = serialize.weights_from_dict(serialize.weights_to_dict(res.w))
        assert np.array_equal(w2, res.w)
        rho2 = serialize.dual_from_dict(serialize.dual_to_dict(res.certificate))
        assert len(rho2) == len(res.certificate)
        doc = serialize.kkt_report_to_dict(res.report)
        assert doc["satisfied"] is True
        assert doc["schema_version"] == serialize.SCHEMA_VERSION
