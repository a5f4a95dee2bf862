import itertools
import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from conftest import random_tree, single, stump_data, stump_tree, xor_data, xor_tree
from treehfd.model import Ensemble, Tree, TreeNode, stump
from treehfd.partition import axis_partitions, collect_subsets, grid_shape, locate
from treehfd.solver import (
    ORTH, SolveParams, SolverError, assemble, fill_empty_cells, fit_ensemble_hfd, fit_tree_hfd,
    solve,
)


def system(tree, X, d_I=2, d_V=math.inf):
    grids, subsets = axis_partitions(tree), collect_subsets(tree, d_I, d_V)
    return assemble(tree, X, subsets, grids), grids, subsets


def oracle_lstsq(sys):
    return scipy.linalg.lstsq(sys.dense(), sys.targets, cond=1e-12, lapack_driver="gelsy")[0]


def grids_from_beta(sys, beta):
    comps = {(): beta[0]}
    for J, blk in sys.blocks.items():
        full = np.zeros(int(np.prod(blk.shape)))
        full[blk.cells] = beta[blk.offset: blk.offset + len(blk.cells)]
        comps[J] = full.reshape(blk.shape)
    return comps


def brute_force_loss(tree, X, subsets, grids, comps):
    """Empirical loss evaluated point by point from its definition."""
    n = len(X)
    mu = {J: np.array([comps[J][locate(grids, x, J)] for x in X]) for J in subsets if J}
    total = comps[()] + sum(mu.values(), np.zeros(n))
    loss = float(np.mean((tree.predict(X) - total) ** 2))
    for J in subsets:
        for j in J:
            K = tuple(v for v in J if v != j)
            cellK = [locate(grids, x, K) for x in X]
            for A in itertools.product(*(range(s) for s in grid_shape(grids, K))):
                ind = np.array([c == A for c in cellK], dtype=float)
                pA = ind.mean()
                if pA == 0:
                    continue
                loss += float(np.mean(mu[J] * ind)) ** 2 / pA
    return loss


def test_stump_system_by_hand():
    sys, _, _ = system(stump_tree(), stump_data())
    h = math.sqrt(0.5)
    assert sys.columns == [((), 0), ((0,), 0), ((0,), 1)]
    expected = np.array([[h, h, 0], [h, 0, h], [0, 0.5, 0.5]])
    assert np.allclose(sys.dense(), expected, rtol=0, atol=1e-15)
    assert np.allclose(sys.targets, [-h, h, 0], rtol=0, atol=1e-15)
    assert sys.row_kind.tolist() == [0, 0, 1]


def test_single_signature_gives_one_fit_row():
    X = np.array([[0.1], [0.2], [0.3]])
    sys, _, _ = system(stump_tree(), X)
    fit = sys.dense()[sys.row_kind == 0]
    assert fit.shape[0] == 1
    assert fit[0, 0] == 1.0


def test_empty_data():
    with pytest.raises(ValueError):
        system(stump_tree(), np.zeros((0, 1)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 3), st.integers(5, 60),
       st.sampled_from([1, 2, 3]), st.sampled_from([1, 2, math.inf]))
def test_squared_norm_equals_loss(seed, p, depth, n, d_I, d_V):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, p, depth)
    X = np.round(rng.uniform(size=(n, p)), 2)
    sys, grids, subsets = system(t, X, d_I, d_V)
    beta = rng.normal(size=sys.n_columns)
    lhs = float(np.sum((sys.targets - sys.matrix() @ beta) ** 2))
    rhs = brute_force_loss(t, X, subsets, grids, grids_from_beta(sys, beta))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 3), st.integers(5, 60))
def test_orthogonality_row_sums(seed, p, depth, n):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, p, depth)
    X = rng.uniform(size=(n, p))
    sys, _, _ = system(t, X)
    A = sys.dense()
    ones = A @ np.ones(sys.n_columns)
    for r in np.flatnonzero(sys.row_kind == ORTH):
        nz = A[r] != 0
        # coefficients are p(k') / sqrt(p(k)) and the p(k') add up to p(k)
        pk = float(A[r, nz].sum()) ** 2
        assert ones[r] == pytest.approx(math.sqrt(pk))
        assert 0 < pk <= 1 + 1e-12
    assert np.all(sys.targets[sys.row_kind == ORTH] == 0)
    used = np.zeros(sys.n_columns, bool)
    used[sys.cols] = True
    assert used.all()
    n_cols = 1 + sum(len(b.cells) for b in sys.blocks.values())
    assert sys.n_columns == n_cols


def test_solve_stump():
    sys, _, _ = system(stump_tree(), stump_data())
    for method in ("dense", "cg"):
        beta = solve(sys, SolveParams(method=method))
        assert np.allclose(beta, [0, -1, 1], rtol=0, atol=1e-8)


def test_zero_targets_give_zero():
    t = stump(0, 0.5, 0.0, 0.0)
    sys, _, _ = system(t, stump_data())
    assert np.all(solve(sys) == 0)
    assert np.all(solve(sys, SolveParams(method="cg")) == 0)


def test_solve_xor():
    sys, _, _ = system(xor_tree(), xor_data())
    for method in ("dense", "cg"):
        comps = grids_from_beta(sys, solve(sys, SolveParams(method=method)))
        assert abs(comps[()]) < 1e-8
        assert np.abs(comps[(0,)]).max() < 1e-8 and np.abs(comps[(1,)]).max() < 1e-8
        assert np.allclose(comps[(0, 1)].ravel(), [1, -1, -1, 1], rtol=0, atol=1e-8)


def test_cg_non_convergence_reports_residual():
    rng = np.random.default_rng(0)
    t = random_tree(rng, 3, 4)
    sys, _, _ = system(t, rng.uniform(size=(200, 3)))
    with pytest.raises(SolverError) as err:
        solve(sys, SolveParams(method="cg", max_iterations=1))
    assert err.value.residual > 0


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_cg_agrees_with_dense(seed):
    rng = np.random.default_rng(seed)
    t = random_tree(rng, 3, 4)
    sys, _, _ = system(t, rng.normal(0.5, 0.3, size=(300, 3)))
    a = solve(sys, SolveParams(method="dense"))
    b = solve(sys, SolveParams(method="cg"))
    assert np.max(np.abs(a - b)) < 1e-6
    # the ridge biases both paths by about lambda / sigma_min^2; with a tight
    # tolerance CG lands on the minimal-norm least-squares point
    ref = oracle_lstsq(sys)
    b = solve(sys, SolveParams(method="cg", cg_tolerance=1e-13, ridge=1e-16))
    assert np.max(np.abs(b - ref)) < 1e-8


def test_fill_examples():
    vals = np.array([[1.0, 2.0], [3.0, np.nan]])
    out = fill_empty_cells(vals, np.array([[4, 5], [3, 0]]))
    assert out[1, 1] == 2.0  # neighbour (0, 1) holds 5 samples vs 3 for (1, 0)
    out = fill_empty_cells(np.array([7.0, np.nan, 9.0]), np.array([2, 0, 2]))
    assert out.tolist() == [7.0, 7.0, 9.0]
    full = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(fill_empty_cells(full, np.ones((2, 2))), full)


def test_fill_propagates_across_passes():
    out = fill_empty_cells(np.array([5.0, 0, 0, 0]), np.array([1, 0, 0, 0]))
    assert out.tolist() == [5.0] * 4
    counts = np.zeros((3, 3))
    counts[2, 2] = 1
    vals = np.zeros((3, 3))
    vals[2, 2] = -4.0
    assert np.all(fill_empty_cells(vals, counts) == -4.0)
    with pytest.raises(ValueError):
        fill_empty_cells(np.zeros(3), np.zeros(3))


def test_fill_tie_prefers_lower_axis():
    counts = np.array([[0, 2], [2, 9]])
    vals = np.array([[0.0, 1.0], [2.0, 3.0]])
    # (0, 0) has neighbours (1, 0) along axis 0 and (0, 1) along axis 1
    assert fill_empty_cells(vals, counts)[0, 0] == 2.0


def test_fit_tree_end_to_end():
    tc = fit_tree_hfd(stump_tree(), stump_data())
    assert tc.constant == pytest.approx(0, abs=1e-8)
    assert np.allclose(tc.tables[(0,)].beta, [-1, 1], atol=1e-8)
    tc = fit_tree_hfd(xor_tree(), xor_data())
    assert np.allclose(tc.tables[(0, 1)].beta.ravel(), [1, -1, -1, 1], atol=1e-8)
    assert tc.fit_residual < 1e-8 and tc.orth_residual < 1e-8


def test_fit_tree_fills_empty_cells():
    # data never reaches x0 >= 0.8, so that interval is filled from its neighbour
    t = Tree((TreeNode.split(0, 0, 0.5, 1, 2), TreeNode.leaf(1, 0.0),
              TreeNode.split(2, 0, 0.8, 3, 4), TreeNode.leaf(3, 1.0), TreeNode.leaf(4, 5.0)))
    X = np.array([[0.1], [0.2], [0.6], [0.7]])
    tc = fit_tree_hfd(t, X)
    beta = tc.tables[(0,)].beta
    assert beta[2] == beta[1]
    assert tc.counts[(0,)].tolist() == [2, 2, 0]


def test_ensemble_single_tree_plus_base():
    dec = fit_ensemble_hfd(single(stump_tree(), 1, base=2.0), stump_data())
    assert dec.constant == pytest.approx(2.0, abs=1e-8)
    assert np.allclose(dec.component((0,), stump_data()), [-1, -1, 1, 1], atol=1e-8)


def test_ensemble_linearity():
    X = stump_data()
    one = fit_ensemble_hfd(single(stump_tree(), 1), X)
    two = fit_ensemble_hfd(Ensemble((stump_tree(), stump_tree()), 0.0, 1), X)
    assert np.allclose(two.component((0,), X), 2 * one.component((0,), X), atol=1e-12)


def test_ensemble_dimension_mismatch():
    with pytest.raises(ValueError):
        fit_ensemble_hfd(single(stump_tree(), 2), stump_data())


def test_threads_give_identical_result():
    rng = np.random.default_rng(2)
    trees = tuple(random_tree(rng, 3, 3) for _ in range(6))
    e = Ensemble(trees, 0.1, 3)
    X = rng.uniform(size=(150, 3))
    a = fit_ensemble_hfd(e, X, threads=1)
    b = fit_ensemble_hfd(e, X, threads=3)
    assert a.constant == b.constant
    assert all(a.components[J] == b.components[J] for J in a.components)


def test_pruning_and_subset_depth():
    rng = np.random.default_rng(9)
    t = random_tree(rng, 3, 4)
    X = rng.uniform(size=(200, 3))
    tc = fit_tree_hfd(t, X, SolveParams(d_T=1))
    assert all(len(J) <= 1 for J in tc.tables)
    tc = fit_tree_hfd(t, X, SolveParams(d_V=1))
    assert len(tc.tables) <= 1
