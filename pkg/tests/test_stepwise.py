import numpy as np
import pytest

from tsfem import ClusteredDataset
from tsfem.simlab import SimSpec, generate
from tsfem.stepwise import FitConfig, enumerate_candidates, grow_path, grow_path_ltsc, order_units
from tsfem.trees import CovNode, UnitTree, encode_design
from tsfem.linfit import ols_fit

from conftest import random_dataset


def test_order_units():
    d = ClusteredDataset.from_arrays([2.0, 0.5, 1.0], ["1", "2", "3"])
    np.testing.assert_array_equal(order_units(d), [1, 2, 0])
    d = ClusteredDataset.from_arrays([1.0, 1.0, 1.0], ["1", "2", "3"])
    np.testing.assert_array_equal(order_units(d), [0, 1, 2])
    d = ClusteredDataset.from_arrays([1.0, 3.0], ["a", "a"])
    np.testing.assert_array_equal(order_units(d), [0])


def test_candidate_counts():
    d = ClusteredDataset.from_arrays(np.arange(6.0), [0, 0, 1, 1, 2, 2], np.array([1, 2, 3, 4, 1, 2.0]))
    cands = enumerate_candidates(d, CovNode(), UnitTree((0, 1, 2)), FitConfig(min_bucket=1))
    assert sum(c.tree == "covariate" for c in cands) == 3
    assert sum(c.tree == "unit" for c in cands) == 2
    assert [c.threshold for c in cands if c.tree == "covariate"] == [1.5, 2.5, 3.5]


def test_binary_single_threshold():
    d = ClusteredDataset.from_arrays(np.arange(6.0), [0] * 6, np.array([0, 1, 1, 0, 1, 0.0]))
    cands = enumerate_candidates(d, CovNode(), UnitTree((0,)), FitConfig(min_bucket=1))
    assert [c.threshold for c in cands] == [0.5]


def test_large_bucket_blocks_root_splits():
    rng = np.random.default_rng(0)
    d = random_dataset(rng, n_units=3, per_unit=(4, 4))
    cands = enumerate_candidates(d, CovNode(), UnitTree((0, 1, 2)), FitConfig(min_bucket=d.N // 2 + 1))
    assert cands == []


def test_depth_cap():
    rng = np.random.default_rng(1)
    d = random_dataset(rng, n_units=4, per_unit=(10, 10))
    cfg = FitConfig(min_bucket=2, max_depth=1, max_splits=10)
    path = grow_path(d, cfg)
    final = path.models[-1]
    assert final.cov_tree.max_depth() <= 1
    assert max(final.unit_tree.depths) <= 1


def test_constant_outcome():
    d = ClusteredDataset.from_arrays(np.full(12, 3.0), np.repeat([0, 1, 2], 4), np.arange(12.0))
    path = grow_path(d, FitConfig(min_bucket=1))
    assert path.length == 0
    assert path.deviances[0] == pytest.approx(0.0, abs=1e-20)


def test_two_units_first_split_is_unit_cut():
    rng = np.random.default_rng(2)
    unit = np.repeat([0, 1], 10)
    y = np.array([0.0, 10.0])[unit] + rng.normal(size=20)
    X = rng.normal(size=(20, 2))
    d = ClusteredDataset.from_arrays(y, unit, X)
    path = grow_path(d, FitConfig(min_bucket=1, max_splits=1))
    assert path.chosen[0].tree == "unit"
    assert path.chosen[0].cut == 1
    # brute force over every candidate agrees
    rss = {c: refit_rss(d, c) for c in enumerate_candidates(d, CovNode(), UnitTree(tuple(order_units(d))), FitConfig(min_bucket=1))}
    assert min(rss, key=rss.get) == path.chosen[0]


def refit_rss(d, cand):
    cov, ut = CovNode(), UnitTree(tuple(order_units(d)))
    if cand.tree == "covariate":
        cov = cov.split_leaf(cand.node, cand.var, cand.threshold)
    else:
        ut = ut.split(cand.node, cand.cut)
    return ols_fit(encode_design(d, cov, ut), d.y).rss


def brute_force_first_split(d):
    """Exhaustive root split search written from scratch with lstsq."""
    N = d.N
    options = []
    for k in range(d.p):
        vals = np.unique(d.X[:, k])
        for lo, hi in zip(vals[:-1], vals[1:]):
            thr = (lo + hi) / 2
            Z = np.column_stack([np.ones(N), d.X[:, k] <= thr])
            options.append((("covariate", k, thr), Z))
    means = np.array([d.y[d.unit == i].mean() for i in range(d.n)])
    order = sorted(range(d.n), key=lambda i: (means[i], i))
    for cut in range(1, d.n):
        left = np.isin(d.unit, order[:cut])
        Z = np.column_stack([left, ~left]).astype(float)
        options.append((("unit", cut), Z))
    scored = []
    for key, Z in options:
        coef, *_ = np.linalg.lstsq(Z, d.y, rcond=None)
        r = d.y - Z @ coef
        scored.append((float(r @ r), key))
    return scored


def test_first_split_matches_brute_force():
    rng = np.random.default_rng(7)
    checked = 0
    for _ in range(50):
        n = int(rng.integers(1, 4))
        p = int(rng.integers(1, 3))
        sizes = rng.integers(1, 5, size=n)
        while sizes.sum() > 12 or sizes.sum() < 3:
            sizes = rng.integers(1, 5, size=n)
        unit = np.repeat(np.arange(n), sizes)
        X = np.round(rng.normal(size=(len(unit), p)), 1)
        y = rng.normal(size=len(unit))
        d = ClusteredDataset.from_arrays(y, unit, X)
        scored = brute_force_first_split(d)
        path = grow_path(d, FitConfig(min_bucket=1, max_splits=1))
        if not scored:
            assert path.length == 0
            continue
        best = min(s for s, _ in scored)
        # enumeration order of the oracle equals the fitter's; the first minimum wins
        winner = next(key for s, key in scored if s <= best + 1e-10 * max(path.deviances[0], 1e-300))
        c = path.chosen[0]
        got = ("covariate", c.var, c.threshold) if c.tree == "covariate" else ("unit", c.cut)
        assert got[0] == winner[0] and got[1] == winner[1]
        if got[0] == "covariate":
            assert got[2] == pytest.approx(winner[2], abs=0)
        assert path.deviances[1] == pytest.approx(best, rel=1e-8, abs=1e-12)
        checked += 1
    assert checked >= 40


@pytest.mark.parametrize("seed", range(10))
def test_fast_deviance_equals_full_refit(seed):
    rng = np.random.default_rng(seed)
    d = random_dataset(rng, n_units=5, per_unit=(8, 14), p=3, binary=(2,))
    path = grow_path(d, FitConfig(min_bucket=3, max_splits=6))
    for s, model in enumerate(path.models):
        fit = ols_fit(encode_design(d, model.cov_tree, model.unit_tree), d.y)
        assert fit.rss == pytest.approx(path.deviances[s], rel=1e-8, abs=1e-12)
    # the committed split is the best among all admissible candidates of each step
    for s in range(path.length):
        prev = path.models[s]
        cands = enumerate_candidates(d, prev.cov_tree, prev.unit_tree, FitConfig(min_bucket=3))
        devs = []
        for c in cands:
            cov, ut = prev.cov_tree, prev.unit_tree
            if c.tree == "covariate":
                cov = cov.split_leaf(c.node, c.var, c.threshold)
            else:
                ut = ut.split(c.node, c.cut)
            try:
                devs.append(ols_fit(encode_design(d, cov, ut), d.y).rss)
            except Exception:
                continue
        assert path.deviances[s + 1] == pytest.approx(min(devs), rel=1e-8, abs=1e-12)


def test_path_properties_on_random_data():
    rng = np.random.default_rng(99)
    for _ in range(100):
        d = random_dataset(rng, n_units=int(rng.integers(2, 6)), per_unit=(3, 10), p=int(rng.integers(1, 4)))
        path = grow_path(d, FitConfig(min_bucket=2, max_splits=8))
        dev = np.array(path.deviances)
        assert np.all(np.diff(dev) <= 1e-9 * max(dev[0], 1.0))
        ordering = path.models[0].unit_tree.ordering
        for a, b in zip(path.models, path.models[1:]):
            assert b.unit_tree.ordering == ordering
            assert set(a.unit_tree.cuts) <= set(b.unit_tree.cuts)
            assert b.n_splits == a.n_splits + 1
            assert is_subtree(a.cov_tree, b.cov_tree)
        final = path.models[-1]
        leaf_sizes = np.bincount(final.cov_tree.assign(d.X))
        assert leaf_sizes.min() >= 2
        cluster_sizes = np.bincount(final.unit_tree.cluster_of_units()[d.unit])
        assert cluster_sizes.min() >= 2


def is_subtree(small, big):
    if small.is_leaf:
        return True
    return (
        not big.is_leaf
        and small.var == big.var
        and small.threshold == big.threshold
        and is_subtree(small.left, big.left)
        and is_subtree(small.right, big.right)
    )


def test_row_permutation_invariance():
    rng = np.random.default_rng(5)
    d = random_dataset(rng, n_units=5, per_unit=(8, 12), p=2)
    perm = rng.permutation(d.N)
    labels = [d.unit_labels[u] for u in d.unit]
    shuffled = ClusteredDataset.from_arrays(d.y[perm], [labels[r] for r in perm], d.X[perm])
    cfg = FitConfig(min_bucket=3, max_splits=6)
    a, b = grow_path(d, cfg), grow_path(shuffled, cfg)
    np.testing.assert_allclose(a.deviances, b.deviances, rtol=1e-8)
    for ca, cb in zip(a.chosen, b.chosen):
        assert ca.tree == cb.tree
        if ca.tree == "covariate":
            assert (ca.var, ca.threshold) == (cb.var, cb.threshold)
        else:
            members_a = [[d.unit_labels[u] for u in m] for m in a.models[-1].unit_tree.members()]
            members_b = [[shuffled.unit_labels[u] for u in m] for m in b.models[-1].unit_tree.members()]
            assert members_a == members_b


def test_determinism():
    rng = np.random.default_rng(6)
    d = random_dataset(rng, n_units=4, per_unit=(8, 12), p=2)
    cfg = FitConfig(min_bucket=2, max_splits=5)
    a, b = grow_path(d, cfg), grow_path(d, cfg)
    assert a.chosen == b.chosen
    assert a.deviances == b.deviances


def test_ltsc_without_covariates_is_unit_clustering():
    rng = np.random.default_rng(8)
    unit = np.repeat(np.arange(5), 6)
    y = np.array([0.0, 0.0, 3.0, 3.0, 6.0])[unit] + 0.1 * rng.normal(size=30)
    d = ClusteredDataset.from_arrays(y, unit)
    path = grow_path_ltsc(d, FitConfig(min_bucket=1, max_splits=2))
    assert [m.cluster_coef.round(0).tolist() for m in path.models[-1:]] == [[0.0, 3.0, 6.0]]


def test_ltsc_saturated_unit_tree_equals_fixed_effects():
    rng = np.random.default_rng(9)
    d = random_dataset(rng, n_units=4, per_unit=(5, 8), p=2)
    path = grow_path_ltsc(d, FitConfig(min_bucket=1, max_splits=10))
    final = path.models[-1]
    assert final.n_clusters == d.n
    Z = np.column_stack([(d.unit == i).astype(float) for i in range(d.n)] + [d.X])
    coef, *_ = np.linalg.lstsq(Z, d.y, rcond=None)
    r = d.y - Z @ coef
    assert path.deviances[-1] == pytest.approx(r @ r, rel=1e-8)


@pytest.mark.slow
def test_ltsc_recovers_three_clusters():
    from tsfem.pruning import fit_pruned

    hits = 0
    for rep in range(50):
        spec = SimSpec(3, 1)
        d, truth = generate(spec, rep)
        model = fit_pruned(d, FitConfig(model="ltsc", seed=spec.fold_seed(rep), min_bucket=int(0.1 * d.N)))
        fitted = model.unit_tree.cluster_of_units()
        true = np.unique(truth.oracle.unit_groups, return_inverse=True)[1]
        same = all(
            (fitted[a] == fitted[b]) == (true[a] == true[b]) for a in range(d.n) for b in range(a + 1, d.n)
        )
        hits += same
    assert hits >= 40
