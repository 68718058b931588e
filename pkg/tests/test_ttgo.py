import numpy as np
import pytest
from scipy.stats import chisquare

from ttpolicy.errors import DomainError
from ttpolicy.tt import Grid, TensorTrain, dense_tensor, tt_const, tt_scale
from ttpolicy.ttgo import (
    OptimizeReport,
    PolicyRetriever,
    ttgo_argmax,
    ttgo_policy_query,
    ttgo_policy_query_batch,
    ttgo_sample,
)

from .conftest import random_tt


def separable_tt(factors, bounds=None):
    grids = [np.linspace(*b, len(f)) for f, b in zip(factors, bounds or [(0, 1)] * len(factors))]
    cores = [np.asarray(f, dtype=float).reshape(1, -1, 1) for f in factors]
    return TensorTrain(cores, Grid(grids))


class TestArgmax:
    def test_separable_concave(self):
        # exp(-sum (x_k - c_k)^2) factorizes; optimum at nearest grid nodes to c
        centers = [0.31, 0.62, 0.48]
        grids = [np.linspace(0, 1, 21)] * 3
        factors = [np.exp(-((g - c) ** 2) * 8) for g, c in zip(grids, centers)]
        tt = separable_tt(factors)
        rep = ttgo_argmax(tt, n_candidates=50, refine=True, seed=0)
        expected = tuple(int(np.argmin(np.abs(g - c))) for g, c in zip(grids, centers))
        assert rep.best_index == expected

    def test_constant_tt(self):
        g = Grid.regular([(0, 1)] * 2, [5, 5])
        rep = ttgo_argmax(tt_const(g, -3.0), n_candidates=10, seed=1)
        assert rep.best_value == pytest.approx(-3.0)

    def test_vs_bruteforce_random(self, rng):
        tt = random_tt(rng, (20, 20, 20), (6, 6))
        rep = ttgo_argmax(tt, n_candidates=100, refine=True, seed=2)
        dense = dense_tensor(tt)
        best, worst = dense.max(), dense.min()
        assert rep.best_value >= best - 1e-3 * (best - worst)

    def test_report_value_matches_eval(self, rng):
        tt = random_tt(rng, (10, 10), (4,))
        rep = ttgo_argmax(tt, seed=3)
        assert rep.best_value == pytest.approx(tt.eval(rep.best_point), abs=1e-12)

    def test_candidate_dominance(self, rng):
        tt = random_tt(rng, (15, 15, 15), (5, 5))
        rep = ttgo_argmax(tt, n_candidates=60, refine=False, seed=4)
        # every candidate it evaluated is <= the reported best
        assert rep.best_value >= dense_tensor(tt).min()
        assert isinstance(rep, OptimizeReport)
        assert rep.candidates_evaluated >= 1

    def test_refine_monotone(self, rng):
        for seed in range(5):
            tt = random_tt(rng, (12, 12, 12), (5, 5))
            off = ttgo_argmax(tt, n_candidates=20, refine=False, seed=seed)
            on = ttgo_argmax(tt, n_candidates=20, refine=True, seed=seed)
            assert on.best_value >= off.best_value

    def test_scale_invariance(self, rng):
        tt = random_tt(rng, (14, 14, 14), (4, 4))
        a = ttgo_argmax(tt, n_candidates=40, refine=True, seed=5)
        b = ttgo_argmax(tt_scale(tt, 7.5), n_candidates=40, refine=True, seed=5)
        assert a.best_index == b.best_index


class TestPolicyQuery:
    def test_quadratic_tracking(self):
        # A(x, u) = -(u - x)^2 on a shared grid: best u is the node nearest x
        g = np.linspace(0, 1, 21)
        grid = Grid([g, g])
        a = -((g[:, None] - g[None, :]) ** 2)  # a[i, j] = -(u_j - x_i)^2
        u, s, vt = np.linalg.svd(a, full_matrices=False)
        r = 3
        tt = TensorTrain([(u[:, :r] * s[:r])[None, :, :], vt[:r][:, :, None]], grid, validate=False)
        # fix x on a node; optimal u equals that node
        act, val = ttgo_policy_query(tt, np.array([g[7]]), seed=0)
        assert act[0] == pytest.approx(g[7])
        assert val == pytest.approx(0.0, abs=1e-9)

    def test_matches_exhaustive_scan(self, rng):
        tt = random_tt(rng, (9, 8, 50), (5, 5))
        x = np.array([0.3, 0.55])
        act, val = ttgo_policy_query(tt, x, seed=1)
        suffix = tt.eval_partial(x)
        scan = np.array([suffix.element((j,)) for j in range(50)])
        assert val == pytest.approx(scan.max(), abs=1e-12)
        assert act[0] == pytest.approx(tt.grid.points[2][int(np.argmax(scan))])

    def test_batch_equals_per_state(self, rng):
        tt = random_tt(rng, (7, 7, 30), (4, 4))
        xs = rng.uniform(0.05, 0.95, size=(25, 2))
        us, vals = ttgo_policy_query_batch(tt, xs, seed=2)
        for i in range(25):
            u, v = ttgo_policy_query(tt, xs[i], seed=2)
            assert v == vals[i]
            assert np.array_equal(u, us[i])

    def test_retriever_batch_equals_single(self, rng):
        tt = random_tt(rng, (7, 7, 30), (4, 4))
        retr = PolicyRetriever(tt, 2, seed=3)
        xs = rng.uniform(0.05, 0.95, size=(40, 2))
        us, vals = retr.query_batch(xs)
        suffixes = [tt.eval_partial(x) for x in xs]
        for i, sfx in enumerate(suffixes):
            scan = np.array([sfx.element((j,)) for j in range(30)])
            assert vals[i] == pytest.approx(scan.max(), abs=1e-11)

    def test_sampled_path_large_action_grid(self, rng):
        # force the sampling path with a > threshold action grid
        tt = random_tt(rng, (5, 12, 12, 12), (4, 4, 4))
        retr = PolicyRetriever(tt, 1, n_candidates=80, refine=True, seed=4, exhaustive_threshold=100)
        assert not retr.exhaustive
        x = np.array([0.4])
        u, val = retr.query(x)
        suffix = tt.eval_partial(x)
        dense = dense_tensor(suffix)
        gap = dense.max() - val
        assert gap <= 0.05 * (dense.max() - dense.min())

    def test_out_of_bounds_state(self, rng):
        tt = random_tt(rng, (6, 6), (3,))
        with pytest.raises(DomainError):
            ttgo_policy_query(tt, np.array([1.7]))

    def test_greedy_value_consistency(self, rng):
        tt = random_tt(rng, (8, 8, 20, 20), (5, 5, 5))
        x = np.array([0.25, 0.8])
        u, val = ttgo_policy_query(tt, x, seed=5)
        assert val == pytest.approx(tt.eval(np.concatenate([x, u])), abs=1e-11)


class TestSample:
    def test_one_hot_low_temperature(self):
        g = Grid.regular([(0, 1)] * 2, [6, 6])
        cores = [np.zeros((1, 6, 1)), np.zeros((1, 6, 1))]
        cores[0][0, 2, 0] = 1.0
        cores[1][0, 4, 0] = 1.0
        tt = TensorTrain(cores, g)
        out = ttgo_sample(tt, 50, temperature=1e-3, seed=0)
        assert np.all(out == np.array([2, 4]))

    def test_separable_marginals_chisquare(self):
        nx, ny = 12, 9
        fx = np.linspace(0.5, 2.0, nx)
        fy = np.cos(np.linspace(0, 1, ny)) + 1.2
        tt = separable_tt([fx, fy])
        n = 100_000
        out = ttgo_sample(tt, n, temperature=1.0, seed=1)
        # sampling law is the squared factor, normalized per dimension
        for dim, f in ((0, fx), (1, fy)):
            expected = f**2 / np.sum(f**2)
            counts = np.bincount(out[:, dim], minlength=len(f))
            stat, pvalue = chisquare(counts, expected * n)
            assert pvalue > 1e-4

    def test_high_temperature_flattens(self):
        f = np.array([1.0, 5.0, 1.0, 1.0])
        tt = separable_tt([f])
        out = ttgo_sample(tt, 40_000, temperature=1e6, seed=2)
        counts = np.bincount(out[:, 0], minlength=4) / 40_000
        assert np.all(np.abs(counts - 0.25) < 0.02)

    def test_zero_tensor_warns_uniform(self):
        g = Grid.regular([(0, 1)], [5])
        tt = TensorTrain([np.zeros((1, 5, 1))], g)
        with pytest.warns(RuntimeWarning, match="uniform"):
            out = ttgo_sample(tt, 1000, seed=3)
        counts = np.bincount(out[:, 0], minlength=5)
        assert counts.min() > 100

    def test_bad_args(self, rng):
        tt = random_tt(rng, (4,), ())
        with pytest.raises(DomainError):
            ttgo_sample(tt, 0)
        with pytest.raises(DomainError):
            ttgo_sample(tt, 10, temperature=0.0)
