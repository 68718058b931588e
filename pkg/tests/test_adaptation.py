import numpy as np
import pytest

from ttpolicy.adaptation import (
    AdaptDataset,
    ProprioHistory,
    Regressor,
    collect_dataset,
    deserialize_regressor,
    ema_pointwise,
    estimate,
    ima_distribution,
    serialize_regressor,
    train_regressor,
)
from ttpolicy.adp import ValueModel, build_advantage, value_iteration
from ttpolicy.contraction import dist_delta, dist_uniform, dist_uniform_band
from ttpolicy.envs import HitEnv, SpringDamperEnv, env_grids
from ttpolicy.errors import DomainError
from ttpolicy.tt import Grid, SolverConfig, tt_zero


def linear_map_dataset(rng, n=4000, in_dim=12, out_dim=2):
    w = rng.standard_normal((in_dim, out_dim))
    x = rng.standard_normal((n, in_dim))
    y = x @ w
    lo = y.min(axis=0) - 1.0
    hi = y.max(axis=0) + 1.0
    return AdaptDataset(
        histories=x, alphas=y, padded=np.zeros(n, dtype=bool), env="synthetic",
        seed=0, policy_id="lin", window=3, state_dim=3, action_dim=1,
        param_lower=lo, param_upper=hi,
    )


class TestProprioHistory:
    def test_windowing_and_padding(self):
        states = [np.array([float(t), 10.0 + t]) for t in range(6)]
        actions = [np.array([100.0 + t]) for t in range(6)]
        h = ProprioHistory.from_steps(states, actions, t=2, window=4, state_dim=2, action_dim=1)
        assert h.padded
        assert len(h.data) == 4 * 3
        np.testing.assert_allclose(h.data[:6], 0.0)  # two padded slots
        np.testing.assert_allclose(h.data[6:9], [0.0, 10.0, 100.0])
        np.testing.assert_allclose(h.data[9:12], [1.0, 11.0, 101.0])
        h2 = ProprioHistory.from_steps(states, actions, t=5, window=4, state_dim=2, action_dim=1)
        assert not h2.padded
        np.testing.assert_allclose(h2.data[-3:], [4.0, 14.0, 104.0])


@pytest.fixture(scope="module")
def hit_model():
    env = HitEnv()
    grids = env_grids(env, 5, 7, 11)
    cfg = SolverConfig(eps=1e-4, r_max=40, seed=0)
    value, adv = value_iteration(env, grids, cfg, 0.99, max_iters=1, tol_vi=1e-2,
                                 n_change_samples=500, verbose=False)
    return env, adv


class TestCollectDataset:
    def test_empty(self, hit_model):
        env, adv = hit_model
        ds = collect_dataset(env, adv, n_rollouts=0, k=10, seed=0)
        assert len(ds) == 0

    def test_windowing_counts_closed_loop(self):
        env = SpringDamperEnv()
        grids = env_grids(env, 3, 9, 15)
        cfg = SolverConfig(eps=1e-3, r_max=12, seed=1)
        value, adv = value_iteration(env, grids, cfg, 0.9, max_iters=2, tol_vi=1e-6,
                                     n_change_samples=500, verbose=False)
        ds = collect_dataset(env, adv, n_rollouts=1, k=4, seed=2, horizon=10)
        # records at t = 1..9 of a 10-step rollout
        assert len(ds) == 9
        assert ds.padded[:2].all() and not ds.padded[3:].any()
        assert ds.histories.shape[1] == 4 * (2 + 1)

    def test_one_shot_one_record_per_attempt(self, hit_model):
        env, adv = hit_model
        ds = collect_dataset(env, adv, n_rollouts=7, k=10, seed=3)
        assert len(ds) == 7  # one record per instance (second attempt learns from first)
        assert ds.histories.shape[1] == 10 * (2 + 2)

    def test_determinism(self, hit_model):
        env, adv = hit_model
        a = collect_dataset(env, adv, n_rollouts=4, k=10, seed=9)
        b = collect_dataset(env, adv, n_rollouts=4, k=10, seed=9)
        assert np.array_equal(a.histories, b.histories)
        assert np.array_equal(a.alphas, b.alphas)

    def test_csv_round_trip(self, hit_model, tmp_path):
        env, adv = hit_model
        ds = collect_dataset(env, adv, n_rollouts=3, k=10, seed=4)
        path = tmp_path / "ds.csv"
        ds.save_csv(path)
        back = AdaptDataset.load_csv(path)
        np.testing.assert_allclose(back.histories, ds.histories)
        np.testing.assert_allclose(back.alphas, ds.alphas)
        assert back.env == "hit" and back.window == 10


class TestTrainRegressor:
    def test_linear_map_learned(self, rng):
        ds = linear_map_dataset(rng)
        reg, report = train_regressor(ds, epochs=300, learning_rate=2e-3, seed=0,
                                      hidden=(64, 32))
        assert report.val_mse <= 1e-3

    def test_constant_alpha(self, rng):
        x = rng.standard_normal((500, 8))
        y = np.tile([1.5, -0.5], (500, 1))
        ds = AdaptDataset(x, y, np.zeros(500, dtype=bool), env="c", seed=0,
                          policy_id="", window=2, state_dim=3, action_dim=1,
                          param_lower=np.array([0.0, -1.0]), param_upper=np.array([2.0, 0.0]))
        reg, report = train_regressor(ds, epochs=15, seed=1, hidden=(32,))
        pred = estimate(reg, x[:20])
        np.testing.assert_allclose(pred, y[:20], atol=0.05)

    def test_shuffled_labels_no_signal(self, rng):
        ds = linear_map_dataset(rng, n=2000)
        shuffled = AdaptDataset(
            ds.histories, ds.alphas[rng.permutation(len(ds))], ds.padded,
            env=ds.env, seed=ds.seed, policy_id=ds.policy_id, window=ds.window,
            state_dim=ds.state_dim, action_dim=ds.action_dim,
            param_lower=ds.param_lower, param_upper=ds.param_upper,
        )
        _, report = train_regressor(shuffled, epochs=10, seed=2, hidden=(32, 16))
        # output variance is 1 in normalized units; no learnable signal
        assert 0.5 <= report.val_mse <= 2.5

    def test_training_determinism(self, rng):
        ds = linear_map_dataset(rng, n=800)
        r1, _ = train_regressor(ds, epochs=5, seed=3, hidden=(32,))
        r2, _ = train_regressor(ds, epochs=5, seed=3, hidden=(32,))
        for w1, w2 in zip(r1.weights, r2.weights):
            assert np.abs(w1 - w2).max() <= 1e-10

    def test_report_matches_recomputation(self, rng):
        ds = linear_map_dataset(rng, n=600)
        reg, report = train_regressor(ds, epochs=5, seed=4, hidden=(32,))
        assert report.train_mse >= 0 and report.n_train + report.n_val == 600

    def test_empty_dataset_rejected(self):
        ds = AdaptDataset(np.zeros((0, 4)), np.zeros((0, 1)), np.zeros(0, dtype=bool),
                          param_lower=np.zeros(1), param_upper=np.ones(1))
        with pytest.raises(DomainError):
            train_regressor(ds)


class TestEstimate:
    def test_bounds_clamp(self, rng):
        ds = linear_map_dataset(rng, n=500)
        reg, _ = train_regressor(ds, epochs=3, seed=5, hidden=(16,))
        out = estimate(reg, rng.standard_normal((50, 12)) * 100)
        assert np.all(out >= reg.param_lower) and np.all(out <= reg.param_upper)

    def test_zero_history_finite(self, rng):
        ds = linear_map_dataset(rng, n=500)
        reg, _ = train_regressor(ds, epochs=3, seed=6, hidden=(16,))
        out = estimate(reg, np.zeros(12))
        assert np.all(np.isfinite(out))

    def test_batch_equals_single(self, rng):
        ds = linear_map_dataset(rng, n=500)
        reg, _ = train_regressor(ds, epochs=3, seed=7, hidden=(16,))
        xs = rng.standard_normal((100, 12))
        batch = estimate(reg, xs)
        for i in range(100):
            np.testing.assert_allclose(estimate(reg, xs[i]), batch[i], rtol=0, atol=1e-10)

    def test_window_mismatch(self, rng):
        ds = linear_map_dataset(rng, n=500)
        reg, _ = train_regressor(ds, epochs=2, seed=8, hidden=(16,))
        with pytest.raises(DomainError):
            estimate(reg, np.zeros(13))


class TestDistributionsFromEstimate:
    def test_full_width_band_is_dr(self):
        grid = Grid.regular([(0, 1), (2, 4)], [10, 8])
        w = np.array([10 * grid.spacing(0), 8 * grid.spacing(1)])
        d = ima_distribution([0.5, 3.0], w, grid)
        u = dist_uniform(grid)
        for a, b in zip(d.weights, u.weights):
            np.testing.assert_allclose(a, b, atol=1e-12)

    def test_one_cell_band_is_ema(self):
        grid = Grid.regular([(0, 1)], [9])
        nu = [0.37]
        band = ima_distribution(nu, [grid.spacing(0)], grid)
        point = ema_pointwise(nu, grid)
        np.testing.assert_allclose(band.weights[0], point.weights[0], atol=1e-12)

    def test_ema_is_delta(self):
        grid = Grid.regular([(0, 1)], [5])
        d = ema_pointwise([0.5], grid)
        np.testing.assert_allclose(d.weights[0], dist_delta([0.5], grid).weights[0])

    def test_out_of_bounds_estimate_clamped(self):
        grid = Grid.regular([(0, 1)], [5])
        d = ema_pointwise([1.7], grid)
        np.testing.assert_allclose(d.weights[0], [0, 0, 0, 0, 1.0])


class TestRegressorFile:
    def test_round_trip_bit_exact(self, rng, tmp_path):
        ds = linear_map_dataset(rng, n=400)
        reg, _ = train_regressor(ds, epochs=2, seed=9, hidden=(16, 8))
        path = tmp_path / "reg.bin"
        reg.save(path)
        back = Regressor.load(path)
        for w1, w2 in zip(reg.weights, back.weights):
            assert w1.tobytes() == w2.tobytes()
        for b1, b2 in zip(reg.biases, back.biases):
            assert b1.tobytes() == b2.tobytes()
        assert reg.in_mean.tobytes() == back.in_mean.tobytes()
        assert reg.param_upper.tobytes() == back.param_upper.tobytes()
        xs = rng.standard_normal((10, 12))
        np.testing.assert_array_equal(estimate(reg, xs), estimate(back, xs))

    def test_magic_check(self):
        with pytest.raises(DomainError):
            deserialize_regressor(b"XXXX" + b"\x00" * 32)
