import csv
import numpy as np
import pytest

from ttpolicy.adp import load_models
from ttpolicy.cli import main
from ttpolicy.contraction import dist_uniform
from ttpolicy.errors import ConfigError
from ttpolicy.harness import (
    ExperimentConfig,
    cmd_bench_contraction,
    cmd_compare_ma,
    cmd_eval,
    cmd_train,
    default_config,
    load_config,
    method_label,
    model_prefix,
    normalized_reward,
    parse_config_text,
    settle_step,
    w_token_to_widths,
    write_metrics_csv,
)
from ttpolicy.tt import Grid


def tiny_hit_config(out_dir, **over):
    base = dict(nodes_param=8, nodes_state=9, nodes_action=13, eps=1e-3, r_max=30,
                max_iters=1, n_instances=4, out_dir=str(out_dir), epochs=8,
                n_rollouts_dataset=30, trials=20, bench_points=50)
    base.update(over)
    return default_config("hit", **base)


@pytest.fixture(scope="module")
def trained_hit(tmp_path_factory):
    out = tmp_path_factory.mktemp("hit_models")
    config = tiny_hit_config(out)
    cmd_train(config, verbose=False)
    return config


class TestConfig:
    def test_parse_round_trip(self):
        text = """
        # comment
        env=push
        nodes_state=12
        seeds=0,1,2
        w_list=1,N/5,N
        eps=5e-4
        oracle_estimator=true
        """
        cfg = parse_config_text(text)
        assert cfg.env == "push"
        assert cfg.nodes_state == 12
        assert cfg.seeds == [0, 1, 2]
        assert cfg.w_list == ["1", "N/5", "N"]
        assert cfg.eps == 5e-4
        assert cfg.oracle_estimator is True

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            parse_config_text("frobnicate=1")

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            parse_config_text("nodes_state=abc")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "nope.cfg")

    def test_env_defaults(self):
        cfg = default_config("push")
        assert cfg.nodes_state == 20 and cfg.nodes_action == 15 and cfg.nodes_param == 10
        assert default_config("spring").gamma == 0.995

    def test_instance_seeds(self):
        cfg = ExperimentConfig(n_instances=3)
        assert cfg.instance_seeds() == [0, 1, 2]
        cfg2 = ExperimentConfig(seeds=[7, 8])
        assert cfg2.instance_seeds() == [7, 8]


class TestTokens:
    def test_w_tokens(self):
        grid = Grid.regular([(0, 1), (0, 2)], [20, 10])
        np.testing.assert_allclose(w_token_to_widths("N", grid),
                                   [20 * grid.spacing(0), 10 * grid.spacing(1)])
        np.testing.assert_allclose(w_token_to_widths("N/5", grid),
                                   [4 * grid.spacing(0), 2 * grid.spacing(1)])
        np.testing.assert_allclose(w_token_to_widths("1", grid),
                                   [grid.spacing(0), grid.spacing(1)])

    def test_method_labels(self):
        assert method_label("1") == "DA"
        assert method_label("N") == "DR"
        assert method_label("N/5") == "DC"

    def test_full_band_equals_uniform(self):
        grid = Grid.regular([(0, 1)], [10])
        from ttpolicy.harness import distribution_for_w

        d = distribution_for_w("N", [0.4], grid)
        np.testing.assert_allclose(d.weights[0], dist_uniform(grid).weights[0], atol=1e-12)

    def test_normalized_reward_direction(self):
        assert normalized_reward(-1.0, -1.0) == pytest.approx(1.0)
        assert normalized_reward(-1.0, -5.0) == pytest.approx(0.2)  # worse method -> lower


class TestTrainEval:
    def test_train_writes_artifacts(self, trained_hit):
        prefix = model_prefix(trained_hit)
        for suffix in ("_V.ttm", "_A.ttm", ".meta", "_train_report.csv"):
            assert (prefix.parent / (prefix.name + suffix)).exists()
        _, _, meta = load_models(prefix)
        assert meta["env"] == "hit"

    def test_train_deterministic(self, tmp_path):
        c1 = tiny_hit_config(tmp_path / "a")
        c2 = tiny_hit_config(tmp_path / "b")
        cmd_train(c1, verbose=False)
        cmd_train(c2, verbose=False)
        b1 = (model_prefix(c1).parent / "hit_A.ttm").read_bytes()
        b2 = (model_prefix(c2).parent / "hit_A.ttm").read_bytes()
        assert b1 == b2

    def test_eval_da_normalized_is_one(self, trained_hit):
        rows, out = cmd_eval(trained_hit, w_list=["1", "N"])
        da = [r for r in rows if r.method == "DA"]
        assert len(da) == 4
        for r in da:
            assert r.normalized_reward == pytest.approx(1.0)
        assert out.exists()
        with open(out) as f:
            header = f.readline().strip().split(",")
        assert header == ["env", "method", "w", "seed", "final_state_error",
                          "cumulative_reward", "normalized_reward", "wall_time_s"]

    def test_eval_rows_reproducible(self, trained_hit):
        rows1, _ = cmd_eval(trained_hit, w_list=["N/5"])
        rows2, _ = cmd_eval(trained_hit, w_list=["N/5"])
        for a, b in zip(rows1, rows2):
            assert a.cumulative_reward == b.cumulative_reward
            assert a.final_state_error == b.final_state_error

    def test_eval_workers_do_not_change_outputs(self, trained_hit):
        import dataclasses

        serial = cmd_eval(trained_hit, w_list=["1", "N"])[0]
        par_cfg = dataclasses.replace(trained_hit, workers=2)
        parallel = cmd_eval(par_cfg, w_list=["1", "N"])[0]
        for a, b in zip(serial, parallel):
            assert a.cumulative_reward == b.cumulative_reward
            assert a.seed == b.seed and a.w == b.w

    def test_missing_model_exits_2(self, tmp_path):
        cfg_path = tmp_path / "c.cfg"
        cfg_path.write_text(f"env=hit\nout_dir={tmp_path}/empty\n")
        assert main(["eval", "--config", str(cfg_path)]) == 2

    def test_bad_config_exits_3(self, tmp_path):
        cfg_path = tmp_path / "c.cfg"
        cfg_path.write_text("definitely_not_a_key=1\n")
        assert main(["eval", "--config", str(cfg_path)]) == 3


class TestCompareMa:
    def test_paired_rows_and_hit_impulses(self, trained_hit):
        rows, out = cmd_compare_ma(trained_hit)
        assert len(rows) == 2 * len(trained_hit.instance_seeds())
        methods = [r.method for r in rows]
        assert methods.count("EMA") == methods.count("IMA")
        with open(out) as f:
            reader = csv.reader(f)
            header = next(reader)
            assert header[-2:] == ["u0", "u1"]
            first = next(reader)
            assert len(first) == len(header)

    def test_oracle_estimator_ema_ties_da(self, trained_hit):
        import dataclasses

        cfg = dataclasses.replace(trained_hit, oracle_estimator=True)
        rows, _ = cmd_compare_ma(cfg)
        eval_rows, _ = cmd_eval(trained_hit, w_list=["1"])
        da = {r.seed: r.final_state_error for r in eval_rows}
        for r in rows:
            if r.method == "EMA":
                assert r.final_state_error == pytest.approx(da[r.seed], abs=1e-9)


class TestBench:
    def test_core_level_faster(self, trained_hit):
        rows, summary, out = cmd_bench_contraction(trained_hit)
        assert len(rows) >= 20
        assert summary["speedup"] > 1.0
        assert all(r["max_rel_disagreement"] < 1e-8 for r in rows)
        assert out.exists()


class TestSettle:
    def test_settle_step(self):
        pos = np.array([1.0, 0.5, 0.04, 0.03, 0.02])
        assert settle_step(pos) == 2
        assert settle_step(np.array([1.0, 0.5, 0.2])) is None
        assert settle_step(np.array([0.01, 0.02])) == 0


class TestMetricsCsv:
    def test_write_and_layout(self, tmp_path):
        from ttpolicy.harness import MetricsRow

        rows = [MetricsRow("hit", "DA", "1", 0, 0.1, -1.0, 1.0, 0.01)]
        path = tmp_path / "m.csv"
        write_metrics_csv(path, rows)
        lines = path.read_text(encoding="utf-8").strip().splitlines()
        assert len(lines) == 2
        assert "." in lines[1]  # decimal separator is a dot
