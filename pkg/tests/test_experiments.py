import json

import numpy as np
import pytest

from boltzgrad.cli import main
from boltzgrad.experiments import (
    ConfigInvalid,
    ExperimentConfig,
    derive_rng,
    run,
)


def write_cfg(tmp_path, name="cfg.json", **kw):
    p = tmp_path / name
    p.write_text(json.dumps(kw))
    return p


class TestConfig:
    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigInvalid):
            ExperimentConfig.from_json('{"scenario": "htheorem", "bogus": 1}')

    def test_unknown_scenario_rejected(self):
        with pytest.raises(ConfigInvalid):
            ExperimentConfig.from_json('{"scenario": "nope"}')

    def test_missing_scenario_rejected(self):
        with pytest.raises(ConfigInvalid):
            ExperimentConfig.from_json('{"seed": 3}')

    def test_schema_version_checked(self):
        with pytest.raises(ConfigInvalid):
            ExperimentConfig.from_json('{"scenario": "htheorem", "schema_version": 99}')

    def test_scaling_warning(self):
        cfg = ExperimentConfig(scenario="chaos", n_list=(64,), eps=0.1)
        assert cfg.scaling_warnings()

    def test_eps_from_kappa(self):
        cfg = ExperimentConfig(scenario="chaos", kappa=1.0, dim=2)
        assert np.isclose(cfg.eps_for(64), 1 / 64)


class TestSeeding:
    def test_streams_deterministic_and_distinct(self):
        a = derive_rng(7, "stage", 3).random(4)
        b = derive_rng(7, "stage", 3).random(4)
        c = derive_rng(7, "stage", 4).random(4)
        d = derive_rng(7, "other", 3).random(4)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)
        assert not np.array_equal(a, d)


class TestDeterminism:
    def test_byte_identical_outputs(self, tmp_path):
        cfg = ExperimentConfig(scenario="badset-scaling", seed=13, samples=20_000)
        m1, _ = run(cfg, tmp_path / "a")
        m2, _ = run(cfg, tmp_path / "b")
        for name in m1.files:
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        assert m1.files == m2.files
        assert m1.config_hash == m2.config_hash

    def test_seed_changes_outputs(self, tmp_path):
        cfg1 = ExperimentConfig(scenario="badset-scaling", seed=13, samples=20_000)
        cfg2 = ExperimentConfig(scenario="badset-scaling", seed=14, samples=20_000)
        m1, _ = run(cfg1, tmp_path / "a")
        m2, _ = run(cfg2, tmp_path / "b")
        csvs = [n for n in m1.files if n.endswith(".csv")]
        assert any(m1.files[n] != m2.files[n] for n in csvs)


class TestCli:
    def test_list_scenarios(self, capsys):
        assert main(["list-scenarios"]) == 0
        out = capsys.readouterr().out
        assert "loschmidt" in out and "htheorem" in out

    def test_validate_ok(self, tmp_path):
        p = write_cfg(tmp_path, scenario="badset-scaling", samples=1000)
        assert main(["validate", "--config", str(p)]) == 0

    def test_invalid_config_exit_2(self, tmp_path):
        p = write_cfg(tmp_path, scenario="badset-scaling", bogus=2)
        assert main(["validate", "--config", str(p)]) == 2
        assert main(["run", "--config", str(p)]) == 2

    def test_missing_file_exit_2(self):
        assert main(["run", "--config", "/nonexistent.json"]) == 2

    def test_run_success_exit_0(self, tmp_path):
        p = write_cfg(tmp_path, scenario="badset-scaling", seed=4, samples=20_000)
        assert main(["run", "--config", str(p), "--out", str(tmp_path / "out")]) == 0
        assert (tmp_path / "out" / "summary.json").exists()
        assert (tmp_path / "out" / "manifest.json").exists()

    def test_assertion_failure_exit_4(self, tmp_path):
        # saturated radii make the log-log slope collapse to zero
        p = write_cfg(
            tmp_path,
            scenario="badset-scaling",
            seed=4,
            samples=5_000,
            eps0_list=[0.3, 0.4, 0.5],
        )
        assert main(["run", "--config", str(p), "--out", str(tmp_path / "out")]) == 4

    def test_seed_override(self, tmp_path):
        p = write_cfg(tmp_path, scenario="badset-scaling", seed=4, samples=10_000)
        assert main(
            ["run", "--config", str(p), "--out", str(tmp_path / "o1"), "--seed", "99"]
        ) == 0
        s = json.loads((tmp_path / "o1" / "summary.json").read_text())
        assert s["config"]["seed"] == 99


class TestSmokeScenarios:
    def test_minimal_lanford(self, tmp_path):
        cfg = ExperimentConfig(
            scenario="lanford", seed=1, N=64, n_list=(64,), replicas=100,
            t=0.05, grid_nodes=16, dt=0.01, v_bins=6,
        )
        manifest, summary = run(cfg, tmp_path / "lan")
        assert (tmp_path / "lan" / "lanford_marginals.csv").exists()
        assert summary["assertions"]["marginal_normalized_N64"]["passed"]

    def test_summary_structure(self, tmp_path):
        cfg = ExperimentConfig(scenario="badset-scaling", seed=2, samples=10_000)
        _, summary = run(cfg, tmp_path / "bs")
        assert set(summary) >= {"scenario", "assertions", "all_passed", "config"}
        for a in summary["assertions"].values():
            assert "passed" in a and "value" in a
