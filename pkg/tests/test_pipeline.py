import json

import numpy as np
import pytest

from omicsreg.cli import main
from omicsreg.errors import ConfigError, DataError
from omicsreg.features import FeatureMatrix, Scenario
from omicsreg.pipeline import (
    PipelineConfig,
    load_labels,
    load_manifest,
    prepared_scenario_matrix,
    run_evaluate,
    run_extract,
    run_report,
    run_select,
    run_synth,
)
from omicsreg.synthetic import SyntheticSpec

FAST_EXTRACTION = {
    "filters": ["original", "squareroot"],
    "families": ["firstorder", "glcm", "shape"],
}
SMALL_GRIDS = {"linear": {"C": [1.0, 100.0], "epsilon": [0.01]}}


def fast_config(seed=11, **overrides):
    kwargs = dict(
        seed=seed,
        n_repeats=2,
        grids=SMALL_GRIDS,
        kernel="linear",
        **FAST_EXTRACTION,
    )
    kwargs.update(overrides)
    return PipelineConfig(**kwargs)


@pytest.fixture(scope="module")
def feature_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("features")
    spec = SyntheticSpec(
        n_samples=40, n_features_per_block=15, n_informative=4, noise_sd=0.05, seed=21
    )
    run_synth(spec, out)
    return out


@pytest.fixture(scope="module")
def volume_cohort(tmp_path_factory):
    out = tmp_path_factory.mktemp("cohort")
    spec = SyntheticSpec(n_samples=4, volume_mode=True, seed=31)
    return run_synth(spec, out)["manifest"]


class TestConfig:
    def test_defaults_match_study_constants(self):
        c = PipelineConfig(seed=0)
        assert c.variance_threshold == 0.001
        assert c.correlation_threshold == 0.95
        assert c.n_nonzero == 20
        assert c.n_top == 15
        assert c.n_folds == 5
        assert c.n_repeats == 10
        assert len(c.scenarios) == 9

    def test_seed_is_mandatory(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"n_bins": 16}))
        with pytest.raises(ConfigError, match="seed"):
            PipelineConfig.from_json_file(path)

    def test_unknown_keys_rejected(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"seed": 1, "bogus": True}))
        with pytest.raises(ConfigError, match="bogus"):
            PipelineConfig.from_json_file(path)

    def test_round_trip(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({"seed": 5, "n_bins": 16, "scenarios": ["R_init"]}))
        c = PipelineConfig.from_json_file(path)
        assert c.seed == 5 and c.n_bins == 16 and c.scenarios == ("R_init",)

    def test_validation_errors(self):
        with pytest.raises(ConfigError, match="correlation"):
            PipelineConfig(seed=1, correlation_threshold=1.5)
        with pytest.raises(ConfigError, match="criterion"):
            PipelineConfig(seed=1, criterion="X_best")
        with pytest.raises(ConfigError, match="filter"):
            PipelineConfig(seed=1, filters=("unsharp",))


class TestExtract:
    def test_writes_six_blocks_plus_labels(self, volume_cohort, tmp_path):
        config = fast_config()
        written = run_extract(config, volume_cohort, tmp_path)
        assert sorted(written) == sorted(
            ["R_init", "R_intra", "R_delta", "D_init", "D_intra", "D_delta",
             "labels", "patients"]
        )
        patients = (tmp_path / "patients.csv").read_text().splitlines()
        assert patients[0] == "sample_id,patient_id"
        block = FeatureMatrix.from_csv(written["R_init"])
        assert block.n_samples == 4
        ids, labels = load_labels(written["labels"])
        assert ids == block.sample_ids
        assert np.all(labels > 0)

    def test_deterministic_rerun_byte_identical(self, volume_cohort, tmp_path):
        config = fast_config()
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        run_extract(config, volume_cohort, a_dir)
        run_extract(config, volume_cohort, b_dir)
        for name in ["R_init.csv", "D_delta.csv", "labels.csv"]:
            assert (a_dir / name).read_bytes() == (b_dir / name).read_bytes()

    def test_delta_csv_matches_recomputation(self, volume_cohort, tmp_path):
        config = fast_config()
        written = run_extract(config, volume_cohort, tmp_path)
        init = FeatureMatrix.from_csv(written["R_init"]).values
        intra = FeatureMatrix.from_csv(written["R_intra"]).values
        delta = FeatureMatrix.from_csv(written["R_delta"]).values
        ok = np.abs(init) >= 1e-8
        np.testing.assert_allclose(
            delta[ok], ((init - intra) / init)[ok], rtol=1e-6, atol=1e-9
        )

    def test_missing_file_is_data_error(self, volume_cohort, tmp_path):
        manifest = json.loads(volume_cohort.read_text())
        manifest["lesions"][0]["image_init"] = "nope.json"
        bad = tmp_path / "manifest.json"
        bad.write_text(json.dumps(manifest))
        with pytest.raises(DataError, match="missing file"):
            load_manifest(bad)

    def test_duplicate_ids_rejected(self, volume_cohort, tmp_path):
        manifest = json.loads(volume_cohort.read_text())
        manifest["lesions"].append(manifest["lesions"][0])
        bad = volume_cohort.parent / "dup_manifest.json"
        bad.write_text(json.dumps(manifest))
        with pytest.raises(DataError, match="duplicate"):
            load_manifest(bad)


class TestSelectAndEvaluate:
    def test_prepared_matrix_prunes(self, feature_dir):
        config = fast_config()
        X, y = prepared_scenario_matrix(config, feature_dir, Scenario.ALL)
        assert X.n_samples == 40
        assert 20 <= X.n_features <= 90
        assert y.shape == (40,)

    def test_select_writes_ranked_json(self, feature_dir, tmp_path):
        config = fast_config()
        path = run_select(config, feature_dir, Scenario.ALL, "X_cnt", tmp_path)
        blob = json.loads(path.read_text())
        assert blob["scenario"] == Scenario.ALL.key
        assert blob["criterion"] == "X_cnt"
        assert 1 <= len(blob["ranked"]) <= 15
        assert len(blob["iterations"]) == config.n_repeats * config.n_folds
        planted = {t["name"] for t in json.loads((feature_dir / "truth.json").read_text())["informative"]}
        assert blob["ranked"][0]["name"] in planted

    def test_select_writes_stats_heatmap_effects(self, feature_dir, tmp_path):
        config = fast_config()
        run_select(config, feature_dir, Scenario.ALL, "X_cnt", tmp_path)
        slug = "all_x_cnt"
        stats = json.loads((tmp_path / f"stats_{slug}.json").read_text())
        n_sel = len(stats["label_correlations"]["per_feature"])
        assert 1 <= n_sel <= 15
        assert "±" in stats["label_correlations"]["formatted"]
        assert "vif" in stats and len(stats["vif"]) == n_sel
        heat_lines = (tmp_path / f"heatmap_{slug}.csv").read_text().splitlines()
        assert len(heat_lines) == 1 + n_sel  # header + one row per feature
        assert heat_lines[0].count(",") == n_sel
        effects = (tmp_path / f"effects_{slug}.csv").read_text().splitlines()
        assert effects[0] == "threshold,name,cohens_d,bucket,n_below,n_above"
        thresholds = {line.split(",")[0] for line in effects[1:]}
        assert thresholds <= {"0.2", "0.4", "0.6", "0.8"}

    def test_group_by_patient_plan(self, feature_dir, tmp_path):
        config = fast_config(group_by_patient=True)
        written = run_evaluate(
            config, feature_dir, Scenario.ALL, "X_cnt", "linear", tmp_path, [3]
        )
        report = json.loads(written["reports"][0].read_text())
        # patients are paired samples: fold test sets must hold both
        # lesions of any included patient, so test counts stay even
        for sample in report["samples"]:
            assert sample["n_test"] % 2 == 0

    def test_evaluate_sweep_files(self, feature_dir, tmp_path):
        config = fast_config()
        written = run_evaluate(
            config, feature_dir, Scenario.ALL, "X_cnt", "linear", tmp_path, [2, 5]
        )
        assert len(written["reports"]) == 2
        sweep_lines = written["sweep"].read_text().splitlines()
        assert sweep_lines[0].startswith("n_features,mean_r2")
        assert len(sweep_lines) == 3
        best = json.loads(written["best"].read_text())
        assert best["best_r2"]["n_features"] in (2, 5)
        scatter = written["scatter"].read_text().splitlines()
        assert scatter[0] == "sample_id,actual,predicted,repeat,fold"
        n_cells = config.n_repeats * config.n_folds
        assert len(scatter) == 1 + 40 * config.n_repeats

    def test_report_consolidates(self, feature_dir, tmp_path):
        config = fast_config()
        run_evaluate(config, feature_dir, Scenario.R_COMBINED, "X_cnt", "linear", tmp_path, [3])
        run_evaluate(config, feature_dir, Scenario.ALL, "X_cnt", "linear", tmp_path, [3])
        written = run_report(tmp_path)
        summary = json.loads(written["json"].read_text())
        table = summary["criteria"]["X_cnt"]
        assert table["scenarios"] == [Scenario.R_COMBINED.key, Scenario.ALL.key]
        md = written["markdown"].read_text()
        assert "| Scenario |" in md and "**" in md

    def test_report_empty_dir_is_error(self, tmp_path):
        with pytest.raises(DataError, match="no evaluation results"):
            run_report(tmp_path)


class TestCLI:
    def test_synth_select_evaluate_report_chain(self, tmp_path, capsys):
        feat = tmp_path / "features"
        out = tmp_path / "results"
        config = tmp_path / "config.json"
        config.write_text(
            json.dumps(
                {
                    "seed": 42,
                    "n_repeats": 2,
                    "grids": SMALL_GRIDS,
                    "kernel": "linear",
                    **FAST_EXTRACTION,
                }
            )
        )
        assert main(
            [
                "synth", "--config", str(config), "--out", str(feat),
                "--n-samples", "35", "--n-features", "12", "--n-informative", "3",
                "--noise-sd", "0.05",
            ]
        ) == 0
        assert main(
            [
                "select", "--config", str(config), "--features", str(feat),
                "--scenario", "R_init+R_intra+R_delta", "--criterion", "X_cnt",
                "--out", str(out),
            ]
        ) == 0
        assert main(
            [
                "evaluate", "--config", str(config), "--features", str(feat),
                "--scenario", "R_init+R_intra+R_delta", "--criterion", "X_cnt",
                "--kernel", "linear", "--n-features", "3", "--out", str(out),
            ]
        ) == 0
        assert main(["report", "--out", str(out)]) == 0
        assert (out / "summary.md").exists()

    def test_missing_seed_exits_2(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path / "x")]) == 2

    def test_bad_scenario_exits_2(self, tmp_path, feature_dir):
        code = main(
            [
                "select", "--seed", "1", "--features", str(feature_dir),
                "--scenario", "R_final", "--out", str(tmp_path),
            ]
        )
        assert code == 2

    def test_missing_features_dir_exits_3(self, tmp_path):
        code = main(
            [
                "select", "--seed", "1", "--features", str(tmp_path / "nope"),
                "--scenario", "R_init", "--out", str(tmp_path),
            ]
        )
        assert code == 3

    def test_env_var_output_dir(self, tmp_path, monkeypatch):
        target = tmp_path / "env_out"
        monkeypatch.setenv("OMICSREG_OUT", str(target))
        assert main(["synth", "--seed", "7", "--n-samples", "10", "--n-features", "3",
                     "--n-informative", "1"]) == 0
        assert (target / "labels.csv").exists()

    def test_extract_cli_roundtrip(self, tmp_path):
        cohort = tmp_path / "cohort"
        spec = SyntheticSpec(n_samples=3, volume_mode=True, seed=55)
        manifest = run_synth(spec, cohort)["manifest"]
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"seed": 5, **FAST_EXTRACTION}))
        out = tmp_path / "features"
        assert main(
            ["extract", "--config", str(config), "--manifest", str(manifest), "--out", str(out)]
        ) == 0
        assert (out / "R_delta.csv").exists()
        assert (out / "labels.csv").exists()
