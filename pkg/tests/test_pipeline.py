"""Cohort splitting, Dice aggregation, config loading, orchestration, CLI."""

import json
import math
import os
import subprocess

import numpy as np
import pandas as pd
import pytest

from progkit.cli import main
from progkit.errors import ConfigError, DataError
from progkit.pipeline import (
    SEED_ENV_VAR,
    STAGE_ORDER,
    PipelineConfig,
    dice_scores,
    ensure_split,
    load_config,
    run_pipeline,
    split_cohort,
)
from progkit.volume import Modality, Volume


class TestSplitCohort:
    def test_small_cohort_exact_count(self):
        ids = [f"CHA-{i:03d}" for i in range(10)]
        assignment = split_cohort(ids, 0.2, seed=1)
        assert sorted(assignment) == sorted(ids)
        assert sum(v == "validation" for v in assignment.values()) == 2

    def test_multicentre_largest_remainder(self):
        # 524 patients over five uneven centres at 79/524: the total must be
        # exactly 79 and every centre within one patient of its proportion.
        sizes = {"CHUM": 65, "CHUS": 72, "HGJ": 92, "HMR": 101, "CHUP": 194}
        ids = [f"{c}-{i:03d}" for c, n in sizes.items() for i in range(n)]
        frac = 79 / 524
        assignment = split_cohort(ids, frac, seed=2)
        val = [pid for pid, v in assignment.items() if v == "validation"]
        assert len(val) == 79
        for centre, n in sizes.items():
            got = sum(pid.startswith(centre + "-") for pid in val)
            assert abs(got - frac * n) < 1.0, centre

    def test_assignment_values(self):
        ids = [f"A-{i}" for i in range(6)] + [f"B-{i}" for i in range(7)]
        assignment = split_cohort(ids, 0.3, seed=3)
        assert set(assignment.values()) == {"train", "validation"}

    def test_deterministic_by_seed(self):
        ids = [f"C-{i:03d}" for i in range(40)]
        assert split_cohort(ids, 0.25, seed=4) == split_cohort(ids, 0.25, seed=4)
        assert split_cohort(ids, 0.25, seed=4) != split_cohort(ids, 0.25, seed=5)

    def test_validation(self):
        with pytest.raises(DataError, match="empty"):
            split_cohort([], 0.2, seed=0)
        with pytest.raises(DataError, match="duplicates"):
            split_cohort(["A-1", "A-1"], 0.2, seed=0)
        with pytest.raises(DataError, match="malformed"):
            split_cohort(["A-1", "nodash"], 0.2, seed=0)
        with pytest.raises(DataError, match="malformed"):
            split_cohort(["A-1", "B-"], 0.2, seed=0)
        with pytest.raises(DataError, match="malformed"):
            split_cohort(["A-1", "-7"], 0.2, seed=0)
        with pytest.raises(ValueError, match="val_frac"):
            split_cohort(["A-1", "A-2"], 1.5, seed=0)


def mask_volume(data):
    return Volume(
        data=np.asarray(data, dtype=np.float32),
        spacing_mm=(1.0, 1.0, 1.0),
        origin_mm=(0.0, 0.0, 0.0),
        modality=Modality.MASK,
    )


def labelled(shape, **counts):
    """Volume with the first N raster voxels set per label, e.g. c1=3."""
    data = np.zeros(shape)
    flat = data.ravel()
    offset = 0
    for name, n in counts.items():
        flat[offset : offset + n] = int(name[1:])
        offset += n
    return mask_volume(data)


class TestDiceScores:
    def test_hand_case(self):
        # pred class 1 on 4 voxels, truth on 6, 3 shared: 2*3/(4+6) = 0.6.
        pred = labelled((2, 3, 3), c1=4)
        truth_vol = labelled((2, 3, 3), c1=6)
        truth_vol.data.ravel()[:1] = 0  # knock out one shared voxel
        # now truth has voxels 1..5 as class 1, pred 0..3: shared = 3 of 4
        scores = dice_scores([pred], [truth_vol])
        assert scores["dice_1"] == pytest.approx(2 * 3 / (4 + 5))
        assert scores["dice_2"] == 1.0
        assert scores["aggregated"] == pytest.approx((scores["dice_1"] + 1.0) / 2)

    def test_ratio_of_sums_not_mean_of_ratios(self):
        # Patient A: 1 shared of pred 1 / truth 2; patient B: 2 shared of
        # pred 3 / truth 2. Pooled: 2*(1+2)/(3+4) != mean of per-patient.
        pa = labelled((1, 2, 3), c1=1)
        ta = labelled((1, 2, 3), c1=2)
        pb = labelled((1, 2, 3), c1=3)
        tb = labelled((1, 2, 3), c1=2)
        scores = dice_scores([pa, pb], [ta, tb], classes=(1,))
        assert scores["dice_1"] == pytest.approx(2 * (1 + 2) / ((1 + 2) + (3 + 2)))

    def test_perfect_and_absent(self):
        vol = labelled((2, 2, 2), c1=2, c2=3)
        scores = dice_scores([vol], [vol])
        assert scores == {"dice_1": 1.0, "dice_2": 1.0, "aggregated": 1.0}
        empty = mask_volume(np.zeros((2, 2, 2)))
        assert dice_scores([empty], [empty])["aggregated"] == 1.0

    def test_validation(self):
        vol = mask_volume(np.zeros((2, 2, 2)))
        with pytest.raises(ValueError, match="counts differ"):
            dice_scores([vol], [vol, vol])
        with pytest.raises(ValueError, match="at least one"):
            dice_scores([], [])
        other = mask_volume(np.zeros((2, 2, 3)))
        with pytest.raises(ValueError, match="shapes differ"):
            dice_scores([vol], [other])


BASE = {"ehr_csv": "cohort.csv", "stages": "survival"}


class TestLoadConfig:
    def test_defaults_and_overrides(self):
        cfg = load_config(None, dict(BASE, epochs="25", lr="0.002"))
        assert cfg.epochs == 25
        assert cfg.lr == 0.002
        assert cfg.stages == ("survival",)
        assert cfg.out_dir == "out"

    def test_json_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"ehr_csv": "e.csv", "stages": ["survival"], "val_frac": 0.25}))
        cfg = load_config(str(path))
        assert cfg.ehr_csv == "e.csv"
        assert cfg.val_frac == 0.25

    def test_overrides_beat_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(dict(BASE, epochs=10)))
        assert load_config(str(path), {"epochs": 99}).epochs == 99

    def test_tuple_coercion(self):
        cfg = load_config(None, dict(BASE, ct_clip="-100,100", patch_size="24 24 24"))
        assert cfg.ct_clip == (-100.0, 100.0)
        assert cfg.patch_size == (24, 24, 24)

    def test_bool_coercion(self):
        cfg = load_config(None, dict(BASE, svm_standardize="no", emit_profiles="true"))
        assert cfg.svm_standardize is False
        assert cfg.emit_profiles is True
        with pytest.raises(ConfigError, match="boolean"):
            load_config(None, dict(BASE, emit_profiles="maybe"))

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="learning_rate"):
            load_config(None, dict(BASE, learning_rate=0.1))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(str(tmp_path / "nope.json"))

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_config(str(path))
        path.write_text("[1, 2]")
        with pytest.raises(ConfigError, match="JSON object"):
            load_config(str(path))

    def test_malformed_values(self):
        with pytest.raises(ConfigError, match="integer"):
            load_config(None, dict(BASE, epochs="many"))
        with pytest.raises(ConfigError, match="number"):
            load_config(None, dict(BASE, lr="fast"))

    def test_seed_env_var(self, monkeypatch):
        monkeypatch.setenv(SEED_ENV_VAR, "100")
        cfg = load_config(None, dict(BASE))
        assert (cfg.seed_split, cfg.seed_svm, cfg.seed_neural) == (100, 101, 102)
        monkeypatch.setenv(SEED_ENV_VAR, "ten")
        with pytest.raises(ConfigError, match=SEED_ENV_VAR):
            load_config(None, dict(BASE))

    def test_validate_rules(self):
        with pytest.raises(ConfigError, match="ehr_csv"):
            load_config(None, {"stages": "survival"})
        with pytest.raises(ConfigError, match="unknown stages"):
            load_config(None, dict(BASE, stages="survival,frobnicate"))
        with pytest.raises(ConfigError, match="val_frac"):
            load_config(None, dict(BASE, val_frac="0.0"))
        with pytest.raises(ConfigError, match="model"):
            load_config(None, dict(BASE, model="perceptron"))
        with pytest.raises(ConfigError, match="ensemble_mode"):
            load_config(None, dict(BASE, ensemble_mode="max"))
        with pytest.raises(ConfigError, match="workers"):
            load_config(None, dict(BASE, workers="-1"))
        with pytest.raises(ConfigError, match="image_dir"):
            load_config(None, {"ehr_csv": "e.csv", "stages": "localize"})


class TestEnsureSplit:
    def test_creates_and_reuses(self, tmp_path):
        ehr = tmp_path / "ehr.csv"
        pd.DataFrame(
            {
                "patient_id": [f"CH-{i:02d}" for i in range(10)],
                "age": np.linspace(50, 70, 10),
                "time": np.linspace(1, 10, 10),
                "event": [1] * 10,
            }
        ).to_csv(ehr, index=False)
        cfg = PipelineConfig(ehr_csv=str(ehr), out_dir=str(tmp_path / "out"), stages=("survival",))
        first = ensure_split(cfg)
        assert os.path.exists(tmp_path / "out" / "split.json")
        # A second call reads the saved file instead of resplitting.
        ehr.unlink()
        assert ensure_split(cfg) == first

    def test_missing_ehr(self, tmp_path):
        cfg = PipelineConfig(ehr_csv=str(tmp_path / "none.csv"), out_dir=str(tmp_path / "out"))
        with pytest.raises(DataError, match="EHR CSV"):
            ensure_split(cfg)


class TestRunPipeline:
    def test_failure_statuses_and_manifest(self, tmp_path):
        cfg = PipelineConfig(
            ehr_csv=str(tmp_path / "missing.csv"),
            out_dir=str(tmp_path / "out"),
            stages=("survival", "ensemble"),
        )
        result = run_pipeline(cfg)
        assert result.exit_code == 3
        assert result.stage_status["localize"] == "disabled"
        assert result.stage_status["survival"].startswith("failed:")
        assert result.stage_status["ensemble"] == "skipped: upstream failure"
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["format_version"] == 1
        assert manifest["stages"] == result.stage_status
        assert manifest["config"]["out_dir"] == str(tmp_path / "out")

    def test_runtime_failure_exit_code(self, tmp_path):
        # Single-row risk tables reach the ensembling math, which needs at
        # least two patients; that ValueError is a stage failure, not a
        # data-discovery one.
        out = tmp_path / "out"
        (out / "survival").mkdir(parents=True)
        (out / "neural").mkdir(parents=True)
        pd.DataFrame(
            {"patient_id": ["A-1"], "split": ["train"], "weibull_risk": [0.3], "cox_risk": [0.2]}
        ).to_csv(out / "survival" / "risks.csv", index=False)
        pd.DataFrame({"patient_id": ["A-1"], "neural_risk": [0.5]}).to_csv(
            out / "neural" / "risks.csv", index=False
        )
        cfg = PipelineConfig(
            ehr_csv=str(tmp_path / "unused.csv"), out_dir=str(out), stages=("ensemble",)
        )
        result = run_pipeline(cfg)
        assert result.exit_code == 4
        assert result.stage_status["ensemble"].startswith("failed: ValueError")

    def test_ensemble_stage_success(self, tmp_path):
        out = tmp_path / "out"
        (out / "survival").mkdir(parents=True)
        (out / "neural").mkdir(parents=True)
        ids = [f"CH-{i}" for i in range(6)]
        splits = ["train"] * 3 + ["validation"] * 3
        rng = np.random.default_rng(6)
        pd.DataFrame(
            {
                "patient_id": ids,
                "split": splits,
                "weibull_risk": rng.normal(size=6),
                "cox_risk": rng.normal(size=6),
            }
        ).to_csv(out / "survival" / "risks.csv", index=False)
        pd.DataFrame({"patient_id": ids, "neural_risk": rng.normal(size=6)}).to_csv(
            out / "neural" / "risks.csv", index=False
        )
        ehr = tmp_path / "ehr.csv"
        pd.DataFrame(
            {
                "patient_id": ids,
                "age": np.linspace(55, 65, 6),
                "time": [3.0, 1.0, 4.0, 2.0, 5.0, 6.0],
                "event": [1, 1, 1, 1, 1, 0],
            }
        ).to_csv(ehr, index=False)
        cfg = PipelineConfig(ehr_csv=str(ehr), out_dir=str(out), stages=("ensemble",))
        result = run_pipeline(cfg)
        assert result.exit_code == 0
        assert result.stage_status["ensemble"] == "ok"
        risks = pd.read_csv(out / "ensemble" / "risks.csv")
        assert list(risks["patient_id"]) == ids
        assert "ensemble_risk" in risks.columns
        metrics = json.loads((out / "ensemble" / "metrics.json").read_text())
        assert metrics["mode"] == "zscore_mean"
        assert 0.0 <= metrics["ensemble_val_cindex"] <= 1.0


class TestCli:
    def test_missing_config_exits_2(self, tmp_path, capsys):
        assert main(["run", "--config", str(tmp_path / "nope.json")]) == 2
        assert "configuration error" in capsys.readouterr().err

    def test_bad_override_exits_2(self, capsys):
        assert main(["run", "--set", "oops"]) == 2
        assert "key=value" in capsys.readouterr().err

    def test_unknown_key_exits_2(self, capsys):
        assert main(["split", "--set", "nope=1"]) == 2
        assert "nope" in capsys.readouterr().err

    def test_missing_data_exits_3(self, tmp_path, capsys):
        code = main(
            [
                "survival",
                "--set",
                f"ehr_csv={tmp_path / 'absent.csv'}",
                "--set",
                "stages=survival",
                "--out",
                str(tmp_path / "out"),
            ]
        )
        assert code == 3
        assert "data error" in capsys.readouterr().err

    def test_synth_and_split(self, tmp_path, capsys):
        cohort = str(tmp_path / "cohort")
        assert main(["synth", "--out", cohort, "--patients", "6", "--seed", "1"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert len(doc["patients"]) == 6
        assert os.path.exists(os.path.join(cohort, "ehr.csv"))

        out = str(tmp_path / "out")
        code = main(
            [
                "split",
                "--set",
                f"ehr_csv={cohort}/ehr.csv",
                "--set",
                "stages=survival",
                "--out",
                out,
            ]
        )
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["counts"]["train"] + doc["counts"]["validation"] == 6
        assert os.path.exists(os.path.join(out, "split.json"))

    def test_seed_flag_sets_all_seeds(self, tmp_path, capsys):
        # Same cohort, same --seed: the split must be identical across runs.
        cohort = str(tmp_path / "cohort")
        ids = [f"CH-{i:02d}" for i in range(12)]
        os.makedirs(cohort)
        pd.DataFrame(
            {
                "patient_id": ids,
                "age": np.linspace(50, 70, 12),
                "time": np.linspace(1, 12, 12),
                "event": [1] * 12,
            }
        ).to_csv(os.path.join(cohort, "ehr.csv"), index=False)
        docs = []
        for sub in ("x", "y"):
            code = main(
                [
                    "split",
                    "--seed",
                    "42",
                    "--set",
                    f"ehr_csv={cohort}/ehr.csv",
                    "--set",
                    "stages=survival",
                    "--out",
                    str(tmp_path / sub),
                ]
            )
            assert code == 0
            docs.append(json.loads(capsys.readouterr().out))
        assert docs[0]["assignment"] == docs[1]["assignment"]

    def test_console_script_help(self):
        proc = subprocess.run(
            ["progkit", "--help"], capture_output=True, text=True, timeout=60
        )
        assert proc.returncode == 0
        for command in ("synth", "run", *STAGE_ORDER):
            assert command in proc.stdout
