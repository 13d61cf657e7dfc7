import json

import pytest

from gainimpute import cli
from gainimpute.ingest import parse_log


def write_config(path, **overrides):
    raw = {
        "models": ["tf"],
        "max_attempts": [2, 3],
        "synth": {
            "num_learners": 12,
            "num_questions": 4,
            "max_attempts": 3,
            "mcar_rate": 0.2,
            "seed": 3,
        },
        "folds": 2,
        "cycles": 1,
        "seed": 5,
        "model_params": {"tf": {"epochs": 50}},
        "bootstrap": 3,
        "bkt_fit": {"restarts": 1, "max_iterations": 40},
    }
    raw.update(overrides)
    path.write_text(json.dumps(raw))
    return path


class TestExitCodes:
    def test_missing_config_file(self, tmp_path, capsys):
        code = cli.main(["eval", "--config", str(tmp_path / "absent.json")])
        assert code == 2
        assert "config error" in capsys.readouterr().err

    def test_invalid_json(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert cli.main(["eval", "--config", str(bad)]) == 2

    def test_unknown_model(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json", models=["mystery"])
        assert cli.main(["eval", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2

    def test_missing_dataset_file(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "cfg.json")
        raw = json.loads(cfg.read_text())
        raw.pop("synth")
        raw["dataset"] = str(tmp_path / "none.csv")
        cfg.write_text(json.dumps(raw))
        assert cli.main(["ingest", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
        assert "data error" in capsys.readouterr().err

    def test_bad_attempt_range(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json")
        code = cli.main(
            ["eval", "--config", str(cfg), "--out", str(tmp_path / "o"),
             "--max-attempt-range", "3..1"]
        )
        assert code == 2

    def test_report_without_raw_results(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json")
        assert cli.main(["report", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3


class TestSynthCommand:
    def test_writes_parsable_records_and_truth(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json")
        out = tmp_path / "synthout"
        assert cli.main(["synth", "--config", str(cfg), "--out", str(out)]) == 0
        records = parse_log((out / "records.csv").read_text())
        assert records
        truth = json.loads((out / "synth_truth.json").read_text())
        assert len(truth["question_params"]) == 4


class TestIngestCommand:
    def test_stats_and_mapping(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json")
        out = tmp_path / "ingout"
        assert cli.main(["ingest", "--config", str(cfg), "--out", str(out)]) == 0
        stats = json.loads((out / "stats.json").read_text())
        assert stats["num_learners"] == 12
        mapping = json.loads((out / "index_map.json").read_text())
        assert len(mapping["questions"]) == 4

    def test_ingest_from_dataset_file(self, tmp_path):
        data = tmp_path / "log.csv"
        data.write_text(
            "learner_id,question_id,attempt,correct\na,q,1,1\nb,q,1,0\nb,q,2,1\n"
        )
        cfg = write_config(tmp_path / "cfg.json", dataset=str(data))
        raw = json.loads((tmp_path / "cfg.json").read_text())
        raw.pop("synth")
        (tmp_path / "cfg.json").write_text(json.dumps(raw))
        out = tmp_path / "ingout"
        assert cli.main(["ingest", "--config", str(cfg), "--out", str(out)]) == 0
        stats = json.loads((out / "stats.json").read_text())
        assert stats["num_learners"] == 2
        assert stats["observed_cells"] == 3


class TestEvalCommand:
    def test_full_run_and_overrides(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json", models=["tf", "cpd"],
                           model_params={"tf": {"epochs": 40}, "cpd": {"iterations": 5}})
        out = tmp_path / "run"
        code = cli.main(
            ["eval", "--config", str(cfg), "--out", str(out),
             "--model", "cpd", "--max-attempt-range", "2..3"]
        )
        assert code == 0
        summary = (out / "summary_rmse.csv").read_text()
        assert "cpd" in summary and "tf" not in summary
        raw = (out / "raw_rmse.csv").read_text()
        assert raw.count("\n") == 1 + 2 * 2  # header + 2 attempts x (2 folds x 1 cycle)

    def test_seed_override_changes_results(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json")
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert cli.main(["eval", "--config", str(cfg), "--out", str(out_a)]) == 0
        assert cli.main(
            ["eval", "--config", str(cfg), "--out", str(out_b), "--seed", "99"]
        ) == 0
        assert (out_a / "raw_rmse.csv").read_text() != (out_b / "raw_rmse.csv").read_text()

    def test_byte_identical_reruns(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json")
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert cli.main(["eval", "--config", str(cfg), "--out", str(out_a)]) == 0
        assert cli.main(["eval", "--config", str(cfg), "--out", str(out_b)]) == 0
        for name in ["raw_rmse.csv", "summary_rmse.csv", "sparsity.csv",
                     "plot_rmse_tf.dat", "manifest.json"]:
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


class TestReportCommand:
    def test_recomputes_summary_from_raw(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json")
        out = tmp_path / "run"
        assert cli.main(["eval", "--config", str(cfg), "--out", str(out)]) == 0
        summary_before = (out / "summary_rmse.csv").read_text()
        (out / "summary_rmse.csv").unlink()
        assert cli.main(["report", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "summary_rmse.csv").read_text() == summary_before


class TestBktAndDivergenceCommands:
    def test_bkt_outputs(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json", models=["cpd"],
                           model_params={"cpd": {"iterations": 5}})
        out = tmp_path / "bkt"
        assert cli.main(["bkt", "--config", str(cfg), "--out", str(out)]) == 0
        table = (out / "bkt_comparison.csv").read_text()
        assert table.startswith("max_attempt,original_rmse,imputed_rmse,difference")
        ttest = json.loads((out / "bkt_ttest.json").read_text())
        assert ttest["alternative"] == "imputed < original"

    def test_divergence_outputs(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json", models=["cpd"],
                           model_params={"cpd": {"iterations": 5}})
        out = tmp_path / "div"
        assert cli.main(["divergence", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "kl_per_question.csv").read_text().startswith(
            "question_id,parameter,kl"
        )
        summary = json.loads((out / "kl_summary.json").read_text())
        assert set(summary["percent_within"]) <= {"L0", "T", "G", "S"}
