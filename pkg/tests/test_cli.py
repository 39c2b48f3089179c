import csv
import json

import pytest

from sphereda.cli import main

TINY = {"total_iters": 120, "source_only_iters": 60, "breakpoint_period": 30, "warmup_iters": 10}
SCENARIO = {"num_sources": 2, "known_classes": 3, "target_private": 2, "samples_per_class": 10, "dim": 6}


def write_config(path, **extra):
    cfg = {"scenario": SCENARIO, "train": TINY}
    cfg.update(extra)
    path.write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture
def config(tmp_path):
    return write_config(tmp_path / "run.json")


def breakpoints(run_dir):
    lines = (run_dir / "train_log.jsonl").read_text().splitlines()
    return [r for r in map(json.loads, lines) if r["event"] == "breakpoint"]


class TestGenerate:
    def test_openness_and_rerun(self, tmp_path):
        args = ["generate", "--sources", "3", "--known", "5", "--unknown", "3", "--seed", "7"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        meta = json.loads((tmp_path / "a" / "metadata.json").read_text())
        assert meta["openness"] == pytest.approx(0.375)
        for name in ("data.csv", "metadata.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_known_zero_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["generate", "--known", "0", "--out", str(tmp_path)])
        assert exc.value.code == 2

    def test_env_output_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SPHEREDA_OUTPUT", str(tmp_path / "root"))
        assert main(["generate", "--known", "2", "--unknown", "1", "--samples", "3", "--dim", "4"]) == 0
        assert (tmp_path / "root" / "scenario" / "data.csv").exists()


class TestTrainEval:
    def test_train_and_eval(self, tmp_path, config):
        out = tmp_path / "run"
        assert main(["train", "--config", config, "--out", str(out)]) == 0
        assert len(breakpoints(out)) == (120 - 60) // 30 + 1
        effective = json.loads((out / "config.json").read_text())
        assert effective["effective_train"]["alpha_m"] == 0.5
        assert main(["eval", str(out)]) == 0
        first = (out / "report.json").read_bytes()
        assert main(["eval", str(out)]) == 0
        assert (out / "report.json").read_bytes() == first
        report = json.loads(first)
        assert {"os_star", "unk", "os", "hos", "auroc"} <= set(report)

    def test_alpha_m_flag(self, tmp_path, config):
        out = tmp_path / "run"
        assert main(["train", "--config", config, "--alpha-m", "0.3", "--out", str(out)]) == 0
        assert all(b["alpha_c"] == pytest.approx(0.3 * b["alpha"]) for b in breakpoints(out))

    def test_no_self_training(self, tmp_path, config):
        out = tmp_path / "run"
        assert main(["train", "--config", config, "--no-self-training", "--out", str(out)]) == 0
        assert all(b["pseudo_count"] == 0 for b in breakpoints(out))

    def test_rerun_identical(self, tmp_path, config):
        for name in ("a", "b"):
            assert main(["train", "--config", config, "--seed", "4", "--out", str(tmp_path / name)]) == 0
        for name in ("checkpoint.ckpt", "train_log.jsonl"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_closed_set_mode(self, tmp_path):
        cfg = write_config(tmp_path / "run.json", scenario=dict(SCENARIO, target_private=0))
        out = tmp_path / "run"
        assert main(["train", "--config", cfg, "--out", str(out)]) == 0
        assert main(["eval", str(out), "--mode", "closed-set"]) == 0
        report = json.loads((out / "report.json").read_text())
        assert "accuracy" in report and "unk" not in report and "hos" not in report

    def test_dump_embeddings(self, tmp_path, config):
        out = tmp_path / "run"
        assert main(["train", "--config", config, "--out", str(out)]) == 0
        assert main(["eval", str(out), "--dump-embeddings"]) == 0
        rows = list(csv.reader((out / "embeddings.csv").open()))
        # 2 sources x 3 classes x 10 + target 5 classes x 10
        assert len(rows) - 1 == 60 + 50
        assert rows[0][:5] == ["split", "domain", "true_label", "pred_label", "score"]

    def test_ce_baseline(self, tmp_path, config):
        out = tmp_path / "run"
        assert main(["train", "--config", config, "--ce-baseline", "--out", str(out)]) == 0
        assert main(["eval", str(out)]) == 0
        assert "threshold" in json.loads((out / "report.json").read_text())["extra"]

    def test_bad_config(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"train": {"alpha_m": 2.0}}))
        assert main(["train", "--config", str(p), "--out", str(tmp_path / "x")]) == 2
        p.write_text("{not json")
        assert main(["train", "--config", str(p), "--out", str(tmp_path / "x")]) == 2

    def test_missing_data_is_runtime_error(self, tmp_path, config):
        assert main(["train", "--config", config, "--data", str(tmp_path / "nope"),
                     "--out", str(tmp_path / "x")]) == 1


class TestSweep:
    def read(self, path):
        return list(csv.DictReader(path.open()))

    def test_alpha_m_grid(self, tmp_path, config):
        out = tmp_path / "sweep"
        assert main(["sweep", "--config", config, "--axis", "alpha_m", "--values", "0.3", "0.5", "0.7", "1.0",
                     "--seeds", "0", "1", "2", "--out", str(out)]) == 0
        rows = self.read(out / "sweep.csv")
        assert len(rows) == 16
        assert sum(r["seed"] == "mean" for r in rows) == 4

    def test_tau_axis(self, tmp_path, config):
        out = tmp_path / "sweep"
        assert main(["sweep", "--config", config, "--axis", "tau", "--values", "0.05", "0.1",
                     "--seeds", "0", "--out", str(out)]) == 0
        means = [r for r in self.read(out / "sweep.csv") if r["seed"] == "mean"]
        assert [float(r["value"]) for r in means] == [0.05, 0.1] and all(r["hos"] for r in means)

    def test_openness_axis(self, tmp_path, config):
        out = tmp_path / "sweep"
        assert main(["sweep", "--config", config, "--axis", "target_private", "--values", "1", "3",
                     "--seeds", "0", "--out", str(out)]) == 0
        means = [r for r in self.read(out / "sweep.csv") if r["seed"] == "mean"]
        assert [float(r["openness"]) for r in means] == pytest.approx([0.25, 0.5])

    def test_parallel_matches_sequential(self, tmp_path, config):
        args = ["sweep", "--config", config, "--axis", "alpha_m", "--values", "0.4", "0.6", "--seeds", "0", "1"]
        assert main(args + ["--out", str(tmp_path / "seq")]) == 0
        assert main(args + ["--parallel", "2", "--out", str(tmp_path / "par")]) == 0
        assert (tmp_path / "seq" / "sweep.csv").read_text() == (tmp_path / "par" / "sweep.csv").read_text()


def test_report_table(tmp_path, config, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", config, "--out", str(out)]) == 0
    assert main(["eval", str(out)]) == 0
    capsys.readouterr()
    assert main(["report", str(out), "--csv", str(tmp_path / "t.csv")]) == 0
    text = capsys.readouterr().out
    assert text.splitlines()[0] == "run,mode,os_star,unk,os,hos,auroc"
    assert (tmp_path / "t.csv").read_text() == text


def test_scenario_a_train_under_two_minutes(tmp_path):
    import time

    path = tmp_path / "run.json"
    path.write_text(json.dumps({"scenario": {"seed": 0}}))
    t0 = time.perf_counter()
    assert main(["train", "--config", str(path), "--out", str(tmp_path / "run")]) == 0
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    # source-only phase ends at 2000, then every 500 through 4000
    assert [r["iter"] for r in breakpoints(tmp_path / "run")] == [2000, 2500, 3000, 3500, 4000]
