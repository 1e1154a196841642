import numpy as np
import pytest

from ssdrl.environment import FingerprintSample, load_dataset
from ssdrl.harness import (
    REPORT_HEADER,
    ComparisonReport,
    ConfigError,
    ExperimentConfig,
    ReportRow,
    build_splits,
    cli,
    hold_out,
    run_comparison,
    summarize,
)
from ssdrl.nn_core import make_rng

TINY = dict(rows=3, cols=3, unlabeled=12, seeds=(0,), checkpoints=(1,), vae_epochs=2, vae_hidden=8, head_hidden=4, hidden=(8,))


def row(mode, seed, epoch, start, end, reward=0.0):
    return ReportRow(mode, seed, epoch, reward, (start + end) / 2, start, end)


def test_config_defaults_and_round_trip(tmp_path):
    cfg = ExperimentConfig()
    assert cfg.checkpoints == (25, 50, 100, 150, 200)
    assert (cfg.rows, cfg.cols, cfg.labeled_per_cell, cfg.unlabeled, cfg.test_per_cell) == (8, 8, 2, 1000, 1)
    path = tmp_path / "c.cfg"
    cfg.save(path)
    assert ExperimentConfig.load(path) == cfg
    odd = ExperimentConfig(alpha=0.25, modes=("supervised",), use_s1=True, seeds=(3, 4))
    odd.save(path)
    assert ExperimentConfig.load(path) == odd


def test_config_errors_name_key(tmp_path):
    with pytest.raises(ConfigError, match="seeds"):
        ExperimentConfig(seeds=())
    with pytest.raises(ConfigError, match="checkpoints"):
        ExperimentConfig(checkpoints=(50, 25))
    with pytest.raises(ConfigError, match="bogus"):
        ExperimentConfig.from_text("bogus = 1\n")
    with pytest.raises(ConfigError, match="rows"):
        ExperimentConfig.from_text("rows = many\n")
    with pytest.raises(ConfigError, match="use_raw"):
        ExperimentConfig.from_text("use_raw = maybe\n")
    with pytest.raises(ConfigError, match=":2"):
        ExperimentConfig.from_text("# comment\nnot a pair\n")
    with pytest.raises(FileNotFoundError, match="missing.cfg"):
        ExperimentConfig.load(tmp_path / "missing.cfg")


def test_train_config_mapping():
    tc = ExperimentConfig(checkpoints=(3, 7), gamma=0.5).train_config("semi_supervised")
    assert tc.epochs == 7 and tc.gamma == 0.5 and tc.mode == "semi_supervised"


def test_splits_disjoint_and_deterministic():
    cfg = ExperimentConfig(**TINY)
    w = cfg.world()
    a_train, a_test = build_splits(cfg, 5, w)
    b_train, b_test = build_splits(cfg, 5, w)
    assert a_train == b_train and a_test == b_test
    assert len(a_test) == 9 and all(s.labeled for s in a_test)


def test_hold_out_keeps_one_per_cell():
    s = [FingerprintSample(np.full((3, 13), -50.0 - i), (0, i % 2)) for i in range(5)]
    train, test = hold_out(s + [FingerprintSample(np.full((3, 13), -70.0))], 5, make_rng(0))
    assert sorted(t.label for t in test) == [(0, 0), (0, 0), (0, 1)]
    assert {t.label for t in train} == {(0, 0), (0, 1), None}


def test_file_dataset_split(tmp_path):
    assert cli(["gen-data", "--rows", "3", "--cols", "3", "--labeled-per-cell", "2", "--unlabeled", "4", "--out", str(tmp_path)]) == 0
    cfg = ExperimentConfig(**{**TINY, "dataset": str(tmp_path / "dataset.csv")})
    train, test = build_splits(cfg, 0, cfg.world())
    assert len(test) == 9 and len(train) == 9 + 4
    cfg2 = ExperimentConfig(**{**TINY, "dataset": str(tmp_path / "dataset.csv"), "test_dataset": str(tmp_path / "test.csv")})
    train, test = build_splits(cfg2, 0, cfg2.world())
    assert len(train) == 22 and len(test) == 9


def test_report_two_rows(tmp_path):
    report = run_comparison(ExperimentConfig(**TINY), tmp_path)
    assert [(r.mode, r.seed, r.checkpoint_epoch) for r in report.rows] == [("supervised", 0, 1), ("semi_supervised", 0, 1)]
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert lines[0] == ",".join(REPORT_HEADER)
    assert len(lines) == 3
    for r in report.rows:
        assert min(r.mean_distance_m, r.start_distance_m, r.end_distance_m) >= 0
    manifest = (tmp_path / "manifest.txt").read_text()
    for key in ("gamma = 0.9", "code_version = ", "train_hash.0 = ", "test_hash.0 = ", "epoch_definition = "):
        assert key in manifest
    assert ComparisonReport.read_csv(tmp_path / "report.csv").rows == report.rows


def test_failed_cell_does_not_stop_others(monkeypatch, tmp_path):
    import ssdrl.harness as h

    real = h.run_cell

    def flaky(config, mode, seed, out_dir=None):
        if mode == "semi_supervised":
            raise RuntimeError("boom")
        return real(config, mode, seed, out_dir)

    monkeypatch.setattr(h, "run_cell", flaky)
    report = run_comparison(ExperimentConfig(**{**TINY, "seeds": (0, 1)}), tmp_path)
    assert {r.mode for r in report.rows} == {"supervised"}
    assert len(report.rows) == 2
    assert [(m, s) for m, s, _ in report.failures] == [("semi_supervised", 0), ("semi_supervised", 1)]
    assert "failed.semi_supervised.0 = RuntimeError: boom" in (tmp_path / "manifest.txt").read_text()


def test_summarize_single_row():
    r = row("supervised", 0, 5, 9.0, 3.0, reward=-1.5)
    s = summarize(ComparisonReport([r]))
    only = s.row("supervised")
    assert (only.start_distance_m, only.end_distance_m, only.mean_reward) == (9.0, 3.0, -1.5)
    assert only.difference_m == r.improvement
    assert s.reward_ratio is None
    assert "absent" in s.table()


def test_summarize_two_mode_fixture(tmp_path):
    report = ComparisonReport([row("supervised", 0, 200, 9.4, 7.4, 1.0), row("semi_supervised", 0, 200, 12.8, 4.3, 1.67)])
    s = summarize(report)
    assert s.row("supervised").difference_m == pytest.approx(2.0)
    assert s.row("semi_supervised").difference_m == pytest.approx(8.5)
    assert s.reward_ratio == pytest.approx(1.67)
    s.write_csv(tmp_path / "summary.csv")
    assert (tmp_path / "summary.csv").read_text().startswith("mode,n_seeds,checkpoint_epoch,")


def test_summarize_uses_last_checkpoint_and_means():
    rows = [row("supervised", s, e, 10.0, float(e + s)) for s in (0, 1) for e in (1, 2)]
    s = summarize(ComparisonReport(rows))
    assert s.row("supervised").checkpoint_epoch == 2
    assert s.row("supervised").end_distance_m == 2.5
    assert summarize(ComparisonReport(rows), checkpoint=1).row("supervised").end_distance_m == 1.5
    with pytest.raises(ValueError):
        summarize(ComparisonReport([]))


def test_cli_gen_data_counts(tmp_path):
    assert cli(["gen-data", "--rows", "5", "--cols", "5", "--labeled-per-cell", "2", "--unlabeled", "100", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "dataset.csv").read_text().splitlines()
    assert len(lines) == 1 + 50 * 3 + 100 * 3
    assert sum(l.startswith(",,") for l in lines) == 300
    assert len(load_dataset(tmp_path / "dataset.csv")) == 150


def test_cli_compare_with_config(tmp_path, capsys):
    cfg = tmp_path / "default.cfg"
    ExperimentConfig(**TINY).save(cfg)
    out = tmp_path / "run1"
    assert cli(["compare", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "report.csv").is_file() and (out / "manifest.txt").is_file() and (out / "summary.csv").is_file()
    assert "semi_supervised" in capsys.readouterr().out
    assert cli(["summarize", "--out", str(out)]) == 0


def test_cli_flags_override_config(tmp_path):
    cfg = tmp_path / "c.cfg"
    ExperimentConfig(**TINY).save(cfg)
    out = tmp_path / "o"
    assert cli(["compare", "--config", str(cfg), "--modes", "supervised", "--seed", "4", "--checkpoints", "1,2", "--out", str(out)]) == 0
    report = ComparisonReport.read_csv(out / "report.csv")
    assert [(r.mode, r.seed, r.checkpoint_epoch) for r in report.rows] == [("supervised", 4, 1), ("supervised", 4, 2)]


def test_cli_train_writes_model(tmp_path):
    args = ["train", "--mode", "semi_supervised", "--out", str(tmp_path)]
    for k, v in TINY.items():
        if k != "seeds":
            args += ["--" + k.replace("_", "-"), ",".join(map(str, v)) if isinstance(v, tuple) else str(v)]
    assert cli(args) == 0
    for name in ("metrics.csv", "q_head.bdrl", "q_encoder.bdrl", "vae/vae_header.txt", "report.csv", "manifest.txt"):
        assert (tmp_path / name).exists()


def test_cli_errors(tmp_path, capsys):
    assert cli(["compare", "--no-such-flag", "1"]) != 0
    assert cli(["frobnicate"]) != 0
    assert cli(["train", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path)]) != 0
    assert "nope.cfg" in capsys.readouterr().err
    assert cli(["train", "--gamma", "1.5", "--out", str(tmp_path)]) != 0
    assert "gamma" in capsys.readouterr().err
    assert cli(["summarize", "--out", str(tmp_path / "empty")]) != 0


def test_worker_pool_matches_serial(tmp_path):
    cfg = ExperimentConfig(**{**TINY, "seeds": (0, 1)})
    serial = run_comparison(cfg)
    pooled = run_comparison(ExperimentConfig(**{**TINY, "seeds": (0, 1), "workers": 2}))
    assert serial.rows == pooled.rows
