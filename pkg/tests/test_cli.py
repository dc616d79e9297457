"""End-to-end checks for the command line interface.

Subcommands run in-process through main() against temporary
directories, so exit codes and the artifact layout are exercised
without spawning subprocesses.
"""

import csv
import json
import os

import pytest

from ctxattn import cli
from ctxattn.errors import UsageError


# ---------------------------------------------------------------------------
# override and config parsing
# ---------------------------------------------------------------------------

class TestOverrides:
    def test_qualified_override(self):
        cp = cli._new_config()
        cli.apply_overrides(cp, ["--model.hidden", "16"])
        assert cp.get("model", "hidden") == "16"

    def test_equals_form(self):
        cp = cli._new_config()
        cli.apply_overrides(cp, ["--model.hidden=48"])
        assert cp.get("model", "hidden") == "48"

    def test_unqualified_unique_key(self):
        cp = cli._new_config()
        cli.apply_overrides(cp, ["--epochs", "3"])
        assert cp.get("train", "epochs") == "3"

    def test_ambiguous_key_rejected(self):
        # dropout and seed live in both [model] and [train]
        for key in ("dropout", "seed"):
            cp = cli._new_config()
            with pytest.raises(UsageError, match="ambiguous"):
                cli.apply_overrides(cp, [f"--{key}", "1"])

    def test_unknown_key_rejected(self):
        cp = cli._new_config()
        with pytest.raises(UsageError, match="unknown config key"):
            cli.apply_overrides(cp, ["--frobnicate", "1"])

    def test_unknown_section_rejected(self):
        cp = cli._new_config()
        with pytest.raises(UsageError, match="unknown config section"):
            cli.apply_overrides(cp, ["--nosection.key", "1"])

    def test_missing_value_rejected(self):
        cp = cli._new_config()
        with pytest.raises(UsageError, match="missing value"):
            cli.apply_overrides(cp, ["--model.hidden"])

    def test_stray_token_rejected(self):
        cp = cli._new_config()
        with pytest.raises(UsageError, match="unexpected argument"):
            cli.apply_overrides(cp, ["hidden", "16"])

    def test_missing_config_file(self, tmp_path):
        with pytest.raises(UsageError, match="not found"):
            cli.load_run_config(str(tmp_path / "nope.ini"), [])

    def test_defaults_without_file(self):
        cp = cli.load_run_config(None, [])
        assert cp.get("model", "variant") == "qacg"
        assert cp.get("task", "mode") == "tabsa"


# ---------------------------------------------------------------------------
# shared artifacts: one corpus, a couple of tiny training runs
# ---------------------------------------------------------------------------

def _write_cfg(path, corpus, variant, aux="false", epochs=2):
    path.write_text(
        "[task]\n"
        f"aux_mode = {aux}\n"
        "[model]\n"
        f"variant = {variant}\n"
        "num_layers = 1\n"
        "num_heads = 1\n"
        "hidden = 8\n"
        "ffn_dim = 16\n"
        "dropout = 0.0\n"
        "[train]\n"
        f"epochs = {epochs}\n"
        "batch_size = 8\n"
        "[data]\n"
        f"train = {corpus}/train.jsonl\n"
        f"dev = {corpus}/dev.jsonl\n"
        f"test = {corpus}/test.jsonl\n",
        encoding="utf-8",
    )


@pytest.fixture(scope="session")
def cli_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    rc = cli.main(
        ["gen-data", "--task", "tabsa", "--n", "40", "--seed", "5",
         "--out", str(out)]
    )
    assert rc == 0
    return out


@pytest.fixture(scope="session")
def qacg_run(tmp_path_factory, cli_corpus):
    out = tmp_path_factory.mktemp("qacg_run")
    cfg = out / "run.cfg"
    _write_cfg(cfg, cli_corpus, "qacg")
    rc = cli.main(["train", "--config", str(cfg), "--out", str(out)])
    assert rc == 0
    return out


@pytest.fixture(scope="session")
def vanilla_run(tmp_path_factory, cli_corpus):
    out = tmp_path_factory.mktemp("vanilla_run")
    cfg = out / "run.cfg"
    _write_cfg(cfg, cli_corpus, "vanilla", epochs=1)
    rc = cli.main(["train", "--config", str(cfg), "--out", str(out)])
    assert rc == 0
    return out


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------

class TestGenData:
    def test_split_files_and_counts(self, cli_corpus):
        counts = {}
        for name in ("train", "dev", "test"):
            path = cli_corpus / f"{name}.jsonl"
            assert path.exists()
            counts[name] = sum(1 for _ in path.open(encoding="utf-8"))
        assert counts == {"train": 28, "dev": 6, "test": 6}
        assert (cli_corpus / "stats.txt").read_text(encoding="utf-8")

    def test_deterministic_rerun(self, cli_corpus, tmp_path):
        rc = cli.main(
            ["gen-data", "--task", "tabsa", "--n", "40", "--seed", "5",
             "--out", str(tmp_path)]
        )
        assert rc == 0
        for name in ("train", "dev", "test"):
            a = (cli_corpus / f"{name}.jsonl").read_bytes()
            b = (tmp_path / f"{name}.jsonl").read_bytes()
            assert a == b

    def test_bad_count_exits_2(self, tmp_path, capsys):
        rc = cli.main(["gen-data", "--n", "0", "--out", str(tmp_path)])
        assert rc == 2
        assert "error:" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

class TestTrain:
    def test_artifact_layout(self, qacg_run):
        assert (qacg_run / "config.ini").exists()
        assert (qacg_run / "checkpoints" / "best.ckpt").exists()
        assert (qacg_run / "logs" / "train.jsonl").exists()
        assert (qacg_run / "reports" / "train_summary.txt").exists()

    def test_config_echo_contents(self, qacg_run):
        text = (qacg_run / "config.ini").read_text(encoding="utf-8")
        assert "variant = qacg" in text
        assert "hidden = 8" in text

    def test_log_header_and_json_lines(self, qacg_run):
        lines = (qacg_run / "logs" / "train.jsonl").read_text(
            encoding="utf-8"
        ).splitlines()
        assert lines[0].startswith("# started ")
        events = [json.loads(l) for l in lines[1:]]
        assert all(isinstance(e, dict) for e in events)
        assert any(e.get("event") == "dev_eval" for e in events)
        assert any("step" in e for e in events)

    def test_summary_fields(self, qacg_run):
        text = (qacg_run / "reports" / "train_summary.txt").read_text(
            encoding="utf-8"
        )
        keys = {line.split(" ", 1)[0] for line in text.splitlines() if line}
        assert {"steps", "best_epoch", "best_dev_accuracy", "parameters",
                "train_instances", "dev_instances", "checkpoint"} <= keys

    def test_override_reaches_model(self, tmp_path, cli_corpus, capsys):
        cfg = tmp_path / "run.cfg"
        _write_cfg(cfg, cli_corpus, "vanilla", epochs=1)
        rc = cli.main(
            ["train", "--config", str(cfg), "--out", str(tmp_path / "run"),
             "--model.hidden=12", "--ffn_dim", "24"]
        )
        assert rc == 0
        echoed = (tmp_path / "run" / "config.ini").read_text(encoding="utf-8")
        assert "hidden = 12" in echoed
        assert "ffn_dim = 24" in echoed
        capsys.readouterr()
        rc = cli.main(
            ["inspect", "--checkpoint",
             str(tmp_path / "run" / "checkpoints" / "best.ckpt")]
        )
        assert rc == 0
        assert "hidden = 12" in capsys.readouterr().out

    def test_unknown_override_exits_1(self, tmp_path, cli_corpus, capsys):
        cfg = tmp_path / "run.cfg"
        _write_cfg(cfg, cli_corpus, "vanilla", epochs=1)
        out = tmp_path / "run"
        rc = cli.main(
            ["train", "--config", str(cfg), "--out", str(out), "--bogus", "1"]
        )
        assert rc == 1
        assert not out.exists()
        assert "unknown config key" in capsys.readouterr().err

    def test_missing_data_exits_2(self, tmp_path, capsys):
        rc = cli.main(["train", "--out", str(tmp_path / "run")])
        assert rc == 2
        assert "error:" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# eval / analyze / trace / inspect
# ---------------------------------------------------------------------------

class TestEval:
    def test_reports_written(self, qacg_run, cli_corpus, tmp_path):
        ckpt = qacg_run / "checkpoints" / "best.ckpt"
        rc = cli.main(
            ["eval", "--checkpoint", str(ckpt),
             "--data", str(cli_corpus / "test.jsonl"), "--out", str(tmp_path)]
        )
        assert rc == 0
        text = (tmp_path / "metrics_test.txt").read_text(encoding="utf-8")
        assert text.startswith("task tabsa")
        line = (tmp_path / "metrics_test.jsonl").read_text(encoding="utf-8")
        payload = json.loads(line)
        assert payload["task"] == "tabsa"
        assert {"strict_accuracy", "macro_f1", "aspect_auc",
                "sentiment_accuracy", "sentiment_auc"} <= set(payload)

    def test_vanilla_checkpoint_evaluates(self, vanilla_run, cli_corpus, tmp_path):
        ckpt = vanilla_run / "checkpoints" / "best.ckpt"
        rc = cli.main(
            ["eval", "--checkpoint", str(ckpt),
             "--data", str(cli_corpus / "dev.jsonl"), "--out", str(tmp_path)]
        )
        assert rc == 0
        assert (tmp_path / "metrics_dev.txt").exists()

    def test_missing_checkpoint_exits_2(self, cli_corpus, tmp_path, capsys):
        rc = cli.main(
            ["eval", "--checkpoint", str(tmp_path / "none.ckpt"),
             "--data", str(cli_corpus / "dev.jsonl"), "--out", str(tmp_path)]
        )
        assert rc == 2
        assert "error:" in capsys.readouterr().err


class TestAnalyze:
    def test_saliency_tables(self, qacg_run, cli_corpus, tmp_path):
        ckpt = qacg_run / "checkpoints" / "best.ckpt"
        rc = cli.main(
            ["analyze", "--checkpoint", str(ckpt),
             "--data", str(cli_corpus / "dev.jsonl"),
             "--limit", "2", "--out", str(tmp_path)]
        )
        assert rc == 0
        files = sorted(os.listdir(tmp_path))
        assert len(files) == 2
        assert files[0].startswith("saliency_000_")
        assert files[1].startswith("saliency_001_")
        with (tmp_path / files[0]).open(encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["position", "token", "self_attn",
                           "quasi_contrib", "saliency"]
        assert len(rows) > 2
        assert rows[1][1] == "[cls]"


class TestTrace:
    def test_qacg_histograms(self, qacg_run, cli_corpus, tmp_path, capsys):
        ckpt = qacg_run / "checkpoints" / "best.ckpt"
        rc = cli.main(
            ["trace", "--checkpoint", str(ckpt),
             "--data", str(cli_corpus / "dev.jsonl"),
             "--limit", "8", "--out", str(tmp_path)]
        )
        assert rc == 0
        for var in ("a_self", "a_final", "a_quasi", "lambda_a"):
            path = tmp_path / f"hist_{var}.csv"
            assert path.exists()
            with path.open(encoding="utf-8") as fh:
                rows = list(csv.reader(fh))
            assert rows[0] == ["bin_lo", "bin_hi", "count"]
            assert len(rows) == 61
            assert sum(int(r[2]) for r in rows[1:]) > 0
        out = capsys.readouterr().out
        assert "a_self:" in out and "lambda_a:" in out

    def test_vanilla_histograms_omit_quasi(self, vanilla_run, cli_corpus, tmp_path):
        ckpt = vanilla_run / "checkpoints" / "best.ckpt"
        rc = cli.main(
            ["trace", "--checkpoint", str(ckpt),
             "--data", str(cli_corpus / "dev.jsonl"),
             "--limit", "4", "--out", str(tmp_path)]
        )
        assert rc == 0
        assert (tmp_path / "hist_a_self.csv").exists()
        assert (tmp_path / "hist_a_final.csv").exists()
        assert not (tmp_path / "hist_a_quasi.csv").exists()
        assert not (tmp_path / "hist_lambda_a.csv").exists()


class TestInspect:
    def test_prints_config_and_tensors(self, qacg_run, capsys):
        ckpt = qacg_run / "checkpoints" / "best.ckpt"
        rc = cli.main(["inspect", "--checkpoint", str(ckpt)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "config:" in out
        assert "variant = qacg" in out
        assert "parameters:" in out
        assert "context vocab:" in out
        assert "token vocab:" in out
        assert "tensors:" in out
        assert "classifier.w" in out
        assert '"aux_mode": false' in out


# ---------------------------------------------------------------------------
# gradcheck and aux mode
# ---------------------------------------------------------------------------

class TestGradcheckCommand:
    def test_vanilla_passes(self, capsys):
        rc = cli.main(["gradcheck", "--variant", "vanilla"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "max relative error" in out


class TestAuxModeRun:
    def test_train_and_eval_roundtrip(self, tmp_path, cli_corpus):
        cfg = tmp_path / "run.cfg"
        _write_cfg(cfg, cli_corpus, "qacg", aux="true", epochs=1)
        out = tmp_path / "run"
        rc = cli.main(["train", "--config", str(cfg), "--out", str(out)])
        assert rc == 0
        rc = cli.main(
            ["eval", "--checkpoint", str(out / "checkpoints" / "best.ckpt"),
             "--data", str(cli_corpus / "dev.jsonl"),
             "--out", str(tmp_path / "rep")]
        )
        assert rc == 0
        payload = json.loads(
            (tmp_path / "rep" / "metrics_dev.jsonl").read_text(encoding="utf-8")
        )
        assert payload["task"] == "tabsa"


# ---------------------------------------------------------------------------
# dispatch and exit codes
# ---------------------------------------------------------------------------

class TestDispatch:
    def test_no_command_exits_1(self, capsys):
        assert cli.main([]) == 1
        capsys.readouterr()

    def test_unknown_command_exits_1(self, capsys):
        assert cli.main(["frobnicate"]) == 1
        capsys.readouterr()

    def test_help_exits_0(self, capsys):
        assert cli.main(["--help"]) == 0
        assert "gen-data" in capsys.readouterr().out
