import numpy as np
import pytest

from fluentforge import cli
from fluentforge import config as rc
from fluentforge import corpus as cp
from fluentforge import stutterzero as sz
from fluentforge import training as tr


def run(*argv):
    return cli.main(list(argv))


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("corpus")
    assert run("synth", "--out", str(path), "--n", "4", "--seed", "11") == 0
    return path


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory, corpus_dir):
    out = tmp_path_factory.mktemp("run")
    code = run("train", "--model", "zero", "--corpus", str(corpus_dir),
               "--out", str(out), "--epochs", "1",
               "--config", str(_mini_config(tmp_path_factory)))
    assert code == 0
    return out


def _mini_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "mini.cfg"
    path.write_text(
        "# reduced dimensions for fast tests\n"
        "zero.n_mels = 32\nzero.conv_channels = 8, 16\nzero.conv_lstm_channels = 4\n"
        "zero.encoder_hidden = 32\nzero.prenet_dims = 64, 32\nzero.decoder_hidden = 64\n"
        "zero.attention_dim = 32\nzero.location_filters = 8\nzero.embed_dim = 32\n"
        "zero.transcript_hidden = 64\ntrain.eval_interval = 1000000\nseed = 7\n")
    return path


class TestSynth:
    def test_manifest_row_count(self, corpus_dir):
        rows = (corpus_dir / "manifest.tsv").read_text().strip().split("\n")
        assert len(rows) == 4

    def test_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run("synth", "--out", str(a), "--n", "5", "--seed", "3", "--balance") == 0
        assert run("synth", "--out", str(b), "--n", "5", "--seed", "3", "--balance") == 0
        assert (a / "manifest.tsv").read_bytes() == (b / "manifest.tsv").read_bytes()
        name = "sample0000_stuttered.wav"
        assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_n_zero_valid(self, tmp_path):
        out = tmp_path / "empty"
        assert run("synth", "--out", str(out), "--n", "0", "--seed", "0") == 0
        assert (out / "manifest.tsv").read_text() == ""

    def test_balance_counts_within_one(self, tmp_path):
        out = tmp_path / "bal"
        assert run("synth", "--out", str(out), "--n", "25", "--seed", "1",
                   "--balance") == 0
        counts = {}
        for line in (out / "manifest.tsv").read_text().strip().split("\n"):
            for kind in line.split("\t")[4].split(","):
                counts[kind] = counts.get(kind, 0) + 1
        assert max(counts.values()) - min(counts.values()) <= 1


class TestTrainCommand:
    def test_artifacts_written(self, trained_dir):
        assert (trained_dir / "checkpoint.ckpt").exists()
        assert (trained_dir / "history.csv").exists()
        assert (trained_dir / "resolved_config.txt").exists()

    def test_missing_corpus_exit_io(self, tmp_path):
        code = run("train", "--model", "zero", "--corpus", str(tmp_path / "nope"),
                   "--out", str(tmp_path / "out"), "--epochs", "1")
        assert code == cli.EXIT_IO

    def test_usage_error_exit_two(self):
        with pytest.raises(SystemExit) as err:
            run("train", "--model", "bogus", "--corpus", "x", "--out", "y")
        assert err.value.code == 2

    def test_resolved_config_reparses(self, trained_dir):
        cfg = rc.parse_run_config(trained_dir / "resolved_config.txt")
        assert cfg.seed == 7
        assert cfg.model_config("stutterzero").n_mels == 32


class TestInferCommand:
    def test_outputs_and_determinism(self, corpus_dir, trained_dir, tmp_path):
        wav_in = corpus_dir / "sample0000_stuttered.wav"
        args = ["infer", "--checkpoint", str(trained_dir / "checkpoint.ckpt"),
                "--in", str(wav_in)]
        assert run(*args, "--out-wav", str(tmp_path / "a.wav"),
                   "--out-text", str(tmp_path / "a.txt")) == 0
        assert run(*args, "--out-wav", str(tmp_path / "b.wav"),
                   "--out-text", str(tmp_path / "b.txt")) == 0
        assert (tmp_path / "a.wav").read_bytes() == (tmp_path / "b.wav").read_bytes()
        assert (tmp_path / "a.txt").read_text() == (tmp_path / "b.txt").read_text()

    def test_duration_capped(self, corpus_dir, trained_dir, tmp_path):
        from fluentforge import frontend as fe
        wav_in = corpus_dir / "sample0001_stuttered.wav"
        out = tmp_path / "o.wav"
        assert run("infer", "--checkpoint", str(trained_dir / "checkpoint.ckpt"),
                   "--in", str(wav_in), "--out-wav", str(out),
                   "--out-text", str(tmp_path / "o.txt")) == 0
        assert fe.read_wav(out).duration_s <= 1.6 * fe.read_wav(wav_in).duration_s

    def test_transcript_alphabet(self, corpus_dir, trained_dir, tmp_path):
        wav_in = corpus_dir / "sample0002_stuttered.wav"
        txt = tmp_path / "t.txt"
        assert run("infer", "--checkpoint", str(trained_dir / "checkpoint.ckpt"),
                   "--in", str(wav_in), "--out-wav", str(tmp_path / "t.wav"),
                   "--out-text", str(txt)) == 0
        allowed = set("abcdefghijklmnopqrstuvwxyz' <unk>")
        assert set(txt.read_text().strip("\n")) <= allowed

    def test_bad_checkpoint_exit_io(self, corpus_dir, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"nope")
        code = run("infer", "--checkpoint", str(bad),
                   "--in", str(corpus_dir / "sample0000_stuttered.wav"),
                   "--out-wav", str(tmp_path / "x.wav"),
                   "--out-text", str(tmp_path / "x.txt"))
        assert code == cli.EXIT_IO


class TestEvalCommand:
    def test_report_rows(self, corpus_dir, trained_dir, tmp_path, capsys):
        report = tmp_path / "report.csv"
        assert run("eval", "--checkpoint", str(trained_dir / "checkpoint.ckpt"),
                   "--corpus", str(corpus_dir), "--report", str(report)) == 0
        lines = report.read_text().strip().split("\n")
        data = [l for l in lines[1:] if l and not l.startswith(("summary", "significance"))]
        assert len(data) == 4

    def test_self_compare_degenerate(self, corpus_dir, trained_dir, tmp_path, capsys):
        ckpt = str(trained_dir / "checkpoint.ckpt")
        assert run("eval", "--checkpoint", ckpt, "--corpus", str(corpus_dir),
                   "--report", str(tmp_path / "r.csv"), "--compare", ckpt) == 0
        assert "n < 5 after zero removal" in capsys.readouterr().out


class TestDumpSpec:
    def test_pgm_and_csv(self, corpus_dir, tmp_path):
        wav = corpus_dir / "sample0000_fluent.wav"
        csv_path, pgm_path = tmp_path / "m.csv", tmp_path / "m.pgm"
        assert run("dump-spec", "--in", str(wav), "--csv", str(csv_path),
                   "--pgm", str(pgm_path)) == 0
        header = pgm_path.read_bytes().split(b"\n", 3)
        width, height = (int(v) for v in header[1].split())
        assert height == 80
        assert len(csv_path.read_text().strip().split("\n")) == width


class TestGradcheckCommand:
    def test_single_module(self, capsys):
        assert run("gradcheck", "--module", "linear") == 0
        out = capsys.readouterr().out
        assert "linear" in out and "PASS" in out

    def test_unknown_module_usage_error(self):
        assert run("gradcheck", "--module", "nope") == cli.EXIT_USAGE


class TestRunConfig:
    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("zero.not_a_field = 3\n")
        with pytest.raises(rc.ConfigError, match="unknown key"):
            rc.parse_run_config(path)

    def test_comments_and_whitespace(self, tmp_path):
        path = tmp_path / "ok.cfg"
        path.write_text("# comment\n\n  seed = 5  # trailing\nzero.n_mels= 16\n")
        cfg = rc.parse_run_config(path)
        assert cfg.seed == 5
        assert cfg.model_config("stutterzero").n_mels == 16

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("this is not a pair\n")
        with pytest.raises(rc.ConfigError, match="key = value"):
            rc.parse_run_config(path)

    def test_echo_round_trip(self, tmp_path):
        cfg = rc.RunConfig(seed=9, overrides={"zero": {"n_mels": 24},
                                              "train": {"lr": 0.01}})
        path = tmp_path / "echo.cfg"
        rc.write_resolved(cfg, path)
        back = rc.parse_run_config(path)
        assert back.seed == 9
        assert back.model_config("stutterzero").n_mels == 24
        assert back.train_config("stutterzero").lr == 0.01


class TestSeedOverride:
    def test_env_seed_wins(self, tmp_path, monkeypatch):
        monkeypatch.setenv("FLUENTFORGE_SEED", "99")
        a = tmp_path / "a"
        assert run("synth", "--out", str(a), "--n", "3", "--seed", "1") == 0
        monkeypatch.delenv("FLUENTFORGE_SEED")
        b = tmp_path / "b"
        assert run("synth", "--out", str(b), "--n", "3", "--seed", "99") == 0
        assert (a / "manifest.tsv").read_bytes() == (b / "manifest.tsv").read_bytes()
