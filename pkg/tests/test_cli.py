import pytest

from aact.cli import run_cli
from aact.config import ConfigError, RunConfig, load_config, parse_config_text, parse_value
from aact.data import read_dataset
from aact.evaluation import EvalReport

SMALL = ["--d", "8", "--A", "6", "--M", "6", "--N", "4", "--k", "2", "--heads", "2", "--layers", "1",
         "--n-train", "24", "--n-test", "12", "--epochs", "1", "--seed", "3"]


def test_gen_data_is_deterministic(tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    assert run_cli(["gen-data", "--out", str(a), *SMALL]) == 0
    assert run_cli(["gen-data", "--out", str(b), *SMALL]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(read_dataset(a)) == 24


def test_train_eval_and_config_replay(tmp_path):
    run = tmp_path / "run"
    assert run_cli(["train", "--out-dir", str(run), *SMALL]) == 0
    for name in ("checkpoint.bin", "history.csv", "config.txt"):
        assert (run / name).exists()
    again = tmp_path / "again"
    assert run_cli(["train", "--out-dir", str(again), "--config", str(run / "config.txt")]) == 0
    assert (run / "checkpoint.bin").read_bytes() == (again / "checkpoint.bin").read_bytes()
    ev = tmp_path / "ev"
    assert run_cli(["eval", "--checkpoint", str(run / "checkpoint.bin"), "--out-dir", str(ev), *SMALL]) == 0
    rep = EvalReport.read_csv(ev / "report.csv")
    assert sorted(r.metric for r in rep.rows) == ["top1", "top5"]
    ev2 = tmp_path / "ev2"
    run_cli(["eval", "--checkpoint", str(run / "checkpoint.bin"), "--out-dir", str(ev2), *SMALL])
    assert (ev / "report.csv").read_bytes() == (ev2 / "report.csv").read_bytes()


def test_gradcheck_command(capsys):
    code = run_cli(["gradcheck", "--kinds", "se", "--d", "8", "--A", "4", "--M", "6", "--N", "4",
                    "--heads", "2", "--layers", "1"])
    assert code == 0
    assert "max relative gradient error" in capsys.readouterr().out


def test_sweep_horizon_writes_plot_data(tmp_path):
    out = tmp_path / "sw"
    code = run_cli(["sweep-horizon", "--out-dir", str(out), *SMALL, "--seeds", "0", "--models", "pv",
                    "--horizons", "0,2"])
    assert code == 0
    assert (out / "plot_top5.csv").read_text().splitlines()[0] == "series,x,y"
    assert "suite = horizon_sweep" in (out / "config.txt").read_text()


def test_usage_errors_exit_2(tmp_path, capsys):
    assert run_cli([]) == 2
    assert run_cli(["train", "--out-dir", str(tmp_path), "--no-such-flag", "1"]) == 2
    assert run_cli(["train", "--out-dir", str(tmp_path), "--epochs", "many"]) == 2
    assert run_cli(["gradcheck", "--kinds", "rnn"]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("epochs = 3\nwidth = 9\n")
    assert run_cli(["train", "--out-dir", str(tmp_path), "--config", str(bad)]) == 2
    assert "bad.cfg:2" in capsys.readouterr().err


def test_runtime_errors_exit_1(tmp_path):
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"not a dataset at all, just bytes")
    assert run_cli(["train", "--out-dir", str(tmp_path / "o"), "--data", str(junk), *SMALL]) == 1
    assert run_cli(["eval", "--checkpoint", str(junk), "--out-dir", str(tmp_path / "o")]) == 1


def test_config_parsing():
    cfg = parse_config_text("# comment\nlambda_c = 0.5\nseeds = 1, 2\nterms = none\ngradcheck = off\n")
    assert cfg == {"lambda_c": 0.5, "seeds": (1, 2), "terms": None, "gradcheck": False}
    assert parse_value("terms", "cyc_p,antic_f") == ("cyc_p", "antic_f")
    with pytest.raises(ConfigError):
        parse_config_text("epochs 3")
    with pytest.raises(ConfigError):
        load_config(None, {"model_kind": "gru"})


def test_echo_round_trips():
    cfg = RunConfig(lambda_s=0.25, seeds=(7,), terms=("cyc_p",))
    assert RunConfig(**parse_config_text(cfg.echo())) == cfg
