import json

import pytest

from mirrormark.cli import build_parser, config_from_args, main
from mirrormark.records import read_csv, read_json
from mirrormark.rng import KEY_ENV_VAR

KEY_HEX = bytes(range(16)).hex()


def _gen_args(out, *extra):
    return ["generate", "--key-hex", KEY_HEX, "-T", "50", "-n", "4", "-m", "2", "-H", "4",
            "-o", str(out), *extra]


def test_config_file_overrides_flags(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"T": 77, "watermark": {"m": 1}}))
    args = build_parser().parse_args(_gen_args(tmp_path / "x", "--config", str(cfg)))
    c = config_from_args(args)
    assert c.T == 77 and c.watermark.m == 1 and c.watermark.H == 4


def test_generate_detect_attack_report(tmp_path, capsys):
    run = tmp_path / "run"
    assert main(_gen_args(run)) == 0
    assert main(["detect", str(run), "--key-hex", KEY_HEX]) == 0
    out = capsys.readouterr().out
    assert "auc" in out
    assert main(["attack", str(run), "--kind", "substitute", "--epsilon", "0.2", "--out", str(tmp_path / "att"),
                 "--key-hex", KEY_HEX]) == 0
    assert main(["detect", str(tmp_path / "att"), "--key-hex", KEY_HEX, "--decoder", "wmean"]) == 0
    assert read_json(tmp_path / "att" / "metrics.json")["decoder"] == "wmean"
    assert main(["report", str(tmp_path), "--out", str(tmp_path / "s.csv")]) == 0
    assert len(read_csv(tmp_path / "s.csv")) == 2


def test_key_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(KEY_ENV_VAR, KEY_HEX)
    assert main(_gen_args(tmp_path / "r")[:1] + _gen_args(tmp_path / "r")[3:]) == 0


def test_config_errors_exit_2(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv(KEY_ENV_VAR, raising=False)
    args = _gen_args(tmp_path / "r")
    assert main(args[:1] + args[3:]) == 2
    assert main(["generate", "--key-hex", "abcd", "-o", str(tmp_path / "r")]) == 2
    assert "error" in capsys.readouterr().err
    run = tmp_path / "ok"
    main(_gen_args(run))
    assert main(["detect", str(run), "--key-hex", "00" * 16]) == 2


def test_theory_and_chunk_sim(tmp_path, capsys):
    assert main(["theory", "-T", "100,200", "--entropy", "1.7", "-m", "1", "--collisions", "0.75",
                 "--out", str(tmp_path / "t.csv")]) == 0
    assert len(read_csv(tmp_path / "t.csv")) == 4
    assert main(["chunk-sim", "--trials", "500", "--out", str(tmp_path / "c")]) == 0
    assert "glrt" in capsys.readouterr().out


def test_sweep(tmp_path, capsys):
    args = _gen_args(tmp_path / "sw")
    args[0] = "sweep"
    assert main(args + ["--param", "m", "--values", "1,2"]) == 0
    assert capsys.readouterr().out.count("bit_acc") == 2


def test_bad_subcommand():
    with pytest.raises(SystemExit):
        main(["nope"])
