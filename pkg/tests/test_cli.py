import json
import os

import numpy as np
import pytest
import yaml

from distillkit import cli

TOY_MODEL = {"name": "toy-16", "n_layers": 2, "embed_dim": 16, "ffn_dim": 32, "n_heads": 2}


def run_file(tmp_path, **extra):
    cfg = {
        "teacher": {"seed": 1, "model": TOY_MODEL},
        "student": dict(TOY_MODEL),
        "run": {"total_steps": 4, "batch_size": 2, "peak_lr": 1e-3, "seed": 0, "checkpoint_every": 2},
        "kd": {"kind": "l2l", "targets": "all"},
        "data": {"synth": "3:4:0.03:0.05"},
    }
    for section, values in extra.items():
        cfg.setdefault(section, {}).update(values)
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for name in ("distill", "make-teacher", "features", "similarity", "count-params", "rank"):
        assert name in out


def test_unknown_flag_is_an_error(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["count-params", "--bogus"])
    assert exc.value.code == 2


def test_count_params_check(capsys):
    assert cli.main(["count-params", "--check"]) == 0
    out = capsys.readouterr().out
    assert "94,370,816" in out and "16.23M" in out


def test_count_params_unknown_preset(capsys):
    assert cli.main(["count-params", "--preset", "huge"]) == 2
    assert "valid presets" in capsys.readouterr().err


def test_rank_fixture(capsys, tmp_path):
    assert cli.main(["rank", "table1", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "HuBERT BASE" in out and "1.7" in out
    data = json.loads((tmp_path / "ranks.json").read_text())
    assert data["average_rank"]["(b) 12-L HALF L2L"] == 2.6


def test_rank_bad_csv(tmp_path, capsys):
    p = tmp_path / "r.csv"
    p.write_text("model,acc\ndirection,+\na,x\nb,1\n")
    assert cli.main(["rank", str(p)]) == 1
    assert "acc" in capsys.readouterr().err


def test_missing_teacher_path(tmp_path, capsys):
    cfg = run_file(tmp_path, teacher={"path": str(tmp_path / "nope.dkd"), "model": None})
    assert cli.main(["distill", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "nope.dkd" in capsys.readouterr().err


def test_bad_config_reports_all_problems(tmp_path, capsys):
    cfg = run_file(tmp_path, run={"batch_size": 0}, kd={"kind": "zzz"})
    assert cli.main(["distill", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "batch_size" in err and "kd.kind" in err


def test_distill_without_data(tmp_path, capsys):
    cfg = run_file(tmp_path)
    assert cli.main(["distill", "--config", cfg, "--set", "data.synth=null", "--out", str(tmp_path / "o")]) == 2
    assert "no data" in capsys.readouterr().err


def test_distill_outputs_and_determinism(tmp_path):
    cfg = run_file(tmp_path)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert cli.main(["distill", "--config", cfg, "--seed", "5", "--out", str(out)]) == 0
        outs.append(out)
    a, b = outs
    assert sorted(os.listdir(a)) == ["final.dkd", "manifest.json", "step0000002.dkd", "step0000004.dkd",
                                     "teacher.dkd", "trace.csv"]
    for f in os.listdir(a):
        assert (a / f).read_bytes() == (b / f).read_bytes(), f
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["seed"] == 5 and manifest["config"]["run"]["seed"] == 5
    assert "time" not in json.dumps(manifest).lower()


def test_make_teacher_features_similarity(tmp_path, capsys):
    model = tmp_path / "m.yaml"
    model.write_text(yaml.safe_dump({"model": TOY_MODEL}))
    assert cli.main(["make-teacher", "--config", str(model), "--seed", "2", "--out", str(tmp_path / "t")]) == 0
    assert "not pre-trained" in capsys.readouterr().out
    ckpt = str(tmp_path / "t" / "teacher.dkd")
    assert cli.main(["features", "--ckpt", ckpt, "--synth", "1:2:0.03:0.05", "--weights", "0,1",
                     "--out", str(tmp_path / "f")]) == 0
    feats = np.load(tmp_path / "f" / "features_00000.npy")
    assert feats.shape[1] == 16
    assert cli.main(["similarity", "--a", ckpt, "--b", ckpt, "--synth", "1:10:0.03:0.05", "--metric", "cosine",
                     "--out", str(tmp_path / "s")]) == 0
    rows = (tmp_path / "s" / "similarity_cosine.csv").read_text().splitlines()
    assert rows[0] == "layer,b1,b2"
    assert float(rows[1].split(",")[1]) == pytest.approx(1.0)


def test_make_teacher_preset_override(tmp_path, capsys):
    out = tmp_path / "t"
    assert cli.main(["make-teacher", "--preset", "3l-half", "--set", "model.n_layers=1", "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["model"]["n_layers"] == 1


def test_log_level_env(monkeypatch, capsys):
    monkeypatch.setenv("DISTILLKIT_LOG", "loud")
    assert cli.main(["count-params", "--preset", "base"]) == 2
    assert "DISTILLKIT_LOG" in capsys.readouterr().err
