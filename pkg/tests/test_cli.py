import json
import os

import pytest

from latentmorph import cli, morphing
from latentmorph.checkpoint import load_checkpoint

TINY = """
n_data = 200
n_samples = 40

[train]
iterations = 2
batch_size = 16
morph_steps = 1

[morph]
steps = 2
"""


def write_cfg(tmp_path, text=TINY, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def listing(root):
    out = set()
    for d, _, files in os.walk(root):
        for f in files:
            out.add(os.path.relpath(os.path.join(d, f), root))
    return out


@pytest.fixture
def trained(tmp_path):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "train"
    assert cli.main(["train", "--config", cfg, "--out", str(out)]) == 0
    return cfg, out


def test_train_smoke_and_outputs(tmp_path):
    cfg = write_cfg(tmp_path, TINY.replace("iterations = 2", "iterations = 1"))
    out = tmp_path / "run"
    assert cli.main(["train", "--config", cfg, "--out", str(out)]) == 0
    assert listing(out) == {"checkpoint.lmck", "metrics.csv"}
    assert len((out / "metrics.csv").read_text().splitlines()) == 2
    assert load_checkpoint(out / "checkpoint.lmck").metadata["iterations"] == 1


def test_train_deterministic(tmp_path):
    cfg = write_cfg(tmp_path)
    for name in ("a", "b"):
        assert cli.main(["train", "--config", cfg, "--out", str(tmp_path / name), "--seed", "3"]) == 0
    for f in ("metrics.csv", "checkpoint.lmck"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_seed_flag_changes_run(tmp_path):
    cfg = write_cfg(tmp_path)
    cli.main(["train", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "1"])
    cli.main(["train", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "2"])
    assert (tmp_path / "a" / "metrics.csv").read_bytes() != (tmp_path / "b" / "metrics.csv").read_bytes()


@pytest.mark.parametrize(
    "text, key",
    [
        ("lerning_rate = 1\n", "lerning_rate"),
        ("[train]\nkernel_lrr = 1e-3\n", "kernel_lrr"),
        ("[morph]\nstep = 3\n", "step"),
    ],
)
def test_unknown_key_is_config_error(tmp_path, capsys, text, key):
    cfg = write_cfg(tmp_path, text)
    assert cli.main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
    assert key in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_usage_errors(tmp_path, capsys):
    assert cli.main([]) == 1
    assert cli.main(["train", "--functional", "tv"]) == 1
    assert cli.main(["train", "--config", str(tmp_path / "missing.toml")]) == 1
    cfg = write_cfg(tmp_path, "[train]\nbatch_size = 1\n")
    assert cli.main(["train", "--config", cfg, "--out", str(tmp_path / "o")]) == 1


def test_eval_reports_both_step_counts(trained, tmp_path):
    cfg, out = trained
    ev = tmp_path / "eval"
    ck = str(out / "checkpoint.lmck")
    assert cli.main(["eval", "--config", cfg, "--checkpoint", ck, "--out", str(ev), "--steps", "3"]) == 0
    report = json.loads((ev / "eval_coverage.json").read_text())
    assert report["steps"] == [0, 3]
    assert isinstance(report["coverage"]["3"]["modes_captured"], int)
    assert {"eval_steps0_density.csv", "eval_steps3_density.csv", "eval_target_density.csv"} <= listing(ev)


def test_missing_checkpoint_names_path(tmp_path, capsys):
    cfg = write_cfg(tmp_path)
    missing = str(tmp_path / "nope.lmck")
    for cmd in ("eval", "refine", "morph"):
        assert cli.main([cmd, "--config", cfg, "--checkpoint", missing, "--out", str(tmp_path / "o")]) == 1
        assert missing in capsys.readouterr().err


def test_refine_outputs_and_determinism(trained, tmp_path):
    cfg, out = trained
    ck = str(out / "checkpoint.lmck")
    for name in ("r1", "r2"):
        assert cli.main(["refine", "--config", cfg, "--checkpoint", ck, "--out", str(tmp_path / name)]) == 0
    assert listing(tmp_path / "r1") == {"refined_samples.csv", "refine_coverage.json"}
    for f in listing(tmp_path / "r1"):
        assert (tmp_path / "r1" / f).read_bytes() == (tmp_path / "r2" / f).read_bytes()
    cov = json.loads((tmp_path / "r1" / "refine_coverage.json").read_text())
    assert set(cov) == {"before", "after"}
    assert (tmp_path / "r1" / "refined_samples.csv").read_text().startswith("particle,dim0,dim1\n")


def test_morph_outputs_and_determinism(trained, tmp_path):
    cfg, out = trained
    ck = str(out / "checkpoint.lmck")
    for name in ("m1", "m2"):
        args = ["morph", "--config", cfg, "--checkpoint", ck, "--out", str(tmp_path / name), "--functional", "langevin"]
        assert cli.main(args) == 0
    assert listing(tmp_path / "m1") == {"trajectory.csv", "diagnostics.json"}
    for f in listing(tmp_path / "m1"):
        assert (tmp_path / "m1" / f).read_bytes() == (tmp_path / "m2" / f).read_bytes()


def test_commands_write_only_under_out(trained, tmp_path):
    cfg, out = trained
    ck = str(out / "checkpoint.lmck")
    before = listing(tmp_path)
    dest = tmp_path / "only"
    for cmd in ("eval", "refine", "morph"):
        assert cli.main([cmd, "--config", cfg, "--checkpoint", ck, "--out", str(dest)]) == 0
    new = listing(tmp_path) - before
    assert new and all(p.startswith("only" + os.sep) for p in new)


def test_gradcheck_passes(capsys):
    assert cli.main(["gradcheck"]) == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith(("PASS", "FAIL"))]
    assert len(lines) >= 15 and all("max_rel_err=" in l for l in lines)


def test_gradcheck_catches_sign_flip(monkeypatch, capsys):
    original = morphing.RULES["kl"]
    monkeypatch.setitem(morphing.RULES, "kl", lambda lq, lr, a: -original(lq, lr, a))
    assert cli.main(["gradcheck"]) == 2
    out = capsys.readouterr().out
    assert "FAIL  rule_kl" in out and "FAIL  rule_rkl" not in out
