import os
import subprocess

import numpy as np
import pytest

import gridparse


def test_languages_and_tokens():
    assert "arithmetic" in gridparse.languages()
    assert len(gridparse.languages()) == 6
    toks = gridparse.tokenize("arithmetic", "id + id * id")
    assert toks == [0, 1, 0, 2, 0]
    assert gridparse.detokenize("arithmetic", toks) == "id + id * id"


def test_membership_and_cnf():
    t = lambda s: gridparse.tokenize("arithmetic", s)
    assert gridparse.member("arithmetic", t("( id + id ) * id"))
    assert not gridparse.member("arithmetic", t("id + * id"))
    assert gridparse.cnf_counts("arithmetic") == (5, 11, 9)


def test_chart_indicator():
    m = gridparse.chart_indicator("arithmetic", gridparse.tokenize("arithmetic", "id + id * id"), "E")
    assert isinstance(m, np.ndarray)
    assert m.shape == (5, 5)
    assert m[0, 4] == 1.0
    assert np.all(np.tril(m, -1) == 0)


def test_unknown_token_raises():
    with pytest.raises(gridparse.GridparseError):
        gridparse.tokenize("arithmetic", "id ? id")


def test_ood_set_is_balanced_and_exact():
    items = gridparse.ood_set("arithmetic", 21, seed=3, per_class=5)
    assert len(items) == 10
    assert sum(legal for _, legal in items) == 5
    for toks, legal in items:
        assert gridparse.member("arithmetic", toks) == legal


def test_nca_roundtrip(tmp_path):
    model = gridparse.Nca("arithmetic", d=4, seed=1)
    assert model.param_count == 1210
    toks = gridparse.tokenize("arithmetic", "id * id")
    r = model.infer(toks, trace=True)
    assert 0.0 <= r["probability"] <= 1.0
    assert len(r["trace"]) == r["steps"] + 1
    assert r["trace"][-1][0].shape == (3, 3)
    path = str(tmp_path / "m.ckpt")
    model.save(path)
    again = gridparse.Nca.load(path)
    assert again.infer(toks)["probability"] == r["probability"]


def test_training_reduces_loss():
    model, losses = gridparse.train("arithmetic", d=4, steps=40, seed=2)
    assert len(losses) == 40
    assert np.mean(losses[-10:]) < np.mean(losses[:10])
    assert 0.0 <= model.accuracy(11, per_class=5) <= 1.0


def test_run_command_and_cli(tmp_path):
    out = tmp_path / "st"
    assert gridparse.run("train", {"d": "4", "steps": "3", "batch": "8", "eval_every": "0", "out": str(out)}) == 0
    assert (out / "model.ckpt").exists()
    cli = os.environ.get("GRIDPARSE_CLI")
    if cli:
        res = subprocess.run([cli, "eval-length", "--checkpoint", str(out / "model.ckpt"), "--lengths", "5",
                              "--per-class", "2", "--out", str(tmp_path / "ev")], capture_output=True, text=True)
        assert res.returncode == 0, res.stderr
        bad = subprocess.run([cli, "eval-length", "--checkpoint", str(tmp_path / "nope.ckpt"), "--out",
                              str(tmp_path / "bad")], capture_output=True, text=True)
        assert bad.returncode == 2
        assert '"kind":"io"' in bad.stderr
