from __future__ import annotations

import json

import numpy as np
import pytest

from qldpc_decoders.channel import Dataset
from qldpc_decoders.cli import main
from qldpc_decoders.codes import build_hgp, repetition_code
from qldpc_decoders.nn.optim import load_checkpoint


def run(capsys, *argv) -> tuple[int, str, str]:
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def effective(out: str) -> dict:
    body = out.split("# effective config\n", 1)[1]
    return json.JSONDecoder().raw_decode(body)[0]


@pytest.fixture(scope="module")
def rep_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("code") / "rep.json"
    build_hgp(repetition_code(3), repetition_code(3)).save(path)
    return path


@pytest.fixture(scope="module")
def rep_data(rep_path, tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "train.jsonl"
    assert main(["data", "gen", "--code", str(rep_path), "--pf", "0.05", "--count", "200",
                 "--seed", "4", "--out", str(path)]) == 0
    return path


def test_code_build_reports(capsys, tmp_path):
    rc, out, _ = run(capsys, "code", "build", "--family", "hgp", "--out", tmp_path / "hgp.json")
    assert rc == 0 and "[[129, 28]]" in out and (tmp_path / "hgp.json").exists()
    rc, out, _ = run(capsys, "code", "build", "--family", "bicycle", "--seed", 7)
    assert rc == 0 and "[[256, 32]]" in out


def test_missing_output_directory(capsys, tmp_path):
    target = tmp_path / "nope" / "hgp.json"
    rc, _, err = run(capsys, "code", "build", "--family", "hgp", "--out", target)
    assert rc == 2 and "does not exist" in err and not target.parent.exists()


def test_usage_errors(capsys, rep_path):
    assert run(capsys, "code", "build", "--family", "torus")[0] == 2
    assert run(capsys, "data", "gen", "--code", rep_path, "--pf", "0.7", "--out", "x")[0] == 2
    assert run(capsys, "data", "gen", "--code", "/no/such/file", "--out", "x")[0] == 2


def test_data_gen_forced_entries_and_determinism(capsys, tmp_path, hgp_code):
    code_path = tmp_path / "hgp.json"
    hgp_code.save(code_path)
    paths = [tmp_path / f"d{i}.jsonl" for i in range(2)]
    for p in paths:
        rc, _, _ = run(capsys, "data", "gen", "--code", code_path, "--pf", 0.01, "--count", 5000,
                       "--recipe", "train", "--seed", 3, "--out", p)
        assert rc == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()
    ds = Dataset.load(paths[0], hgp_code)
    assert len(ds) == 5000 and ds.metadata["seed"] == 3
    head = ds.errors[:259]
    assert not head[0].any() and np.array_equal(head[1:], np.eye(258, dtype=np.uint8))
    assert ds.errors[259:].sum(axis=1).min() >= 2
    rc, _, err = run(capsys, "data", "gen", "--code", code_path, "--count", 258, "--out", tmp_path / "small.jsonl")
    assert rc == 2 and "2n+1" in err


def test_data_gen_test_recipe(capsys, rep_path, tmp_path):
    out = tmp_path / "test.jsonl"
    rc, _, _ = run(capsys, "data", "gen", "--code", rep_path, "--recipe", "test", "--count", 50, "--out", out)
    assert rc == 0 and len(Dataset.load(out)) == 50


def test_train_defaults_echo_table_values(capsys, rep_path, rep_data, tmp_path):
    rc, out, _ = run(capsys, "train", "gnn", "--code", rep_path, "--data", rep_data, "--out", tmp_path / "g.json",
                     "--epochs", 0)
    cfg = effective(out)
    assert rc == 0
    assert (cfg["layers"], cfg["embed"], cfg["lr"], cfg["batch_size"], cfg["clip"]) == (6, 128, 4e-4, 32, 0.5)


@pytest.mark.parametrize("kind", ["gnn", "nbp"])
def test_train_smoke_and_resume(kind, capsys, rep_path, rep_data, tmp_path):
    ckpt = tmp_path / f"{kind}.json"
    extra = ["--layers", 2, "--embed", 6] if kind == "gnn" else ["--iterations", 4]
    rc, out, _ = run(capsys, "train", kind, "--code", rep_path, "--data", rep_data, "--out", ckpt,
                     "--epochs", 1, "--lr", 0.01, *extra)
    assert rc == 0 and ckpt.exists() and ckpt.with_suffix(".csv").exists()
    store, _, meta, found = load_checkpoint(ckpt)
    assert found == kind and meta["epochs_run"] == 1
    steps = store.step
    assert steps == -(-200 // 32)
    rc, _, _ = run(capsys, "train", kind, "--code", rep_path, "--data", rep_data, "--out", tmp_path / "r.json",
                   "--epochs", 1, "--lr", 0.01, "--resume", ckpt, *extra)
    assert rc == 0 and load_checkpoint(tmp_path / "r.json")[0].step == 2 * steps


def test_train_loss_drops(capsys, rep_path, rep_data, tmp_path):
    from qldpc_decoders.codes import CssCode, tanner_graph
    from qldpc_decoders.gnn import GnnHyperparams, GnnModel, batch_loss

    code = CssCode.load(rep_path)
    ds = Dataset.load(rep_data, code)
    hp = GnnHyperparams(layers=2, embed=6, seed=0)
    initial = float(batch_loss(GnnModel(tanner_graph(code), hp), ds.syndromes, ds.errors).value)
    ckpt = tmp_path / "g.json"
    rc, out, _ = run(capsys, "train", "gnn", "--code", rep_path, "--data", rep_data, "--out", ckpt,
                     "--epochs", 1, "--lr", 0.01, "--layers", 2, "--embed", 6)
    assert rc == 0
    trained, _ = GnnModel.load(ckpt, tanner_graph(code))
    assert float(batch_loss(trained, ds.syndromes, ds.errors).value) < initial


def test_train_rejects_mismatched_data(capsys, rep_path, rep_data, hgp_code, tmp_path):
    other = tmp_path / "hgp.json"
    hgp_code.save(other)
    rc, _, err = run(capsys, "train", "nbp", "--code", other, "--data", rep_data, "--out", tmp_path / "x.json")
    assert rc == 2 and "does not match" in err


def test_train_rejects_wrong_resume_kind(capsys, rep_path, rep_data, tmp_path):
    ckpt = tmp_path / "n.json"
    assert run(capsys, "train", "nbp", "--code", rep_path, "--data", rep_data, "--out", ckpt, "--epochs", 0)[0] == 0
    rc, _, _ = run(capsys, "train", "gnn", "--code", rep_path, "--data", rep_data, "--out", tmp_path / "g.json",
                   "--resume", ckpt, "--layers", 1, "--embed", 4)
    assert rc == 2


def test_sweep_outputs(capsys, rep_path, tmp_path):
    prefix = tmp_path / "bp"
    rc, out, _ = run(capsys, "sweep", "--code", rep_path, "--decoder", "bp", "--pf-list", 0.02, 0.05,
                     "--trials", 600, "--seed", 2, "--out", prefix)
    assert rc == 0
    xy = np.loadtxt(f"{prefix}.txt", comments="#")
    assert xy.shape == (2, 2) and np.allclose(xy[:, 0], [0.02, 0.05])
    rows = open(f"{prefix}.csv").read().splitlines()
    assert rows[0].startswith("p_f,trials,failures,ler,ci_low,ci_high")
    # same seed, different worker count: identical numbers
    rc, _, _ = run(capsys, "sweep", "--code", rep_path, "--decoder", "bp", "--pf-list", 0.02, 0.05,
                   "--trials", 600, "--seed", 2, "--workers", 2, "--out", tmp_path / "bp2")
    assert np.array_equal(np.loadtxt(tmp_path / "bp2.txt", comments="#"), xy)


def test_sweep_osd_and_neural_decoders(capsys, rep_path, rep_data, tmp_path):
    rc, _, _ = run(capsys, "sweep", "--code", rep_path, "--decoder", "bp-osd", "--order", 2,
                   "--pf-list", 0.05, "--trials", 200)
    assert rc == 0
    ckpt = tmp_path / "n.json"
    assert run(capsys, "train", "nbp", "--code", rep_path, "--data", rep_data, "--out", ckpt, "--epochs", 0)[0] == 0
    rc, out, _ = run(capsys, "sweep", "--code", rep_path, "--decoder", "nbp", "--model", ckpt,
                     "--pf-list", 0.05, "--trials", 200)
    assert rc == 0 and "failures=" in out
    rc, _, _ = run(capsys, "sweep", "--code", rep_path, "--decoder", "gnn", "--model", ckpt,
                   "--pf-list", 0.05, "--trials", 200)
    assert rc == 2  # checkpoint kind mismatch


def test_sweep_refusals(capsys, rep_path):
    assert run(capsys, "sweep", "--code", rep_path, "--decoder", "bp", "--pf-list", 0.01, "--trials", 0)[0] == 2
    assert run(capsys, "sweep", "--code", rep_path, "--decoder", "gnn", "--pf-list", 0.01, "--trials", 5)[0] == 2
    assert run(capsys, "sweep", "--code", rep_path, "--decoder", "nbp", "--pf-list", 0.01, "--trials", 5)[0] == 2


def test_config_file(capsys, rep_path, tmp_path):
    cfg = tmp_path / "exp.json"
    cfg.write_text(json.dumps({"code": str(rep_path), "decoder": "bp", "pf_list": [0.03], "trials": 300, "seed": 8}))
    rc, out, _ = run(capsys, "--config", cfg, "sweep", "--decoder", "bp")
    assert rc == 0 and effective(out)["trials"] == 300 and "trials=300" in out
    rc, out, _ = run(capsys, "--config", cfg, "sweep", "--decoder", "bp", "--trials", 100)
    assert rc == 0 and effective(out)["trials"] == 100
    cfg.write_text(json.dumps({"bogus": 1}))
    assert run(capsys, "--config", cfg, "sweep", "--decoder", "bp")[0] == 2


def test_effective_config_replays(capsys, rep_path, tmp_path):
    rc, out, _ = run(capsys, "sweep", "--code", rep_path, "--decoder", "bp", "--pf-list", 0.04, "--trials", 200)
    cfg = effective(out)
    replay = {k: v for k, v in cfg.items() if k not in ("command", "config", "verbose")}
    path = tmp_path / "replay.json"
    path.write_text(json.dumps(replay))
    rc2, out2, _ = run(capsys, "--config", path, "sweep", "--decoder", "bp")
    assert rc == rc2 == 0
    tail = lambda text: [ln for ln in text.splitlines() if ln.startswith("p_f=")][0].rsplit(" ", 1)[0]  # noqa: E731
    assert tail(out) == tail(out2)
