import json

import numpy as np
import pytest

from alrn.cli import load_checkpoint, main, parse_mu

FAST = {"train": {"epochs_total": 2, "n_pre": 1, "batches_per_epoch": 3}}


def write_config(tmp_path, doc, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root, FAST)
    assert main(["synth", "--config", cfg, "--out", str(root / "data")]) == 0
    manifest = str(root / "data" / "manifest.json")
    assert main(["train", "--config", cfg, "--manifest", manifest, "--out", str(root / "ck")]) == 0
    return root, cfg, manifest


def test_parse_mu():
    assert parse_mu("2.5") == [2.5]
    assert parse_mu("0:5:0.5") == pytest.approx([0.5 * k for k in range(11)])


def test_gradcheck_default(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "frozen (skipped)" in out
    assert out.count("PASS") == 2 * 8 + 2


def test_gradcheck_softmax_revision(capsys):
    assert main(["gradcheck", "--ablation", "softmax-revision", "--stage", "end-to-end"]) == 0
    assert "FAIL" not in capsys.readouterr().out


def test_synth_patch_too_large_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, {"synth": {"patch_size": 9}})
    assert main(["synth", "--config", cfg, "--out", str(tmp_path / "d")]) == 2
    assert "9x9" in capsys.readouterr().err


def test_unknown_config_key_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, {"train": {"epochz": 3}})
    assert main(["train", "--config", cfg]) == 2
    assert "epochz" in capsys.readouterr().err


def test_malformed_json_exits_2(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert main(["synth", "--config", str(path)]) == 2


def test_divergent_training_exits_3(tmp_path, capsys):
    cfg = write_config(tmp_path, {"train": {"epochs_total": 4, "n_pre": 1, "batches_per_epoch": 50,
                                            "learning_rate": 1e6}})
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "ck")]) == 3
    assert "epoch" in capsys.readouterr().err


def test_train_logs_json_lines(tmp_path, capsys):
    cfg = write_config(tmp_path, FAST)
    assert main(["train", "--config", cfg, "--out", str(tmp_path / "ck")]) == 0
    lines = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert [l["epoch"] for l in lines] == [0, 1]
    assert [l["stage"] for l in lines] == ["kernels_only", "end_to_end"]


def test_checkpoint_header(trained):
    root, _, _ = trained
    params, model_cfg, header = load_checkpoint(root / "ck")
    assert model_cfg.num_attributes == 24 and header["preset"] == "synth-default"
    assert header["train"]["n_way"] == 12


def test_eval_report_json(trained, capsys):
    root, cfg, manifest = trained
    assert main(["eval", str(root / "ck"), "--config", cfg, "--manifest", manifest]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert set(doc) == {"T1", "S", "U", "H", "per_class"}
    assert len(doc["per_class"]) == 16


def test_eval_is_reproducible(trained, capsys):
    root, cfg, manifest = trained
    main(["eval", str(root / "ck"), "--config", cfg, "--manifest", manifest])
    first = capsys.readouterr().out
    main(["eval", str(root / "ck"), "--config", cfg, "--manifest", manifest])
    assert capsys.readouterr().out == first


def test_mu_sweep_monotone(trained, capsys):
    root, cfg, manifest = trained
    assert main(["eval", str(root / "ck"), "--config", cfg, "--manifest", manifest,
                 "--mu", "0:5:0.5"]) == 0
    docs = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
    assert len(docs) == 11
    counts = [d["seen_predictions"] for d in docs]
    assert all(a >= b for a, b in zip(counts, counts[1:]))


def test_eval_raw_czsl_flag(trained, capsys):
    root, cfg, manifest = trained
    assert main(["eval", str(root / "ck"), "--config", cfg, "--manifest", manifest,
                 "--czsl-semantics", "raw"]) == 0
    assert "T1" in json.loads(capsys.readouterr().out)


def test_visualize_all_attributes(trained, tmp_path, capsys):
    root, cfg, manifest = trained
    out = tmp_path / "maps"
    assert main(["visualize", str(root / "ck"), "--config", cfg, "--manifest", manifest,
                 "--attributes", "all", "--out", str(out)]) == 0
    assert len(list(out.glob("*.pgm"))) == 24


def test_visualize_sample_out_of_range(trained, tmp_path):
    root, cfg, manifest = trained
    assert main(["visualize", str(root / "ck"), "--config", cfg, "--manifest", manifest,
                 "--sample", "100000", "--out", str(tmp_path)]) == 2


def test_training_twice_gives_identical_checkpoints(trained, tmp_path):
    root, cfg, manifest = trained
    main(["train", "--config", cfg, "--manifest", manifest, "--out", str(tmp_path / "again")])
    a, _, _ = load_checkpoint(root / "ck")
    b, _, _ = load_checkpoint(tmp_path / "again")
    assert a.equals(b)
    for name, _ in a.items():
        assert (root / "ck" / f"{name}.alrt").read_bytes() == \
            (tmp_path / "again" / f"{name}.alrt").read_bytes()


def test_thread_cap_from_environment(monkeypatch, capsys):
    monkeypatch.setenv("ALRN_THREADS", "1")
    assert main(["gradcheck", "--stage", "end-to-end"]) == 0
    monkeypatch.setenv("ALRN_THREADS", "zero")
    assert main(["gradcheck"]) == 2
    assert "ALRN_THREADS" in capsys.readouterr().err
