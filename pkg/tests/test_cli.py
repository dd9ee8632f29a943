import csv
import json

import numpy as np
import pytest

from seqrisk import config as C
from seqrisk.backbone import BackboneConfig
from seqrisk.cli import build_parser, dataset_hash, main, read_predictions
from seqrisk.model import ModelConfig, RiskModel, load_model, save_model

TINY = ["--stem-channels", "4", "--layer-channels", "4,8", "--blocks-per-layer", "1", "--embed-dim", "6",
        "--epochs", "2", "--learning-rate", "1e-3"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, rd = root / "data", root / "run"
    assert run("gen-synthetic", "--out", data, "--n-patients", 40, "--image-size", 32, "--case-fraction", 0.5) == 0
    assert run("preprocess", "--data", data, "--run", rd, "--image-size", 32) == 0
    assert run("extract-features", "--run", rd, "--threads", 1) == 0
    assert run("train", "--run", rd, *TINY, "--shift-layer", 1, "--checkpoint-every", 1) == 0
    assert run("finetune-baf", "--run", rd, *TINY, "--shift-layer", 1) == 0
    return root


def write_predictions(path, scores, labels, cats):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["patient_id", "score", "label", "category"])
        for i, (s, l, c) in enumerate(zip(scores, labels, cats)):
            w.writerow([f"p{i}", s, l, c])


def test_gen_synthetic_same_seed_same_hash(tmp_path, capsys):
    hashes = []
    for name in ("a", "b", "c"):
        seed = 8 if name == "c" else 7
        assert run("gen-synthetic", "--out", tmp_path / name, "--n-patients", 20, "--image-size", 16,
                   "--seed", seed) == 0
        hashes.append(json.loads(capsys.readouterr().out)["dataset_sha256"])
    assert hashes[0] == hashes[1] != hashes[2]
    assert dataset_hash(tmp_path / "a") == hashes[0]
    assert json.loads((tmp_path / "a" / "config.json").read_text())["cohort"]["seed"] == 7


def test_grad_check_command(capsys, tmp_path):
    assert run("grad-check", "--out", tmp_path) == 0
    out = capsys.readouterr().out
    assert "conv3d" in out and "shift" in out and "bce_chain" in out
    results = json.loads((tmp_path / "grad_check.json").read_text())
    assert max(results.values()) < 1e-6
    assert run("grad-check", "--tol", 1e-30) == 2


def test_eval_perfect_separation(tmp_path):
    cats = np.array([0, 0, 0, 0, 1, 2, 3, 1])
    labels = (cats > 0).astype(int)
    write_predictions(tmp_path / "p.csv", labels * 0.8 + 0.1, labels, cats)
    assert run("eval", "--predictions", tmp_path / "p.csv", "--out", tmp_path / "ev", "--n-boot", 50) == 0
    report = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert all(report[k]["auc"] == 1.0 for k in ("auc_1y", "auc_2y", "auc_gt2y"))
    assert (tmp_path / "ev" / "roc.png").stat().st_size > 0
    assert (tmp_path / "ev" / "roc_1y.csv").exists()


def test_eval_compare_identical_gives_p_one(tmp_path):
    rng = np.random.default_rng(0)
    cats = np.repeat([0, 1, 2, 3], 10)
    write_predictions(tmp_path / "p.csv", rng.uniform(size=40), (cats > 0).astype(int), cats)
    assert run("eval", "--predictions", tmp_path / "p.csv", "--compare", tmp_path / "p.csv", "--out", tmp_path,
               "--n-boot", 20) == 0
    assert json.loads((tmp_path / "report.json").read_text())["delong"]["p_value"] == 1.0


def test_bad_predictions_file(tmp_path):
    (tmp_path / "p.csv").write_text("patient_id,score\np0,0.5\n")
    with pytest.raises(ValueError, match="label"):
        read_predictions(tmp_path / "p.csv")
    assert run("eval", "--predictions", tmp_path / "p.csv", "--out", tmp_path) == 1


def test_validation_errors_exit_one(tmp_path, capsys):
    assert run("train", "--run", tmp_path / "missing") == 1
    assert "preprocess" in capsys.readouterr().err
    (tmp_path / "bad.json").write_text(json.dumps({"train": {"bogus": 1}}))
    assert run("train", "--run", tmp_path, "--config", tmp_path / "bad.json") == 1
    assert "train.bogus" in capsys.readouterr().err
    assert run("train", "--run", tmp_path, "--epochs", 3) == 1
    assert "epochs" in capsys.readouterr().err
    assert run("describe", "--data", tmp_path) == 1
    assert run("no-such-command") == 1
    assert run("gen-synthetic") == 1


def test_help_documents_flags_and_defaults(capsys):
    assert main(["train", "--help"]) == 0
    text = capsys.readouterr().out
    for flag in ("--epochs", "--learning-rate", "--filter-percentile", "--shift-layer", "--threads", "--config"):
        assert flag in text
    assert "default: 60" in text


def test_config_precedence(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"train": {"epochs": 4, "seed": 3}}))
    args = build_parser().parse_args(["train", "--run", "x", "--config", str(tmp_path / "c.json"), "--seed", "5"])
    cfg = C.resolve(args)
    assert cfg["train"].epochs == 4 and cfg["train"].seed == 5
    assert cfg["train"].learning_rate == 1e-4


def test_chain_outputs(chain):
    rd = chain / "run"
    for rel in ("preprocess/cohort.npz", "features/radiomics.npy", "features/radiomics.csv", "train/weights/model.json",
                "train/log.csv", "train/predictions_test.csv", "train/loss.png", "train/roc.png", "train/split.json",
                "train/checkpoints/train_epoch001/model.json", "finetune/filter.json", "finetune/weights/model.json",
                "finetune/stage1/predictions_test.csv", "finetune/predictions_test.csv"):
        assert (rd / rel).exists(), rel
    for stage in ("preprocess", "features", "train", "finetune"):
        assert (rd / stage / "config.json").exists()
    filt = json.loads((rd / "finetune" / "filter.json").read_text())
    assert filt["n_f"] <= filt["n_s"] and filt["percentile"] == 90.0
    ids, scores, labels, cats = read_predictions(rd / "finetune" / "predictions_test.csv")
    assert np.all((scores > 0) & (scores < 1)) and len(set(labels)) == 2


def test_chain_eval_and_attention(chain, tmp_path):
    rd = chain / "run"
    assert run("eval", "--predictions", rd / "finetune/predictions_test.csv", "--out", tmp_path / "ev",
               "--n-boot", 50) == 0
    pid = read_predictions(rd / "train/predictions_test.csv")[0][0]
    assert run("export-attention", "--run", rd, "--patient", pid, "--k", 3, "--out", tmp_path / "att") == 0
    with open(tmp_path / "att" / "top_points.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 12
    assert run("export-attention", "--run", rd, "--patient", "nobody", "--out", tmp_path / "att") == 1


def test_replay_from_echoed_config(chain, tmp_path):
    import shutil
    rd = chain / "run"
    copy = tmp_path / "run"
    shutil.copytree(rd / "preprocess", copy / "preprocess")
    shutil.copytree(rd / "features", copy / "features")
    assert run("train", "--run", copy, "--config", rd / "train" / "config.json") == 0
    a = (rd / "train" / "predictions_test.csv").read_bytes()
    assert a == (copy / "train" / "predictions_test.csv").read_bytes()
    assert (rd / "train" / "log.csv").read_bytes() == (copy / "train" / "log.csv").read_bytes()


def test_bench_attention(tmp_path, capsys):
    assert run("bench-attention", "--out", tmp_path) == 0
    assert "additive 8258" in capsys.readouterr().out
    bench = json.loads((tmp_path / "bench.json").read_text())
    assert bench["params"] == {"shift": 8258, "nonlocal": 8192}
    assert (tmp_path / "macs.png").exists()


def test_model_save_load_round_trip(tmp_path):
    cfg = ModelConfig(backbone=BackboneConfig(stem_channels=3, layer_channels=(4,), blocks_per_layer=1, embed_dim=5,
                                              shift_layer=1))
    model = RiskModel(cfg, seed=3)
    model.backbone.calibrate(np.random.default_rng(0).normal(size=(2, 2, 16, 16)))
    save_model(tmp_path / "m", model)
    back = load_model(tmp_path / "m")
    assert back.config == cfg
    state, loaded = model.state(), back.state()
    assert state.keys() == loaded.keys()
    for k in state:
        # weights are stored as 32-bit floats
        np.testing.assert_array_equal(loaded[k], np.asarray(state[k]).astype(np.float32).astype(np.float64))
