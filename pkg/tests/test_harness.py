import csv
import json

import numpy as np
import pytest

from proex.cli import main
from proex.config import ConfigError, RunConfig, build_config, load_config, parse_config_text
from proex.plotting import plot_history, plot_sweep
from proex.runner import load_data, run_training, staged_dir, write_manifest
from proex.synthetic import SyntheticSpec, generate_synthetic

SMALL = ["--synthetic", "--set", "synthetic.num_users=60", "--set", "synthetic.num_items=40",
         "--set", "synthetic.density=0.2", "--set", "synthetic.d_s=8", "--set", "d=8",
         "--set", "batch_size=128", "--set", "lr=0.01", "--set", "layers=1", "--max-epochs", "3"]


def test_parse_config_text():
    vals = parse_config_text("# comment\nmodel = mult-vae  # trailing\n\nlambda2=0.3\n")
    assert vals == {"model": "mult-vae", "lambda2": "0.3"}
    with pytest.raises(ConfigError):
        parse_config_text("no equals sign")


def test_build_config_types_and_errors():
    cfg = build_config({"model": "mf-bpr", "lambda2": "0.25", "K": "2", "synthetic.noise": "0",
                        "profile_slots": "0,1", "use_profiles": "no"})
    assert cfg.hp.model == "mf-bpr" and cfg.hp.lambda2 == 0.25 and cfg.hp.K == 2
    assert cfg.synthetic.noise == 0.0 and cfg.profile_slots == (0, 1) and cfg.hp.use_profiles is False
    for bad in ({"learning_rate": "1"}, {"synthetic.colour": "red"}, {"K": "two"}, {"lambda1": "3"},
                {"use_profiles": "maybe"}):
        with pytest.raises(ConfigError):
            build_config(bad)


def test_overrides_and_hash(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("synthetic = true\nmodel = lightgcn\nseed = 4\noutput_dir = a\n")
    a = load_config(path)
    b = load_config(path, {"output_dir": "b"})
    c = load_config(path, {"lambda2": "0.5"})
    assert a.seed == 4 and b.output_dir == "b"
    assert a.config_hash() == b.config_hash() != c.config_hash()
    assert RunConfig.from_dict(a.to_dict()) == a


def test_validate_paths(tmp_path):
    with pytest.raises(ConfigError):
        build_config({}).validate()
    with pytest.raises(ConfigError):
        build_config({"dataset": str(tmp_path / "missing.txt"), "use_profiles": "false"}).validate()


def test_synthetic_default_shape():
    corpus = generate_synthetic(SyntheticSpec(), 0)
    ds = corpus.dataset
    assert ds.num_users == 500 and ds.num_interactions == 500 * 6
    assert all(len(x) == 6 for x in ds.interactions)
    assert corpus.profiles.user.vectors.shape == (500, 4, 64)
    assert corpus.profiles.item.vectors.shape == (ds.num_items, 4, 64)


def test_synthetic_noise_free_profiles_are_lifted_factors():
    corpus = generate_synthetic(SyntheticSpec(num_users=40, num_items=30, density=0.2, noise=0.0, K=2), 3)
    want = corpus.user_factors @ corpus.user_lift.T
    got = corpus.profiles.user.vectors
    assert np.allclose(got[:, 0], want, atol=1e-5) and np.allclose(got[:, 1], want, atol=1e-5)


def test_synthetic_seeded():
    spec = SyntheticSpec(num_users=30, num_items=20, density=0.2, adversarial=1)
    a, b = generate_synthetic(spec, 9), generate_synthetic(spec, 9)
    assert all(np.array_equal(x, y) for x, y in zip(a.dataset.interactions, b.dataset.interactions))
    assert np.array_equal(a.profiles.user.vectors, b.profiles.user.vectors)
    assert not np.array_equal(generate_synthetic(spec, 10).user_factors, a.user_factors)


def test_synthetic_spec_checks():
    for bad in (dict(density=0), dict(noise=-1), dict(adversarial=5)):
        with pytest.raises(ValueError):
            SyntheticSpec(**bad)


def test_load_data_selects_slots():
    cfg = build_config({"synthetic.num_users": "30", "synthetic.num_items": "20", "synthetic.density": "0.2",
                        "profile_slots": "3"})
    _, profiles = load_data(cfg)
    assert profiles.K == 1


def test_staged_dir_cleans_up(tmp_path):
    out = tmp_path / "run"
    with pytest.raises(RuntimeError):
        with staged_dir(out) as tmp:
            (tmp / "partial.txt").write_text("x")
            raise RuntimeError("boom")
    assert not out.exists() and list(tmp_path.iterdir()) == []
    with staged_dir(out) as tmp:
        (tmp / "done.txt").write_text("y")
    assert (out / "done.txt").read_text() == "y"
    with pytest.raises(FileExistsError):
        with staged_dir(out):
            pass


def test_manifest_fields(tmp_path):
    cfg = build_config({"synthetic": "true", "seed": "5"})
    write_manifest(tmp_path / "m.json", "train", cfg, extra={"note": 1})
    m = json.loads((tmp_path / "m.json").read_text())
    assert m["command"] == "train" and m["seed"] == 5 and m["note"] == 1
    assert m["config_hash"] == cfg.config_hash() and m["version"].startswith("proex")


def test_plots_written(tmp_path):
    hist = [{"epoch": e, "loss_total": 1.0 / (e + 1), "loss_var": 0.0, "val_recall@20": 0.1 * e} for e in range(4)]
    assert plot_history(hist, tmp_path / "h.png").stat().st_size > 0
    (tmp_path / "s.csv").write_text("param,value,best_epoch,recall@20,ndcg@20\nK,1,0,0.1,0.2\nK,2,1,0.3,0.25\n")
    assert plot_sweep(tmp_path / "s.csv", tmp_path / "s.png").stat().st_size > 0


def test_cli_train_then_evaluate(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", *SMALL, "--out", str(out)]) == 0
    metrics = json.loads(capsys.readouterr().out)
    assert "recall@20" in metrics["test"] and "ndcg@10" in metrics["val"]
    for name in ("checkpoint.ckpt", "history.jsonl", "metrics.json", "manifest.json", "history.png", "config.json"):
        assert (out / name).exists()
    assert main(["evaluate", "--run", str(out), "--split", "val"]) == 0
    val = json.loads(capsys.readouterr().out)
    assert val["recall@20"] == metrics["best_val_recall@20"]
    assert main(["evaluate", "--run", str(out)]) == 0
    test = json.loads(capsys.readouterr().out)
    assert test["recall@20"] == metrics["test"]["recall@20"]
    assert (out / "evaluation-test.jsonl").exists()


def test_cli_sweep(tmp_path, capsys):
    out = tmp_path / "sweep"
    assert main(["sweep", *SMALL, "--max-epochs", "2", "--out", str(out), "--param", "K",
                 "--values", "1,2,3,4,5"]) == 0
    with (out / "sweep.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert [r["value"] for r in rows] == ["1", "2", "3", "4", "5"]
    assert all(0 <= float(r["recall@20"]) <= 1 for r in rows)
    assert (out / "sweep.png").stat().st_size > 0 and (out / "manifest.json").exists()


def test_cli_failures_leave_no_output(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", *SMALL, "--set", "learning_rate=1", "--out", str(out)]) == 1
    assert "unknown config key" in capsys.readouterr().err
    assert main(["sweep", *SMALL, "--out", str(out), "--param", "lr", "--values", "0.1"]) == 1
    assert not out.exists()
    with pytest.raises(SystemExit) as exc:
        main(["train", "--bogus", "--out", str(out)])
    assert exc.value.code == 2
    out.mkdir()
    (out / "keep.txt").write_text("k")
    assert main(["train", *SMALL, "--out", str(out)]) == 1
    assert (out / "keep.txt").read_text() == "k" and sorted(p.name for p in out.iterdir()) == ["keep.txt"]


def test_cli_synth_roundtrip(tmp_path, capsys):
    out = tmp_path / "syn"
    assert main(["synth", "--out", str(out), "--users", "40", "--items", "30", "--density", "0.2",
                 "--K", "2", "--d-s", "8"]) == 0
    capsys.readouterr()
    run = tmp_path / "run"
    assert main(["train", "--dataset", str(out / "interactions.txt"), "--user-profiles", str(out / "user_profiles.vec"),
                 "--item-profiles", str(out / "item_profiles.vec"), "--set", "K=2", "--set", "d=8",
                 "--max-epochs", "2", "--out", str(run)]) == 0
    assert json.loads(capsys.readouterr().out)["epochs"] == 2


def test_cli_profile_gen_and_embed(tmp_path, capsys):
    recs = tmp_path / "p.jsonl"
    assert main(["profile-gen", "--out", str(recs), "--K", "4", "--workers", "1"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["records"] > 0 and summary["mean_np_op_jaccard"] < 0.5
    vec = tmp_path / "u.vec"
    assert main(["profile-embed", "--records", str(recs), "--kind", "user", "--out", str(vec), "--dim", "16"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["K"] == 4 and info["d_s"] == 16


def test_run_training_direct():
    cfg = build_config({"synthetic.num_users": "40", "synthetic.num_items": "30", "synthetic.density": "0.2",
                        "synthetic.d_s": "8", "model": "mf-bpr", "d": "8", "max_epochs": "2"})
    res = run_training(cfg)
    assert len(res.history) == 2 and res.test.num_users > 0
