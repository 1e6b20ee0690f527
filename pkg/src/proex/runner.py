"""Single runs and one-parameter sweeps: data loading, training, reports, manifests."""

from __future__ import annotations

import csv
import dataclasses
import json
import shutil
import subprocess
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .dataset import InteractionDataset, load_interactions, split_dataset
from .engine import TrainState, build_model, train
from .evaluation import MetricReport, evaluate
from .profiles.vectors import ProfileBundle, load_profile_set
from .synthetic import generate_synthetic

SWEEP_PARAMS = ("num_envs", "K", "lambda2", "beta", "lambda1", "lambda3", "alpha", "tau")


@dataclass
class RunResult:
    state: TrainState
    history: list[dict]
    val: MetricReport
    test: MetricReport
    dataset: InteractionDataset
    profiles: ProfileBundle | None


def load_data(cfg: RunConfig) -> tuple[InteractionDataset, ProfileBundle | None]:
    """Dataset split with the run seed, plus the profile bundle restricted to the configured slots."""
    if cfg.synthetic is not None:
        spec = cfg.synthetic
        if spec.K != cfg.hp.K and cfg.profile_slots is None:
            spec = dataclasses.replace(spec, K=cfg.hp.K, adversarial=min(spec.adversarial, cfg.hp.K))
        corpus = generate_synthetic(spec, cfg.seed)
        ds, profiles = corpus.dataset, corpus.profiles
    else:
        ds = load_interactions(cfg.dataset, cfg.min_interactions)
        profiles = None
        if cfg.hp.use_profiles:
            profiles = ProfileBundle(load_profile_set(cfg.user_profiles), load_profile_set(cfg.item_profiles))
    ds = split_dataset(ds, seed=cfg.seed)
    if profiles is not None:
        if cfg.profile_slots is not None:
            profiles = profiles.select(cfg.profile_slots)
        elif profiles.K > cfg.hp.K:
            profiles = profiles.select(range(cfg.hp.K))
    return ds, profiles


def run_training(cfg: RunConfig, on_epoch=None) -> RunResult:
    cfg.validate()
    ds, profiles = load_data(cfg)
    state, history = train(ds, profiles, cfg.hp, np.random.default_rng(cfg.seed), on_epoch=on_epoch)
    val = evaluate(state, ds, profiles, (10, 20), split="val")
    test = evaluate(state, ds, profiles, (10, 20), split="test")
    return RunResult(state, history, val, test, ds, profiles)


def version_string() -> str:
    try:
        rev = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
                             cwd=Path(__file__).parent, timeout=5)
        if rev.returncode == 0 and rev.stdout.strip():
            return f"proex {__version__}+{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"proex {__version__}"


def write_manifest(path, command: str, cfg: RunConfig | None = None, extra: dict | None = None) -> None:
    manifest = {"command": command, "version": version_string()}
    if cfg is not None:
        manifest.update(config_hash=cfg.config_hash(), seed=cfg.seed, config=cfg.to_dict())
    manifest.update(extra or {})
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


@contextmanager
def staged_dir(out_dir, overwrite: bool = False):
    """Yield a scratch directory that replaces ``out_dir`` only if the block succeeds."""
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not overwrite:
        raise FileExistsError(f"output directory {out} exists and is not empty (use --overwrite)")
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if out.exists():
        shutil.rmtree(out)
    tmp.rename(out)


def write_run(out: Path, cfg: RunConfig, result: RunResult, command: str = "train") -> dict:
    out = Path(out)
    save_checkpoint(out / "checkpoint.ckpt", result.state.params)
    with (out / "history.jsonl").open("w", encoding="utf-8") as fh:
        for row in result.history:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    metrics = {
        "model": cfg.hp.model,
        "use_profiles": cfg.hp.use_profiles,
        "best_epoch": result.state.best_epoch,
        "epochs": result.state.epoch,
        "best_val_recall@20": result.state.best_metric,
        "val": result.val.summary(),
        "test": result.test.summary(),
    }
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    (out / "report.jsonl").write_text(result.test.to_json_lines())
    (out / "report.txt").write_text("test split\n" + result.test.table() + "\n")
    write_manifest(out / "manifest.json", command, cfg)
    return metrics


def load_run(run_dir) -> tuple[RunConfig, TrainState, InteractionDataset, ProfileBundle | None]:
    run_dir = Path(run_dir)
    cfg = RunConfig.from_dict(json.loads((run_dir / "config.json").read_text()))
    ds, profiles = load_data(cfg)
    model = build_model(ds, profiles, cfg.hp)
    template = model.init_params(np.random.default_rng(0))
    params = load_checkpoint(run_dir / "checkpoint.ckpt", {k: v.shape for k, v in template.items()})
    return cfg, TrainState(params=params, hp=cfg.hp), ds, profiles


def sweep_config(cfg: RunConfig, param: str, value: str) -> RunConfig:
    from .config import build_config

    if param not in SWEEP_PARAMS:
        raise ValueError(f"cannot sweep {param!r}; choose from {SWEEP_PARAMS}")
    return build_config({param: value}, base=RunConfig.from_dict(cfg.to_dict()))


def run_sweep(cfg: RunConfig, param: str, values, out_dir: Path) -> list[dict]:
    """Independent runs, one per value; writes ``sweep.csv`` and per-point run directories."""
    rows = []
    for value in values:
        point = sweep_config(cfg, param, str(value))
        result = run_training(point)
        point_dir = Path(out_dir) / f"{param}={value}"
        point_dir.mkdir(parents=True, exist_ok=True)
        write_run(point_dir, point, result, command="sweep")
        rows.append({"param": param, "value": value, "best_epoch": result.state.best_epoch,
                     **{k: v for k, v in result.test.summary().items() if k != "users"}})
    with (Path(out_dir) / "sweep.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    return rows
