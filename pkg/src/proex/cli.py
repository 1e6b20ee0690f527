"""Command-line interface: ``proex <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, build_config, load_config

log = logging.getLogger("proex")


def _kv(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key = value config file")
    p.add_argument("--set", type=_kv, action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("--model", choices=["mf-bpr", "lightgcn", "mult-vae"])
    p.add_argument("--synthetic", action="store_true", help="train on a generated corpus")
    p.add_argument("--dataset", type=Path)
    p.add_argument("--user-profiles", type=Path)
    p.add_argument("--item-profiles", type=Path)
    p.add_argument("--no-profiles", action="store_true", help="train the plain base model")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--overwrite", action="store_true")


def _run_config(args) -> RunConfig:
    values: dict[str, str] = {}
    flag_map = {
        "model": "model", "dataset": "dataset", "user_profiles": "user_profiles",
        "item_profiles": "item_profiles", "seed": "seed", "max_epochs": "max_epochs",
    }
    for attr, key in flag_map.items():
        val = getattr(args, attr)
        if val is not None:
            values[key] = str(val)
    if args.synthetic:
        values["synthetic"] = "true"
    if args.no_profiles:
        values["use_profiles"] = "false"
    values.update(dict(args.set))
    values["output_dir"] = str(args.out)
    cfg = load_config(args.config, values) if args.config else build_config(values)
    cfg.validate()
    return cfg


def cmd_synth(args) -> int:
    from .dataset import save_interactions
    from .profiles.vectors import save_profile_set
    from .runner import staged_dir, write_manifest
    from .synthetic import SyntheticSpec, generate_synthetic

    spec = SyntheticSpec(num_users=args.users, num_items=args.items, latent_dim=args.latent,
                         density=args.density, noise=args.noise, adversarial=args.adversarial,
                         K=args.K, d_s=args.d_s)
    corpus = generate_synthetic(spec, args.seed)
    with staged_dir(args.out, args.overwrite) as tmp:
        save_interactions(corpus.dataset, tmp / "interactions.txt")
        save_profile_set(corpus.profiles.user, tmp / "user_profiles.vec")
        save_profile_set(corpus.profiles.item, tmp / "item_profiles.vec")
        np.savez(tmp / "factors.npz", user=corpus.user_factors, item=corpus.item_factors)
        write_manifest(tmp / "manifest.json", "synth",
                       extra={"seed": args.seed, "spec": vars(spec) if hasattr(spec, "__dict__") else None,
                              "num_users": corpus.dataset.num_users, "num_items": corpus.dataset.num_items,
                              "num_interactions": corpus.dataset.num_interactions})
    print(json.dumps({"out": str(args.out), "users": corpus.dataset.num_users,
                      "items": corpus.dataset.num_items, "interactions": corpus.dataset.num_interactions}))
    return 0


def _dataset_contexts(path, kind, min_interactions):
    from .dataset import load_interactions
    from .profiles import EntityContext

    ds = load_interactions(path, min_interactions)
    inv_u = {v: k for k, v in ds.user_id_map.items()}
    inv_i = {v: k for k, v in ds.item_id_map.items()}
    if kind == "user":
        return [EntityContext("user", u, tuple(f"item {inv_i[int(i)]}" for i in items))
                for u, items in enumerate(ds.interactions)]
    readers: dict[int, list[str]] = {i: [] for i in range(ds.num_items)}
    for u, items in enumerate(ds.interactions):
        for i in items:
            readers[int(i)].append(f"read by user {inv_u[u]}")
    return [EntityContext("item", i, tuple(readers[i])) for i in range(ds.num_items)]


def cmd_profile_gen(args) -> int:
    from .profiles import (HttpChatClient, MockChatClient, audit_profile_diversity, fixture_client,
                           fixture_contexts, load_prompt_set, run_cot_corpus, save_records)
    from .runner import write_manifest

    if args.dataset:
        contexts = _dataset_contexts(args.dataset, args.kind, args.min_interactions)
        client = MockChatClient()
    else:
        contexts = fixture_contexts()
        client = fixture_client()
    if args.real:
        client = HttpChatClient.from_env()
    prompts = {k: load_prompt_set(k) for k in ("user", "item")}
    records = []
    for kind in ("user", "item"):
        sub = [c for c in contexts if c.kind == kind]
        records += run_cot_corpus(sub, client, prompts[kind], args.K, max_workers=args.workers,
                                  backoff=0.0 if not args.real else 1.0)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_records(records, args.out)
    jac = [v for r in records for v in audit_profile_diversity(r)]
    summary = {"records": len(records), "K": args.K, "mean_np_op_jaccard": float(np.mean(jac)) if jac else None}
    write_manifest(Path(str(args.out) + ".manifest.json"), "profile-gen", extra=summary)
    print(json.dumps(summary))
    return 0


def cmd_profile_embed(args) -> int:
    from .profiles import HashEmbedder, HttpEmbedder, embed_profiles, load_records, save_profile_set
    from .runner import write_manifest

    records = [r for r in load_records(args.records) if args.kind is None or r.kind == args.kind]
    kinds = {r.kind for r in records}
    if len(kinds) != 1:
        raise ValueError(f"records mix kinds {sorted(kinds)}; pass --kind")
    embedder = HttpEmbedder.from_env() if args.real else HashEmbedder(args.dim, args.seed)
    ps = embed_profiles(records, embedder)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_profile_set(ps, args.out)
    write_manifest(Path(str(args.out) + ".manifest.json"), "profile-embed",
                   extra={"count": ps.count, "K": ps.K, "d_s": ps.d_s, "seed": args.seed})
    print(json.dumps({"out": str(args.out), "count": ps.count, "K": ps.K, "d_s": ps.d_s}))
    return 0


def cmd_train(args) -> int:
    from .plotting import plot_history
    from .runner import run_training, staged_dir, write_run

    cfg = _run_config(args)
    with staged_dir(args.out, args.overwrite) as tmp:
        result = run_training(cfg)
        metrics = write_run(tmp, cfg, result)
        plot_history(result.history, tmp / "history.png")
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_evaluate(args) -> int:
    from .evaluation import evaluate
    from .runner import load_run

    cfg, state, ds, profiles = load_run(args.run)
    cutoffs = tuple(int(x) for x in args.cutoffs.split(","))
    report = evaluate(state, ds, profiles, cutoffs, split=args.split)
    (Path(args.run) / f"evaluation-{args.split}.jsonl").write_text(report.to_json_lines())
    print(report.table(), file=sys.stderr)
    print(json.dumps({"split": args.split, **report.summary()}, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    from .plotting import plot_sweep
    from .runner import run_sweep, staged_dir, write_manifest

    cfg = _run_config(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    with staged_dir(args.out, args.overwrite) as tmp:
        rows = run_sweep(cfg, args.param, values, tmp)
        plot_sweep(tmp / "sweep.csv", tmp / "sweep.png")
        write_manifest(tmp / "manifest.json", "sweep", cfg, extra={"param": args.param, "values": values})
    print(json.dumps(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="proex", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a planted-factor corpus")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--users", type=int, default=500)
    p.add_argument("--items", type=int, default=300)
    p.add_argument("--latent", type=int, default=8)
    p.add_argument("--density", type=float, default=0.02)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--adversarial", type=int, default=0)
    p.add_argument("--K", type=int, default=4)
    p.add_argument("--d-s", dest="d_s", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("profile-gen", help="run the four-stage profile pipeline")
    p.add_argument("--out", type=Path, required=True, help="profile text corpus (.jsonl)")
    p.add_argument("--dataset", type=Path, help="build contexts from an interaction file instead of fixtures")
    p.add_argument("--kind", choices=["user", "item"], default="user")
    p.add_argument("--min-interactions", type=int, default=3)
    p.add_argument("--K", type=int, default=4)
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--real", action="store_true", help="use the HTTP client configured by environment variables")
    p.set_defaults(func=cmd_profile_gen)

    p = sub.add_parser("profile-embed", help="embed a profile text corpus")
    p.add_argument("--records", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="profile vector corpus (.vec)")
    p.add_argument("--kind", choices=["user", "item"])
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--real", action="store_true")
    p.set_defaults(func=cmd_profile_embed)

    p = sub.add_parser("train", help="train a model and write checkpoint, history and metrics")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a trained run directory")
    p.add_argument("--run", type=Path, required=True)
    p.add_argument("--split", choices=["test", "val"], default="test")
    p.add_argument("--cutoffs", default="10,20")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="vary one hyperparameter over independent runs")
    _add_run_flags(p)
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileExistsError, FileNotFoundError, ValueError, RuntimeError) as exc:
        print(f"proex {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
