"""Command line entry point: ``gen``, ``train``, ``eval`` and ``sweep``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import CompCausalError


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="compcausal", description=__doc__)
    p.add_argument("--seed", type=int, default=None, help="override split and model seeds in the config")
    p.add_argument("--threads", type=int, default=1, help="parallel sweep cells (runs stay single-threaded)")
    p.add_argument("--deterministic", action="store_true", help="force single-threaded BLAS")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="sample an SCM dataset and write it to a directory")
    gen.add_argument("--config", required=True)
    gen.add_argument("--out", required=True)

    tr = sub.add_parser("train", help="train, early-stop and evaluate one configuration")
    tr.add_argument("--config", required=True)
    tr.add_argument("--data", default=None, help="dataset directory written by gen (default: sample from config)")
    tr.add_argument("--out", required=True)

    ev = sub.add_parser("eval", help="evaluate a saved model on the test part of a dataset")
    ev.add_argument("--model", required=True, help="model directory (model.npz + model.json)")
    ev.add_argument("--data", required=True)

    sw = sub.add_parser("sweep", help="run a grid of experiments and aggregate mean +- s.e.m.")
    sw.add_argument("--grid", required=True)
    sw.add_argument("--out", required=True)
    return p


def _load_cfg(path, seed):
    from .config import config_from_dict, merge

    payload = json.loads(Path(path).read_text())
    if seed is not None:
        payload = merge(payload, {"model_seed": seed, "split_seed": seed})
    return config_from_dict(payload)


def _cmd_gen(args) -> int:
    from .data import export_dataset
    from .training import prepare_data

    config = _load_cfg(args.config, args.seed)
    vocab, split, dataset = prepare_data(config)
    export_dataset(dataset, vocab, split, args.out)
    print(f"wrote {len(dataset)} rows to {args.out} (digest {dataset.digest()[:12]})")
    return 0


def _cmd_train(args) -> int:
    from .config import config_from_dict, merge
    from .data import load_dataset_dir
    from .training import run_experiment

    config = _load_cfg(args.config, args.seed)
    data = None
    if args.data:
        data = load_dataset_dir(args.data)
        if data[2].provenance == "imported":
            config = config_from_dict(merge(config.to_dict(), {"data": {"source": "files", "path": args.data}}))
    manifest, report = run_experiment(config, args.out, data=data, deterministic=args.deterministic)
    print(json.dumps({
        "selected_epoch": manifest.selected_epoch, "seen": report.seen_acc, "unseen": report.unseen_acc,
        "harmonic": report.harmonic, "closed": report.closed_acc, "ausuc": report.ausuc,
    }, indent=2))
    return 0


def _cmd_eval(args) -> int:
    from .data import load_dataset_dir
    from .metrics import evaluate_model
    from .model import load_model

    model, weights = load_model(args.model)
    vocab, split, dataset = load_dataset_dir(args.data)
    report = evaluate_model(
        model, weights, dataset.part("test"), split, "test", vocab, balanced=dataset.provenance == "scm",
        diagnostics=True, full_dataset=dataset, seed=args.seed or 0,
    )
    print(report.to_json())
    return 0


def _cmd_sweep(args) -> int:
    from .training import sweep

    grid = json.loads(Path(args.grid).read_text())
    if args.seed is not None:
        grid.setdefault("base", {})["model_seed"] = args.seed
    rows, agg = sweep(grid, args.out, threads=max(1, args.threads))
    for a in agg:
        print(f"{a['method']:>16} {a['ratio']:>6} n={a['n']} unseen={a['unseen_mean']} harmonic={a['harmonic_mean']}")
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.deterministic:
        from .training import set_deterministic_env

        set_deterministic_env()
    handler = {"gen": _cmd_gen, "train": _cmd_train, "eval": _cmd_eval, "sweep": _cmd_sweep}[args.command]
    try:
        return handler(args)
    except (CompCausalError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
