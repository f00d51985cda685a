"""Training loop, early stopping, single experiments and grid sweeps."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import shutil
import time
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import build_label_embed, build_visprod
from .config import TrainConfig, config_from_dict, merge
from .data import (
    FeatureDataset,
    PairVocabulary,
    SplitSpec,
    generate_dataset,
    load_dataset_dir,
    make_scm,
    parse_ratio,
    sample_split,
)
from .diffcore import optimizer_step
from .errors import ConfigError, NumericError
from .metrics import EvalReport, evaluate_model
from .model import Batch, build_causal_model, sample_negatives

log = logging.getLogger(__name__)

SUMMARY_COLUMNS = [
    "method", "ratio", "split_seed", "model_seed", "unseen", "seen", "harmonic", "closed", "ausuc",
    "pida_attr", "pida_obj", "u_to_s", "u_to_u", "epoch", "manifest",
]
METRICS = ["unseen", "seen", "harmonic", "closed", "ausuc", "pida_attr", "pida_obj"]


@contextmanager
def single_threaded():
    """Limit BLAS/OpenMP pools to one thread for bit-reproducible runs."""
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - threadpoolctl ships with scikit-learn
        yield
        return
    with threadpool_limits(limits=1):
        yield


def build_model(config: TrainConfig, vocab: PairVocabulary, split: SplitSpec, dataset: FeatureDataset):
    arch = config.arch
    project = dataset.provenance == "imported"
    args = (vocab.num_attrs, vocab.num_objs, dataset.dim)
    if config.method in ("causal", "causal_no_indep"):
        return build_causal_model(
            *args, seed=config.model_seed, d_h=arch.d_h, d_core=arch.d_core or None, h_layers=arch.h_layers,
            g_layers=arch.g_layers, ginv_layers=arch.ginv_layers, project=project, seen=split.seen,
        )
    if config.method in ("visprod", "visprod_ci"):
        return build_visprod(*args, seed=config.model_seed, d_h=arch.d_h, layers=arch.cls_layers, seen=split.seen)
    return build_label_embed(*args, seed=config.model_seed, d_h=arch.d_h, project=project, seen=split.seen)


def _needs_negatives(config: TrainConfig, weights) -> bool:
    return config.method == "le" or (config.method.startswith("causal") and weights.lambda_ao > 0)


def _balanced(config: TrainConfig, dataset: FeatureDataset) -> bool:
    return dataset.provenance == "scm" if config.balanced is None else config.balanced


@dataclass
class TrainResult:
    model: object
    history: list = field(default_factory=list)
    selected_epoch: int | None = None


def train(config: TrainConfig, dataset: FeatureDataset, vocab: PairVocabulary, split: SplitSpec,
          model=None, param_groups=None) -> TrainResult:
    """Fit a model and record one validation report per epoch.

    The returned model holds the parameters of the epoch chosen by
    :func:`early_stop`. ``param_groups`` overrides the groups the schedule
    cycles through (one group per epoch).
    """
    weights = config.effective_weights()
    model = model if model is not None else build_model(config, vocab, split, dataset)
    if param_groups is None:
        param_groups = model.param_groups(config.schedule)
    phase_opts = [config.optimizer, config.optimizer_phase2 or config.optimizer]
    train_part, val_part = dataset.part("train"), dataset.part("val")
    if len(train_part) < 2:
        raise ConfigError("training split needs at least 2 rows")
    balanced = _balanced(config, dataset)
    rng = np.random.default_rng([config.model_seed, 2024])
    need_neg = _needs_negatives(config, weights)
    n = len(train_part)
    n_batches = max(1, math.ceil(n / config.batch_size))

    history: list[EvalReport] = []
    best_metric, best_store = -math.inf, None
    for epoch in range(config.max_epochs):
        phase = epoch % len(param_groups)
        names, opt = param_groups[phase], phase_opts[phase % 2]
        order = rng.permutation(n)
        total = 0.0
        for step, idx in enumerate(np.array_split(order, n_batches)):
            batch = Batch(train_part.features[idx], train_part.attr_ids[idx], train_part.obj_ids[idx])
            if need_neg:
                batch.neg_pairs = sample_negatives(rng, batch.pair_ids(vocab.num_objs), split.seen)
            try:
                tape = model.store.tape()
                loss = model.loss(batch, weights, tape)
                value = loss.item()
                if not np.isfinite(value):
                    raise NumericError("non-finite loss")
                optimizer_step(opt, model.store, tape.backward(loss), names)
            except NumericError as exc:
                raise NumericError(f"{exc} (epoch {epoch}, step {step})", layer=exc.layer, epoch=epoch, step=step) from None
            total += value * idx.size
        report = _validate(model, weights, val_part, split, vocab, balanced, config.model_seed)
        report.epoch = epoch
        report.train_loss = total / n
        history.append(report)
        metric = report.metric(config.early_stop)
        if best_store is None or metric > best_metric:
            best_metric, best_store = metric, model.store.copy()
    model.store = best_store
    return TrainResult(model, history, early_stop(history, config.early_stop))


def _validate(model, weights, val_part, split, vocab, balanced, seed) -> EvalReport:
    if len(val_part) == 0:
        return EvalReport(None, None, None, None, None, split="val", seed=seed)
    try:
        return evaluate_model(model, weights, val_part, split, "val", vocab, balanced, curve=False, seed=seed)
    except ValueError as exc:
        log.debug("validation metrics unavailable: %s", exc)
        return EvalReport(None, None, None, None, None, split="val", seed=seed)


def fit_model(method: str, config: TrainConfig, dataset, vocab, split) -> TrainResult:
    return train(config.replace(method=method), dataset, vocab, split)


def early_stop(history, criterion: str = "harmonic") -> int:
    """Epoch with the highest criterion value; ties go to the earliest."""
    if not history:
        raise ConfigError("empty history")
    values = [h.metric(criterion) if isinstance(h, EvalReport) else h[criterion] for h in history]
    best = max(range(len(values)), key=lambda i: (values[i], -i))
    epoch = history[best].epoch if isinstance(history[best], EvalReport) else None
    return best if epoch is None else epoch


# -- experiments ------------------------------------------------------------

def prepare_data(config: TrainConfig):
    """Build (vocab, split, dataset) from the config's data section."""
    d = config.data
    if d.source == "files":
        return load_dataset_dir(d.path)
    vocab = PairVocabulary.sized(d.num_attrs, d.num_objs)
    split = sample_split(vocab, parse_ratio(d.ratio), d.mode, seed=config.split_seed, ratio=d.ratio)
    scm = make_scm(
        vocab, d.scm_seed, d_attr=d.d_core, d_obj=d.d_core, d_x=d.d_x, hidden=d.gen_hidden, generator=d.generator,
        sigma_a=d.sigma_a, sigma_o=d.sigma_o, sigma_x=d.sigma_x, alpha=d.alpha, uniform_pairs=d.uniform_pairs,
        train_per_pair=d.train_per_pair, val_per_pair=d.val_per_pair, test_per_pair=d.test_per_pair,
    )
    return vocab, split, generate_dataset(vocab, split, scm, seed=config.split_seed)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def summary_row(config: TrainConfig, report: EvalReport, ratio: str, manifest: str) -> dict:
    return {
        "method": config.method, "ratio": ratio, "split_seed": config.split_seed, "model_seed": config.model_seed,
        "unseen": report.unseen_acc, "seen": report.seen_acc, "harmonic": report.harmonic,
        "closed": report.closed_acc, "ausuc": report.ausuc, "pida_attr": report.pida_attr,
        "pida_obj": report.pida_obj, "u_to_s": report.u_to_s, "u_to_u": report.u_to_u,
        "epoch": report.epoch, "manifest": manifest,
    }


def format_rows(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])
    return buf.getvalue()


@dataclass
class RunManifest:
    config: dict
    dataset_hash: str
    code_version: str
    wall_clock_s: float
    selected_epoch: int
    report_path: str

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)


def run_experiment(config: TrainConfig, out_dir, data=None, deterministic: bool = True):
    """Train, early-stop on validation and evaluate the chosen epoch on test.

    Writes ``report.json``, ``manifest.json``, ``summary.csv``, ``curve.csv``
    and the ``model/`` checkpoint into ``out_dir``. Files from an aborted run
    are removed. Returns ``(manifest, report)``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    targets = [out_dir / n for n in ("report.json", "manifest.json", "summary.csv", "curve.csv", "model")]
    start = time.perf_counter()
    try:
        ctx = single_threaded() if deterministic else _null()
        with ctx:
            vocab, split, dataset = data if data is not None else prepare_data(config)
            result = train(config, dataset, vocab, split)
            weights = config.effective_weights()
            report = evaluate_model(
                result.model, weights, dataset.part("test"), split, "test", vocab, _balanced(config, dataset),
                diagnostics=True, full_dataset=dataset, pida_samples=config.pida_samples, seed=config.model_seed,
            )
        report.epoch = result.selected_epoch
        ratio = split.ratio or config.data.ratio
        result.model.save(out_dir / "model", weights)
        (out_dir / "report.json").write_text(report.to_json())
        (out_dir / "summary.csv").write_text(format_rows([summary_row(config, report, ratio, "manifest.json")]))
        with open(out_dir / "curve.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["c", "seen", "unseen"])
            writer.writerows([[_fmt(float(c)), _fmt(s), _fmt(u)] for c, s, u in report.curve])
        manifest = RunManifest(
            config=config.to_dict(), dataset_hash=dataset.digest(), code_version=__version__,
            wall_clock_s=time.perf_counter() - start, selected_epoch=result.selected_epoch,
            report_path="report.json",
        )
        (out_dir / "manifest.json").write_text(manifest.to_json())
    except BaseException:
        for path in targets:
            if path.is_dir():
                shutil.rmtree(path, ignore_errors=True)
            elif path.exists():
                path.unlink()
        raise
    return manifest, report


@contextmanager
def _null():
    yield


# -- sweeps -----------------------------------------------------------------

def _cell_name(method, ratio, split_seed, model_seed) -> str:
    return f"{method}_r{ratio.replace(':', '-')}_s{split_seed}_m{model_seed}"


def _run_cell(payload):
    cfg_dict, cell_dir = payload
    config = config_from_dict(cfg_dict)
    try:
        _, report = run_experiment(config, cell_dir)
    except Exception as exc:  # recorded, aggregation continues
        return None, f"{type(exc).__name__}: {exc}"
    return report, None


def aggregate(rows) -> list[dict]:
    """Mean and standard error of the mean per (method, ratio).

    s.e.m. uses the sample standard deviation (ddof=1); a single run gets
    s.e.m. 0 and ``single_run=True``.
    """
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault((row["method"], row["ratio"]), []).append(row)
    out = []
    for (method, ratio), members in sorted(groups.items()):
        entry = {"method": method, "ratio": ratio, "n": len(members), "single_run": len(members) == 1}
        for m in METRICS:
            # sorted so the result does not depend on cell completion order
            vals = np.sort(np.array([r[m] for r in members if r[m] not in (None, "")], dtype=float))
            if vals.size == 0:
                entry[f"{m}_mean"] = entry[f"{m}_sem"] = None
                continue
            entry[f"{m}_mean"] = float(vals.mean())
            entry[f"{m}_sem"] = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
        out.append(entry)
    return out


def sweep(grid: dict, out_dir, threads: int = 1):
    """Run every (method, ratio, split seed, model seed) cell of ``grid``.

    ``grid`` holds ``base`` (a config dict) and the lists ``methods``,
    ``ratios``, ``split_seeds``, ``model_seeds``. Writes ``summary.csv``
    (one row per completed cell, in grid order), ``aggregate.csv`` and
    ``failures.json``. Returns ``(rows, aggregated)``.
    """
    allowed = {"base", "methods", "ratios", "split_seeds", "model_seeds"}
    unknown = set(grid) - allowed
    if unknown:
        raise ConfigError(f"grid: unknown keys {sorted(unknown)}")
    base = grid.get("base", {})
    base_cfg = config_from_dict(base)
    methods = grid.get("methods", [base_cfg.method])
    ratios = grid.get("ratios", [base_cfg.data.ratio])
    split_seeds = grid.get("split_seeds", [base_cfg.split_seed])
    model_seeds = grid.get("model_seeds", [base_cfg.model_seed])

    out_dir = Path(out_dir)
    cells = []
    for method in methods:
        for ratio in ratios:
            for s in split_seeds:
                for m in model_seeds:
                    cfg = merge(base, {"method": method, "split_seed": s, "model_seed": m, "data": {"ratio": ratio}})
                    if method != "causal" and method != "causal_no_indep":
                        cfg["schedule"] = "joint"
                    name = _cell_name(method, ratio, s, m)
                    cells.append((name, (method, ratio, s, m), (cfg, str(out_dir / "cells" / name))))

    payloads = [c[2] for c in cells]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_cell, payloads))
    else:
        results = [_run_cell(p) for p in payloads]

    rows, failures = [], {}
    for (name, (method, ratio, s, m), payload), (report, error) in zip(cells, results):
        if error is not None:
            failures[name] = error
            log.warning("sweep cell %s failed: %s", name, error)
            continue
        rows.append(summary_row(config_from_dict(payload[0]), report, ratio, f"cells/{name}/manifest.json"))
    if failures:
        log.warning("%d of %d sweep cells failed", len(failures), len(cells))
    agg = aggregate(rows)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "summary.csv").write_text(format_rows(rows))
    if agg:
        keys = list(agg[0])
        with open(out_dir / "aggregate.csv", "w", newline="") as fh:
            writer = csv.DictWriter(fh, keys, lineterminator="\n")
            writer.writeheader()
            writer.writerows({k: _fmt(v) for k, v in a.items()} for a in agg)
    (out_dir / "failures.json").write_text(json.dumps(failures, indent=2, sort_keys=True))
    return rows, agg


def set_deterministic_env():
    """Pin BLAS/OpenMP pools before numpy spins them up (CLI use)."""
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = "1"
