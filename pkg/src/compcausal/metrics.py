"""Zero-shot metrics and disentanglement diagnostics.

Accuracies are balanced over pairs (mean of per-pair accuracy) unless
``balanced=False``, in which case they are plain per-sample accuracies.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DomainError, UnsupportedError
from .hsic import conditional_hsic, one_hot
from .model import ScoreMatrix, predict

log = logging.getLogger(__name__)

AUSUC_POINTS = 201


def _accuracy(correct: np.ndarray, truths: np.ndarray, balanced: bool) -> float:
    if truths.size == 0:
        raise DomainError("empty evaluation set")
    if not balanced:
        return float(correct.mean())
    _, inv = np.unique(truths, return_inverse=True)
    hits = np.bincount(inv, weights=correct.astype(np.float64))
    counts = np.bincount(inv)
    return float((hits / counts).mean())


def balanced_accuracy(preds, truths, pair_set) -> float:
    """Mean over the pairs of ``pair_set`` that have samples of per-pair accuracy."""
    preds = np.asarray(preds)
    truths = np.asarray(truths)
    if truths.size == 0:
        raise DomainError("empty evaluation set")
    if not np.isin(truths, np.asarray(list(pair_set))).all():
        raise DomainError("a ground-truth pair is outside the evaluated pair set")
    return _accuracy(preds == truths, truths, True)


def per_pair_accuracy(preds, truths) -> dict[int, float]:
    preds, truths = np.asarray(preds), np.asarray(truths)
    return {int(p): float((preds[truths == p] == p).mean()) for p in np.unique(truths)}


def harmonic_mean(seen: float | None, unseen: float | None) -> float:
    """``2 s u / (s + u)``, defined as 0 when both are 0."""
    if seen is None or unseen is None:
        raise DomainError("harmonic mean needs both seen and unseen accuracy")
    if seen + unseen == 0:
        return 0.0
    return 2.0 * seen * unseen / (seen + unseen)


def evaluate_open(scores: ScoreMatrix, truths, seen_pairs, balanced: bool = True):
    """``(seen_acc, unseen_acc, harmonic)`` with predictions over all candidates.

    A side without samples is reported as ``None`` and so is the harmonic.
    """
    truths = np.asarray(truths)
    preds = predict(scores)
    correct = preds == truths
    is_seen = np.isin(truths, np.asarray(list(seen_pairs)))
    seen = _accuracy(correct[is_seen], truths[is_seen], balanced) if is_seen.any() else None
    unseen = _accuracy(correct[~is_seen], truths[~is_seen], balanced) if (~is_seen).any() else None
    harmonic = harmonic_mean(seen, unseen) if seen is not None and unseen is not None else None
    return seen, unseen, harmonic


def evaluate_closed(scores: ScoreMatrix, truths, unseen_pairs, balanced: bool = True) -> float:
    """Accuracy on unseen-pair samples when only unseen pairs may be predicted."""
    truths = np.asarray(truths)
    unseen_pairs = np.asarray(sorted(unseen_pairs), dtype=np.int64)
    mask = np.isin(truths, unseen_pairs)
    if not mask.any():
        raise DomainError("no samples from unseen pairs")
    cols = np.isin(scores.candidates, unseen_pairs)
    if not np.isin(unseen_pairs, scores.candidates).all():
        raise DomainError("scores do not cover every unseen pair")
    restricted = ScoreMatrix(scores.scores[mask][:, cols], scores.candidates[cols])
    return _accuracy(predict(restricted) == truths[mask], truths[mask], balanced)


def _best(scores: np.ndarray, candidates: np.ndarray, cols: np.ndarray):
    sub = scores[:, cols]
    idx = np.argmax(sub, axis=1)
    return sub[np.arange(sub.shape[0]), idx], candidates[cols][idx]


def ausuc(scores: ScoreMatrix, truths, seen_pairs, num_points: int = AUSUC_POINTS, balanced: bool = True):
    """Area under the seen-unseen accuracy curve.

    A constant ``c`` is added to every seen-pair score; ``c`` sweeps
    ``num_points`` values over ``[-D, D]`` with ``D = max - min`` of the
    scores, and the ``c = -inf`` / ``c = +inf`` endpoints are added exactly.
    The curve is returned as ``[(c, seen_acc, unseen_acc), ...]`` sorted by
    ``c`` and integrated with the trapezoid rule over seen accuracy.
    """
    if num_points < 3:
        raise DomainError("num_points must be >= 3")
    truths = np.asarray(truths)
    seen_cols = np.isin(scores.candidates, np.asarray(list(seen_pairs)))
    if seen_cols.all() or not seen_cols.any():
        raise DomainError("AUSUC needs both seen and unseen candidates")
    s_val, s_pair = _best(scores.scores, scores.candidates, seen_cols)
    u_val, u_pair = _best(scores.scores, scores.candidates, ~seen_cols)
    is_seen = np.isin(truths, np.asarray(list(seen_pairs)))
    if not is_seen.any() or is_seen.all():
        raise DomainError("AUSUC needs samples from both seen and unseen pairs")

    def point(c):
        if c == -math.inf:
            pick_seen = np.zeros(truths.size, dtype=bool)
        elif c == math.inf:
            pick_seen = np.ones(truths.size, dtype=bool)
        else:
            shifted = s_val + c
            pick_seen = (shifted > u_val) | ((shifted == u_val) & (s_pair < u_pair))
        correct = np.where(pick_seen, s_pair, u_pair) == truths
        return (
            _accuracy(correct[is_seen], truths[is_seen], balanced),
            _accuracy(correct[~is_seen], truths[~is_seen], balanced),
        )

    span = float(scores.scores.max() - scores.scores.min())
    grid = [-math.inf, *np.linspace(-span, span, num_points).tolist(), math.inf]
    curve = [(c, *point(c)) for c in grid]
    seen_acc = np.array([p[1] for p in curve])
    unseen_acc = np.array([p[2] for p in curve])
    if np.unique(np.stack([seen_acc, unseen_acc], axis=1), axis=0).shape[0] < 2:
        log.warning("AUSUC curve collapsed to a single point; area set to 0")
        return 0.0, curve
    order = np.argsort(seen_acc, kind="stable")
    area = float(np.trapezoid(unseen_acc[order], seen_acc[order]))
    return area, curve


def confusion_counts(preds, truths, seen_pairs, unseen_pairs) -> tuple[int, int]:
    """Errors on unseen-pair samples split into (predicted a seen pair, predicted another unseen pair)."""
    preds, truths = np.asarray(preds), np.asarray(truths)
    mask = np.isin(truths, np.asarray(list(unseen_pairs))) & (preds != truths)
    to_seen = np.isin(preds[mask], np.asarray(list(seen_pairs)))
    return int(to_seen.sum()), int((~to_seen).sum())


# -- disentanglement diagnostics --------------------------------------------

def pida_from_means(mean_a: np.ndarray, mean_o: np.ndarray, p_attr: np.ndarray, p_obj: np.ndarray):
    """PIDA from per-pair means of the recovered cores.

    ``mean_a[a, o]`` is E[phi_a | do(a, o)]; E[phi_a | do(a)] averages it over
    objects with weights ``p_obj``. The attribute score is the mean over all
    pairs of the Euclidean distance between the two; objects likewise.
    """
    do_a = np.einsum("aod,o->ad", mean_a, p_obj)
    do_o = np.einsum("aod,a->od", mean_o, p_attr)
    pida_attr = np.linalg.norm(mean_a - do_a[:, None, :], axis=2).mean()
    pida_obj = np.linalg.norm(mean_o - do_o[None, :, :], axis=2).mean()
    return float(pida_attr), float(pida_obj)


def pida(model, dataset, vocab, num_samples: int = 500, seed: int = 0):
    """Post-interventional disagreement of the model's recovered cores.

    Fresh samples are drawn from the dataset's generator under do(a, o) for
    every pair. The marginals used for do(a) / do(o) are the training label
    frequencies.
    """
    if dataset.provenance != "scm" or dataset.scm is None:
        raise UnsupportedError("PIDA needs a dataset with an SCM generator")
    rng = np.random.default_rng([seed, 11])
    na, no = vocab.num_attrs, vocab.num_objs
    means_a = means_o = None
    for a in range(na):
        for o in range(no):
            x = dataset.scm.sample(np.full(num_samples, a), np.full(num_samples, o), rng)
            cores = model.cores(x)
            if cores is None:
                return None, None
            pa, po = cores
            if means_a is None:
                means_a = np.zeros((na, no, pa.shape[1]))
                means_o = np.zeros((na, no, po.shape[1]))
            means_a[a, o] = pa.mean(axis=0)
            means_o[a, o] = po.mean(axis=0)
    train = dataset.split == "train"
    p_attr = np.bincount(dataset.attr_ids[train], minlength=na).astype(float)
    p_obj = np.bincount(dataset.obj_ids[train], minlength=no).astype(float)
    p_attr = p_attr / p_attr.sum() if p_attr.sum() else np.full(na, 1.0 / na)
    p_obj = p_obj / p_obj.sum() if p_obj.sum() else np.full(no, 1.0 / no)
    return pida_from_means(means_a, means_o, p_attr, p_obj)


def conditional_hsic_residuals(model, x, attr_ids, obj_ids, num_attrs, num_objs):
    """Held-out I(phi_a, O | A) and I(phi_o, A | O); ``(None, None)`` without cores."""
    cores = model.cores(x)
    if cores is None:
        return None, None
    pa, po = cores
    r_a = conditional_hsic(pa, one_hot(obj_ids, num_objs), attr_ids).item()
    r_o = conditional_hsic(po, one_hot(attr_ids, num_attrs), obj_ids).item()
    return r_a, r_o


@dataclass
class EvalReport:
    seen_acc: float | None
    unseen_acc: float | None
    harmonic: float | None
    closed_acc: float | None
    ausuc: float | None
    per_pair_acc: dict = field(default_factory=dict)
    curve: list = field(default_factory=list)
    pida_attr: float | None = None
    pida_obj: float | None = None
    cond_hsic_attr: float | None = None
    cond_hsic_obj: float | None = None
    u_to_s: int = 0
    u_to_u: int = 0
    split: str = ""
    seed: int | None = None
    epoch: int | None = None
    train_loss: float | None = None

    def metric(self, name: str) -> float:
        value = {"harmonic": self.harmonic, "closed": self.closed_acc, "ausuc": self.ausuc}[name]
        return -math.inf if value is None else value

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_pair_acc"] = {str(k): v for k, v in self.per_pair_acc.items()}
        d["curve"] = [[_json_float(c), s, u] for c, s, u in self.curve]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _json_float(c):
    if c == math.inf:
        return "inf"
    if c == -math.inf:
        return "-inf"
    return c


def evaluate_model(model, weights, part, split, which: str, vocab, balanced: bool = True,
                   curve: bool = True, diagnostics: bool = False, full_dataset=None,
                   pida_samples: int = 500, seed: int = 0) -> EvalReport:
    """Score one dataset part (``val`` or ``test``) and compute every metric."""
    candidates = np.asarray(split.candidates(which), dtype=np.int64)
    unseen = split.unseen_for(which)
    truths = part.pair_ids(vocab)
    scores = model.score(part.features, candidates, weights)
    preds = predict(scores)
    seen_acc, unseen_acc, harm = evaluate_open(scores, truths, split.seen, balanced)
    has_unseen = np.isin(truths, np.asarray(unseen)).any()
    closed = evaluate_closed(scores, truths, unseen, balanced) if has_unseen else None
    area, points = (None, [])
    if seen_acc is not None and unseen_acc is not None:
        area, points = ausuc(scores, truths, split.seen, balanced=balanced)
    u2s, u2u = confusion_counts(preds, truths, split.seen, unseen)
    report = EvalReport(
        seen_acc, unseen_acc, harm, closed, area,
        per_pair_acc=per_pair_accuracy(preds, truths), curve=points if curve else [],
        u_to_s=u2s, u_to_u=u2u, split=which, seed=seed,
    )
    if diagnostics:
        report.cond_hsic_attr, report.cond_hsic_obj = conditional_hsic_residuals(
            model, part.features, part.attr_ids, part.obj_ids, vocab.num_attrs, vocab.num_objs)
        if full_dataset is not None and full_dataset.provenance == "scm" and full_dataset.scm is not None:
            report.pida_attr, report.pida_obj = pida(model, full_dataset, vocab, pida_samples, seed)
    return report
