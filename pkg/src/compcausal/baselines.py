"""Baselines: VisProd, VisProd with conditional-independence loss, label embedding.

VisProd scores a pair as ``log p(a|x) + log p(o|x)`` from two independent
classifiers. VisProd&CI is the same model with the independence loss applied
to the last hidden activations of the two classifiers. LE embeds the pair
label and the feature vector in one space and scores by negative squared
distance, trained with a triplet hinge.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .diffcore import MlpSpec, ParamStore, init_mlp, mlp_forward, ops
from .diffcore.nn import save_params, save_specs
from .diffcore.tensor import Tensor
from .errors import ConfigError, DomainError
from .hsic import loss_indep, one_hot
from .model import Batch, LossWeights, ScoreMatrix, _check_seen, _pairwise_sq


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


@dataclass
class _Base:
    num_attrs: int
    num_objs: int
    specs: dict
    store: ParamStore = field(default_factory=ParamStore)
    seen: tuple = ()

    def _f(self, name, x, mode="eval", tape=None, **kw):
        return mlp_forward(self.specs[name], self.store, x, mode=mode, prefix=name, tape=tape, **kw)

    def param_groups(self, schedule: str) -> list[list[str]]:
        if schedule != "joint":
            raise ConfigError(f"{self.kind} supports only the joint schedule")
        return [list(self.store.params)]

    def save(self, out_dir, weights: LossWeights | None = None) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_params(self.store, out_dir / "model.npz")
        extra = {"kind": self.kind, "num_attrs": self.num_attrs, "num_objs": self.num_objs, "seen": list(self.seen)}
        if weights is not None:
            extra["loss_weights"] = weights.to_dict()
        save_specs(self.specs, extra, out_dir / "model.json")


@dataclass
class VisProdModel(_Base):
    kind: str = "visprod"

    def logits(self, x, mode="eval", tape=None):
        za, act_a = self._f("cls_a", x, mode, tape, return_hidden=True)
        zo, act_o = self._f("cls_o", x, mode, tape, return_hidden=True)
        return za, zo, act_a, act_o

    def loss(self, batch: Batch, weights: LossWeights, tape=None, parts=None) -> Tensor:
        """Mean attribute CE + mean object CE, plus the independence loss on
        the last hidden activations when its weights are non-zero."""
        _check_seen(self, batch)
        za, zo, act_a, act_o = self.logits(batch.x, "train", tape)
        ce = ops.mean(ops.softmax_cross_entropy(za, batch.attr_ids))
        ce = ce + ops.mean(ops.softmax_cross_entropy(zo, batch.obj_ids))
        indep = Tensor(np.zeros((1, 1)))
        if weights.lambda_oh or weights.lambda_rep:
            indep = loss_indep(
                act_a, act_o, one_hot(batch.attr_ids, self.num_attrs), one_hot(batch.obj_ids, self.num_objs),
                batch.attr_ids, batch.obj_ids, weights.lambda_oh, weights.lambda_rep,
            )
        if parts is not None:
            parts.update(data=ce.item(), indep=indep.item(), invert=0.0)
        return ce + indep

    def score(self, x, candidates, weights=None) -> ScoreMatrix:
        candidates = np.asarray(candidates, dtype=np.int64).reshape(-1)
        if candidates.size == 0:
            raise DomainError("empty candidate list")
        za, zo, _, _ = self.logits(x)
        a, o = np.divmod(candidates, self.num_objs)
        return ScoreMatrix(_log_softmax(za.data)[:, a] + _log_softmax(zo.data)[:, o], candidates)

    def cores(self, x):
        _, _, act_a, act_o = self.logits(x)
        return act_a.data, act_o.data


def build_visprod(num_attrs, num_objs, x_dim, seed=0, d_h=150, layers=1, seen=()) -> VisProdModel:
    specs = {
        "cls_a": MlpSpec(x_dim, num_attrs, d_h, layers, "leaky_relu", True),
        "cls_o": MlpSpec(x_dim, num_objs, d_h, layers, "leaky_relu", True),
    }
    store = ParamStore()
    rng = np.random.default_rng(seed)
    for name in sorted(specs):
        init_mlp(specs[name], store, name, rng)
    return VisProdModel(num_attrs, num_objs, specs, store, tuple(sorted(seen)))


def visprod_fit(*args, **kwargs):
    """Train VisProd (independence weights forced to zero)."""
    from .training import fit_model

    return fit_model("visprod", *args, **kwargs)


def visprod_ci_fit(*args, **kwargs):
    from .training import fit_model

    return fit_model("visprod_ci", *args, **kwargs)


def visprod_score(model: VisProdModel, x, candidates) -> ScoreMatrix:
    return model.score(x, candidates)


@dataclass
class LabelEmbedModel(_Base):
    kind: str = "le"

    @property
    def projected(self) -> bool:
        return "proj" in self.specs

    def embed_x(self, x, mode="eval", tape=None):
        return self._f("proj", x, mode, tape) if self.projected else ops.as_tensor(x)

    def embed_pairs(self, pairs, tape=None) -> Tensor:
        a, o = np.divmod(np.asarray(pairs, dtype=np.int64), self.num_objs)
        z = np.concatenate([one_hot(a, self.num_attrs), one_hot(o, self.num_objs)], axis=1)
        return self._f("emb", z, "eval", tape)

    def loss(self, batch: Batch, weights: LossWeights, tape=None, parts=None) -> Tensor:
        """Mean triplet hinge with one negative pair per anchor."""
        _check_seen(self, batch)
        xe = self.embed_x(batch.x, "train", tape)
        pos = batch.pair_ids(self.num_objs)
        uniq, inv = np.unique(np.concatenate([pos, batch.neg_pairs]), return_inverse=True)
        emb = ops.gather_rows(self.embed_pairs(uniq, tape), inv)
        n = pos.size
        e_pos = ops.gather_rows(emb, np.arange(n))
        e_neg = ops.gather_rows(emb, np.arange(n, 2 * n))
        gap = ops.sq_dist(xe, e_pos) - ops.sq_dist(xe, e_neg) + weights.margin
        loss = ops.mean(ops.hinge(gap))
        if parts is not None:
            parts.update(data=loss.item(), indep=0.0, invert=0.0)
        return loss

    def score(self, x, candidates, weights=None) -> ScoreMatrix:
        candidates = np.asarray(candidates, dtype=np.int64).reshape(-1)
        if candidates.size == 0:
            raise DomainError("empty candidate list")
        xe = self.embed_x(x).data
        return ScoreMatrix(-_pairwise_sq(xe, self.embed_pairs(candidates).data), candidates)

    def cores(self, x):
        return None


def build_label_embed(num_attrs, num_objs, x_dim, seed=0, d_h=150, project=False, seen=()) -> LabelEmbedModel:
    emb_dim = d_h if project else x_dim
    specs = {"emb": MlpSpec(num_attrs + num_objs, emb_dim, d_h, 1, "relu")}
    if project:
        specs["proj"] = MlpSpec(x_dim, emb_dim, num_hidden_layers=0)
    store = ParamStore()
    rng = np.random.default_rng(seed)
    for name in sorted(specs):
        init_mlp(specs[name], store, name, rng)
    return LabelEmbedModel(num_attrs, num_objs, specs, store, tuple(sorted(seen)))


def le_fit(*args, **kwargs):
    from .training import fit_model

    return fit_model("le", *args, **kwargs)


def le_score(model: LabelEmbedModel, x, candidates) -> ScoreMatrix:
    return model.score(x, candidates)
