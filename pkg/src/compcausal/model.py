"""Causal embedding model: label embeddings, generator, inverse maps and losses.

Five learned mappings make up the model:

* ``h_a``, ``h_o``: one-hot label -> core-feature prototype (attribute / object)
* ``g``: ``[h_a; h_o]`` -> feature-space prototype of the pair
* ``ginv_a``, ``ginv_o``: feature vector -> recovered core features

plus linear heads ``f_a``, ``f_o``, ``f_ga``, ``f_go`` that keep the
embeddings label-informative, and an optional linear projection ``proj``
for imported (pretrained) features.

A test sample is labelled with the pair whose Gaussian intervention model
explains it best, i.e. the pair minimising::

    w_a ||phi_a - h_a||^2 + w_o ||phi_o - h_o||^2 + w_x ||x - g(h_a, h_o)||^2
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .diffcore import MlpSpec, ParamStore, Tape, init_mlp, mlp_forward, ops
from .diffcore.nn import load_params, load_specs, save_params, save_specs
from .diffcore.tensor import Tensor
from .errors import ConfigError, ContractError, DomainError
from .hsic import loss_indep, one_hot

CORE_GROUP_A = ("h_a", "ginv_a", "f_a")
CORE_GROUP_O = ("h_o", "ginv_o", "f_o")
SHARED = ("g", "f_ga", "f_go")


@dataclass(frozen=True)
class LossWeights:
    lambda_oh: float = 0.1
    lambda_rep: float = 0.1
    lambda_icore: float = 100.0
    lambda_ig: float = 0.0
    lambda_ao: float = 1.0
    margin: float = 0.5
    w_a: float = 1.0
    w_o: float = 1.0
    w_x: float = 1.0
    freq_weighting: bool = True

    def __post_init__(self):
        for name, value in asdict(self).items():
            if name != "freq_weighting" and not (value >= 0 and np.isfinite(value)):
                raise ConfigError(f"{name} must be finite and >= 0, got {value}")
        if self.margin <= 0:
            raise ConfigError("triplet margin must be > 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ScoreMatrix:
    """Scores (higher is better) for each sample against each candidate pair."""

    scores: np.ndarray
    candidates: np.ndarray

    def __post_init__(self):
        self.candidates = np.asarray(self.candidates, dtype=np.int64)
        order = np.argsort(self.candidates, kind="stable")
        if (order != np.arange(order.size)).any():
            self.candidates = self.candidates[order]
            self.scores = self.scores[:, order]


def predict(scores: ScoreMatrix) -> np.ndarray:
    """Best candidate per row; ties go to the lowest pair id."""
    return scores.candidates[np.argmax(scores.scores, axis=1)]


@dataclass
class Batch:
    x: np.ndarray
    attr_ids: np.ndarray
    obj_ids: np.ndarray
    neg_pairs: np.ndarray | None = None

    def pair_ids(self, num_objs: int) -> np.ndarray:
        return self.attr_ids * num_objs + self.obj_ids


def sample_negatives(rng: np.random.Generator, pos_pairs, seen) -> np.ndarray:
    """One negative per anchor, uniform over seen pairs other than the positive."""
    seen = np.asarray(sorted(seen), dtype=np.int64)
    pos_pairs = np.asarray(pos_pairs, dtype=np.int64)
    if seen.size < 2:
        raise DomainError("need at least 2 seen pairs to draw negatives")
    pos_idx = np.searchsorted(seen, pos_pairs)
    draw = rng.integers(0, seen.size - 1, size=pos_pairs.size)
    draw = draw + (draw >= pos_idx)
    return seen[draw]


def frequency_weights(labels) -> np.ndarray:
    """Inverse in-batch label frequency, normalised to mean 1."""
    labels = np.asarray(labels)
    _, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    w = 1.0 / counts[inverse]
    return (w * labels.size / w.sum()).reshape(-1, 1)


@dataclass
class CausalModel:
    num_attrs: int
    num_objs: int
    specs: dict
    store: ParamStore = field(default_factory=ParamStore)
    seen: tuple = ()
    kind: str = "causal"

    @property
    def projected(self) -> bool:
        return "proj" in self.specs

    @property
    def d_attr(self) -> int:
        return self.specs["h_a"].output_dim

    def param_names(self, modules) -> list[str]:
        names = []
        for m in modules:
            if m in self.specs:
                names += self.store.names(m)
        return names

    def param_groups(self, schedule: str) -> list[list[str]]:
        if schedule == "joint":
            return [list(self.store.params)]
        if self.projected:
            raise ConfigError("alternating schedule is not available with a learned projection")
        return [self.param_names(CORE_GROUP_A + SHARED), self.param_names(CORE_GROUP_O + SHARED)]

    def _f(self, name, x, mode="eval", tape=None, **kw):
        return mlp_forward(self.specs[name], self.store, x, mode=mode, prefix=name, tape=tape, **kw)

    def embed_x(self, x, mode="eval", tape=None):
        return self._f("proj", x, mode, tape) if self.projected else ops.as_tensor(x)

    def label_tables(self, tape=None):
        h_a = self._f("h_a", np.eye(self.num_attrs), "eval", tape)
        h_o = self._f("h_o", np.eye(self.num_objs), "eval", tape)
        return h_a, h_o

    def prototypes(self, pairs, tables=None, tape=None) -> Tensor:
        """g(h_a, h_o) for each pair id."""
        h_a, h_o = tables if tables is not None else self.label_tables(tape)
        a, o = np.divmod(np.asarray(pairs, dtype=np.int64), self.num_objs)
        z = ops.concat_cols(ops.gather_rows(h_a, a), ops.gather_rows(h_o, o))
        return self._f("g", z, "eval", tape)

    def loss(self, batch, weights, tape=None, parts=None):
        return total_loss(self, batch, weights, tape, parts)

    def score(self, x, candidates, weights) -> ScoreMatrix:
        return score_pairs(self, x, candidates, weights)

    def cores(self, x):
        return recover_cores(self, x)

    def save(self, out_dir, weights: LossWeights | None = None) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_params(self.store, out_dir / "model.npz")
        extra = {"kind": self.kind, "num_attrs": self.num_attrs, "num_objs": self.num_objs, "seen": list(self.seen)}
        if weights is not None:
            extra["loss_weights"] = weights.to_dict()
        save_specs(self.specs, extra, out_dir / "model.json")


def build_causal_model(
    num_attrs: int,
    num_objs: int,
    x_dim: int,
    seed: int = 0,
    d_h: int = 150,
    d_core: int | None = None,
    h_layers: int = 0,
    g_layers: int = 1,
    ginv_layers: int = 1,
    project: bool = False,
    seen=(),
) -> CausalModel:
    """Randomly initialised model. ``*_layers`` count hidden layers."""
    d_core = d_core or d_h
    feat_dim = d_h if project else x_dim
    specs = {
        "h_a": MlpSpec(num_attrs, d_core, d_h, h_layers, "relu"),
        "h_o": MlpSpec(num_objs, d_core, d_h, h_layers, "relu"),
        "g": MlpSpec(2 * d_core, feat_dim, d_h, g_layers, "relu"),
        "ginv_a": MlpSpec(feat_dim, d_core, d_h, ginv_layers, "leaky_relu", True),
        "ginv_o": MlpSpec(feat_dim, d_core, d_h, ginv_layers, "leaky_relu", True),
        "f_a": MlpSpec(d_core, num_attrs, num_hidden_layers=0),
        "f_o": MlpSpec(d_core, num_objs, num_hidden_layers=0),
        "f_ga": MlpSpec(feat_dim, num_attrs, num_hidden_layers=0),
        "f_go": MlpSpec(feat_dim, num_objs, num_hidden_layers=0),
    }
    if project:
        specs["proj"] = MlpSpec(x_dim, d_h, num_hidden_layers=0)
    store = ParamStore()
    rng = np.random.default_rng(seed)
    for name in sorted(specs):
        init_mlp(specs[name], store, name, rng)
    return CausalModel(num_attrs, num_objs, specs, store, tuple(sorted(seen)))


def load_model(model_dir):
    """Load any model saved by ``save`` (causal, visprod or le)."""
    from .baselines import LabelEmbedModel, VisProdModel

    model_dir = Path(model_dir)
    specs, extra = load_specs(model_dir / "model.json")
    store = load_params(model_dir / "model.npz")
    cls = {"causal": CausalModel, "visprod": VisProdModel, "le": LabelEmbedModel}[extra["kind"]]
    model = cls(extra["num_attrs"], extra["num_objs"], specs, store, tuple(extra.get("seen", ())))
    weights = LossWeights(**extra["loss_weights"]) if "loss_weights" in extra else LossWeights()
    return model, weights


# -- inference --------------------------------------------------------------

def recover_cores(model: CausalModel, x, mode: str = "eval", tape: Tape | None = None):
    """Recovered core features ``(phi_a, phi_o)`` from raw features.

    The projection is applied first when the model has one. Returns tensors
    when ``tape`` is given, arrays otherwise.
    """
    xe = model.embed_x(x, mode, tape)
    phi_a = model._f("ginv_a", xe, mode, tape)
    phi_o = model._f("ginv_o", xe, mode, tape)
    if tape is None:
        return phi_a.data, phi_o.data
    return phi_a, phi_o


def _pairwise_sq(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    out = np.empty((u.shape[0], v.shape[0]))
    for j in range(v.shape[0]):
        d = u - v[j]
        out[:, j] = np.einsum("ij,ij->i", d, d)
    return out


def score_pairs(model: CausalModel, x, candidates, weights: LossWeights) -> ScoreMatrix:
    """Negated weighted distance sum for every (sample, candidate pair)."""
    candidates = np.asarray(candidates, dtype=np.int64).reshape(-1)
    if candidates.size == 0:
        raise DomainError("empty candidate list")
    xe = model.embed_x(x).data
    phi_a, phi_o = recover_cores(model, x)
    h_a, h_o = model.label_tables()
    a, o = np.divmod(candidates, model.num_objs)
    protos = model.prototypes(candidates, (h_a, h_o)).data
    scores = np.zeros((xe.shape[0], candidates.size))
    if weights.w_a:
        scores += weights.w_a * _pairwise_sq(phi_a, h_a.data)[:, a]
    if weights.w_o:
        scores += weights.w_o * _pairwise_sq(phi_o, h_o.data)[:, o]
    if weights.w_x:
        scores += weights.w_x * _pairwise_sq(xe, protos)
    return ScoreMatrix(-scores, candidates)


# -- training losses --------------------------------------------------------

def _check_seen(model, batch: Batch):
    if model.seen:
        bad = ~np.isin(batch.pair_ids(model.num_objs), model.seen)
        if bad.any():
            raise ContractError(f"batch contains {int(bad.sum())} rows with unseen pairs")


def _forward(model: CausalModel, batch: Batch, tape: Tape, weights: LossWeights, need_negatives: bool):
    _check_seen(model, batch)
    xe = model.embed_x(batch.x, "train", tape)
    phi_a = model._f("ginv_a", xe, "train", tape)
    phi_o = model._f("ginv_o", xe, "train", tape)
    tables = model.label_tables(tape)
    out = {"x": xe, "phi_a": phi_a, "phi_o": phi_o,
           "h_a": ops.gather_rows(tables[0], batch.attr_ids),
           "h_o": ops.gather_rows(tables[1], batch.obj_ids), "tables": tables}
    pos = batch.pair_ids(model.num_objs)
    if need_negatives or weights.lambda_ig:
        uniq, inv = np.unique(pos, return_inverse=True)
        out["g_pos"] = ops.gather_rows(model.prototypes(uniq, tables, tape), inv)
    if need_negatives:
        if batch.neg_pairs is None:
            raise ContractError("triplet term needs negative pairs in the batch")
        uniq, inv = np.unique(batch.neg_pairs, return_inverse=True)
        out["g_neg"] = ops.gather_rows(model.prototypes(uniq, tables, tape), inv)
    return out


def _data_term(fw, batch: Batch, weights: LossWeights) -> Tensor:
    d_a = ops.sq_dist(fw["h_a"], fw["phi_a"])
    d_o = ops.sq_dist(fw["h_o"], fw["phi_o"])
    if weights.freq_weighting:
        d_a = d_a * frequency_weights(batch.attr_ids)
        d_o = d_o * frequency_weights(batch.obj_ids)
    loss = ops.mean(d_a) + ops.mean(d_o)
    if weights.lambda_ao:
        gap = ops.sq_dist(fw["x"], fw["g_pos"]) - ops.sq_dist(fw["x"], fw["g_neg"]) + weights.margin
        loss = loss + ops.scale(ops.mean(ops.hinge(gap)), weights.lambda_ao)
    return loss


def _invert_term(model: CausalModel, fw, batch: Batch, weights: LossWeights, tape) -> Tensor:
    loss = Tensor(np.zeros((1, 1)))
    if weights.lambda_icore:
        ce = ops.mean(ops.softmax_cross_entropy(model._f("f_a", fw["h_a"], "eval", tape), batch.attr_ids))
        ce = ce + ops.mean(ops.softmax_cross_entropy(model._f("f_o", fw["h_o"], "eval", tape), batch.obj_ids))
        loss = loss + ops.scale(ce, weights.lambda_icore)
    if weights.lambda_ig:
        ce = ops.mean(ops.softmax_cross_entropy(model._f("f_ga", fw["g_pos"], "eval", tape), batch.attr_ids))
        ce = ce + ops.mean(ops.softmax_cross_entropy(model._f("f_go", fw["g_pos"], "eval", tape), batch.obj_ids))
        loss = loss + ops.scale(ce, weights.lambda_ig)
    return loss


def _indep_term(model: CausalModel, fw, batch: Batch, weights: LossWeights) -> Tensor:
    if not (weights.lambda_oh or weights.lambda_rep):
        return Tensor(np.zeros((1, 1)))
    return loss_indep(
        fw["phi_a"], fw["phi_o"],
        one_hot(batch.attr_ids, model.num_attrs), one_hot(batch.obj_ids, model.num_objs),
        batch.attr_ids, batch.obj_ids, weights.lambda_oh, weights.lambda_rep,
    )


def loss_data(model: CausalModel, batch: Batch, weights: LossWeights, tape: Tape | None = None) -> Tensor:
    """Embedding distances plus ``lambda_ao`` times the triplet hinge."""
    fw = _forward(model, batch, tape, weights, bool(weights.lambda_ao))
    return _data_term(fw, batch, weights)


def loss_invert(model: CausalModel, batch: Batch, weights: LossWeights, tape: Tape | None = None) -> Tensor:
    fw = _forward(model, batch, tape, weights, False)
    return _invert_term(model, fw, batch, weights, tape)


def model_loss_indep(model: CausalModel, batch: Batch, weights: LossWeights, tape: Tape | None = None) -> Tensor:
    fw = _forward(model, batch, tape, weights, False)
    return _indep_term(model, fw, batch, weights)


def total_loss(model: CausalModel, batch: Batch, weights: LossWeights, tape: Tape | None = None,
               parts: dict | None = None) -> Tensor:
    """``loss_data + loss_indep + loss_invert`` from one shared forward pass.

    If ``parts`` is a dict it receives the three component values.
    """
    fw = _forward(model, batch, tape, weights, bool(weights.lambda_ao))
    ld = _data_term(fw, batch, weights)
    li = _indep_term(model, fw, batch, weights)
    lv = _invert_term(model, fw, batch, weights, tape)
    if parts is not None:
        parts.update(data=ld.item(), indep=li.item(), invert=lv.item())
    return ld + li + lv


def oracle_model(scm, vocab_sizes: tuple[int, int]) -> CausalModel:
    """Linear model holding the generator's ground truth.

    Needs an identity-concat generator: ``h_a``/``h_o`` return the true label
    tables, ``g`` is the identity and the inverse maps select the attribute /
    object coordinates of ``x``.
    """
    if scm.generator != "identity":
        raise ConfigError("oracle_model needs an identity-concat generator")
    na, no = vocab_sizes
    da, do = scm.d_attr, scm.d_obj
    dx = da + do
    specs = {
        "h_a": MlpSpec(na, da, num_hidden_layers=0),
        "h_o": MlpSpec(no, do, num_hidden_layers=0),
        "g": MlpSpec(dx, dx, num_hidden_layers=0),
        "ginv_a": MlpSpec(dx, da, num_hidden_layers=0),
        "ginv_o": MlpSpec(dx, do, num_hidden_layers=0),
        "f_a": MlpSpec(da, na, num_hidden_layers=0),
        "f_o": MlpSpec(do, no, num_hidden_layers=0),
        "f_ga": MlpSpec(dx, na, num_hidden_layers=0),
        "f_go": MlpSpec(dx, no, num_hidden_layers=0),
    }
    eye = np.eye(dx)
    p = {
        "h_a.0.weight": scm.attr_table.copy(), "h_o.0.weight": scm.obj_table.copy(),
        "g.0.weight": eye.copy(), "ginv_a.0.weight": eye[:, :da].copy(), "ginv_o.0.weight": eye[:, da:].copy(),
        "f_a.0.weight": scm.attr_table.T.copy(), "f_o.0.weight": scm.obj_table.T.copy(),
        "f_ga.0.weight": np.zeros((dx, na)), "f_go.0.weight": np.zeros((dx, no)),
    }
    for name, spec in specs.items():
        p[f"{name}.0.bias"] = np.zeros((1, spec.output_dim))
    return CausalModel(na, no, specs, ParamStore(params=p))
