"""Synthetic attribute-object data from a structural causal model.

Each sample is generated as::

    phi_a = h*_a + n_a,   phi_o = h*_o + n_o,   x = g*(phi_a, phi_o) + n_x

with independent Gaussian noises. Training pairs come from a Dirichlet-drawn
(confounded) distribution over the seen pairs; validation and test rows use
a fixed count per pair. The generator's tables and network are frozen and
never shown to a learner.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, LoadError, SplitError

AO_CLEVR_ATTRS = ("red", "purple", "yellow", "blue", "green", "cyan", "gray", "brown")
AO_CLEVR_OBJS = ("sphere", "cube", "cylinder")
SPLIT_TAGS = ("train", "val", "test")


@dataclass(frozen=True)
class PairVocabulary:
    attrs: tuple
    objs: tuple

    def __post_init__(self):
        object.__setattr__(self, "attrs", tuple(self.attrs))
        object.__setattr__(self, "objs", tuple(self.objs))
        if len(self.attrs) < 2 or len(self.objs) < 2:
            raise ConfigError("need at least 2 attributes and 2 objects")
        if len(set(self.attrs)) != len(self.attrs) or len(set(self.objs)) != len(self.objs):
            raise ConfigError("label names must be unique")

    @classmethod
    def default(cls) -> "PairVocabulary":
        return cls(AO_CLEVR_ATTRS, AO_CLEVR_OBJS)

    @classmethod
    def sized(cls, num_attrs: int, num_objs: int) -> "PairVocabulary":
        if (num_attrs, num_objs) == (len(AO_CLEVR_ATTRS), len(AO_CLEVR_OBJS)):
            return cls.default()
        return cls(tuple(f"a{i}" for i in range(num_attrs)), tuple(f"o{i}" for i in range(num_objs)))

    @property
    def num_attrs(self) -> int:
        return len(self.attrs)

    @property
    def num_objs(self) -> int:
        return len(self.objs)

    @property
    def num_pairs(self) -> int:
        return self.num_attrs * self.num_objs

    def pair_id(self, attr, obj):
        return np.asarray(attr) * self.num_objs + np.asarray(obj)

    def split_pair(self, pair):
        pair = np.asarray(pair)
        return pair // self.num_objs, pair % self.num_objs

    def pair_name(self, pair: int) -> tuple[str, str]:
        a, o = divmod(int(pair), self.num_objs)
        return self.attrs[a], self.objs[o]


@dataclass(frozen=True)
class SplitSpec:
    """Seen pairs, unseen test pairs and unseen validation pairs (as pair ids)."""

    seen: tuple
    unseen: tuple
    val_unseen: tuple
    mode: str = "overlapping"
    ratio: str = ""
    seed: int = 0

    def __post_init__(self):
        for name in ("seen", "unseen", "val_unseen"):
            object.__setattr__(self, name, tuple(sorted(int(p) for p in getattr(self, name))))
        if self.mode not in ("overlapping", "non_overlapping"):
            raise ConfigError(f"unknown split mode {self.mode!r}")

    def validate(self, vocab: PairVocabulary) -> None:
        S, U, V = set(self.seen), set(self.unseen), set(self.val_unseen)
        if S & U or S & V:
            raise SplitError("seen and unseen pairs overlap")
        if any(p < 0 or p >= vocab.num_pairs for p in S | U | V):
            raise SplitError("pair id outside the vocabulary")
        if self.mode == "non_overlapping" and U & V:
            raise SplitError("validation-unseen and test-unseen pairs overlap")
        missing = _uncovered(vocab, self.seen)
        if missing:
            raise SplitError(f"label {missing[0]!r} appears in no seen pair")

    def candidates(self, part: str) -> tuple:
        """Candidate pair ids for the open setting of ``val`` or ``test``."""
        unseen = self.val_unseen if part == "val" else self.unseen
        return tuple(sorted(set(self.seen) | set(unseen)))

    def unseen_for(self, part: str) -> tuple:
        return self.val_unseen if part == "val" else self.unseen


def _uncovered(vocab: PairVocabulary, seen) -> list[str]:
    a, o = vocab.split_pair(np.asarray(list(seen), dtype=np.int64))
    missing = [vocab.attrs[i] for i in range(vocab.num_attrs) if i not in set(a.tolist())]
    missing += [vocab.objs[i] for i in range(vocab.num_objs) if i not in set(o.tolist())]
    return missing


def parse_ratio(tag: str) -> float:
    """``"u:s"`` -> u / (u + s)."""
    try:
        u, s = (float(t) for t in str(tag).split(":"))
    except ValueError:
        raise ConfigError(f"bad ratio tag {tag!r}; expected 'u:s'") from None
    if u <= 0 or s <= 0:
        raise ConfigError(f"bad ratio tag {tag!r}")
    return u / (u + s)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def sample_split(
    vocab: PairVocabulary,
    unseen_fraction: float,
    mode: str = "overlapping",
    seed: int = 0,
    val_fraction: float = 0.2,
    max_retries: int = 1000,
    ratio: str = "",
) -> SplitSpec:
    """Draw a seen/unseen partition in which every label keeps a seen pair.

    ``|U| = max(2, round_half_up(unseen_fraction * N))`` where ``N`` is the
    number of pairs available to the seen/unseen partition: all pairs in
    overlapping mode, or all pairs minus ``round_half_up(val_fraction * total)``
    validation-unseen pairs in non-overlapping mode.
    """
    if not 0 < unseen_fraction < 1:
        raise ConfigError("unseen_fraction must be in (0, 1)")
    if mode not in ("overlapping", "non_overlapping"):
        raise ConfigError(f"unknown split mode {mode!r}")
    total = vocab.num_pairs
    n_val = _round_half_up(val_fraction * total) if mode == "non_overlapping" else 0
    available = total - n_val
    n_unseen = max(2, _round_half_up(unseen_fraction * available))
    if n_unseen >= available or n_val < 0:
        raise SplitError(f"cannot place {n_unseen} unseen pairs among {available}")

    rng = np.random.default_rng(seed)
    missing: list[str] = []
    for _ in range(max_retries):
        perm = rng.permutation(total)
        val_unseen = perm[:n_val]
        unseen = perm[n_val:n_val + n_unseen]
        seen = perm[n_val + n_unseen:]
        missing = _uncovered(vocab, seen)
        if not missing:
            if mode == "overlapping":
                val_unseen = unseen
            return SplitSpec(tuple(seen), tuple(unseen), tuple(val_unseen), mode=mode, ratio=ratio, seed=seed)
    raise SplitError(f"no valid split after {max_retries} tries; label {missing[0]!r} has no seen pair")


def pair_frequencies(split: SplitSpec, alpha: float, seed: int, uniform: bool = False) -> np.ndarray:
    """Probability of each seen pair (aligned with ``split.seen``)."""
    k = len(split.seen)
    if uniform:
        return np.full(k, 1.0 / k)
    if not alpha > 0:
        raise ConfigError("alpha must be > 0")
    return np.random.default_rng(seed).dirichlet(np.full(k, float(alpha)))


def sample_pair_joint(split: SplitSpec, alpha: float, seed: int, n: int, uniform: bool = False) -> np.ndarray:
    """``n`` seen pair ids drawn i.i.d. from a Dirichlet(alpha) pair distribution.

    Small ``alpha`` concentrates mass on few pairs (strong attribute-object
    confounding); ``uniform=True`` is the alpha -> infinity limit.
    """
    probs = pair_frequencies(split, alpha, seed, uniform)
    rng = np.random.default_rng([seed, 1])
    return np.asarray(split.seen, dtype=np.int64)[rng.choice(len(probs), size=n, p=probs)]


@dataclass
class ScmConfig:
    """A frozen generator: label tables, mixing network and noise scales."""

    attr_table: np.ndarray
    obj_table: np.ndarray
    generator: str = "mlp"
    weights: dict = field(default_factory=dict)
    sigma_a: float = 0.05
    sigma_o: float = 0.05
    sigma_x: float = 0.05
    alpha: float = 0.3
    uniform_pairs: bool = False
    train_per_pair: int = 300
    val_per_pair: int = 60
    test_per_pair: int = 100

    def __post_init__(self):
        if min(self.sigma_a, self.sigma_o, self.sigma_x) < 0:
            raise ConfigError("noise scales must be >= 0")
        if self.generator not in ("mlp", "identity"):
            raise ConfigError(f"unknown generator {self.generator!r}")

    @property
    def d_attr(self) -> int:
        return self.attr_table.shape[1]

    @property
    def d_obj(self) -> int:
        return self.obj_table.shape[1]

    @property
    def d_x(self) -> int:
        if self.generator == "identity":
            return self.d_attr + self.d_obj
        return self.weights["w2"].shape[1]

    def mix(self, phi_a: np.ndarray, phi_o: np.ndarray) -> np.ndarray:
        """The noiseless generator network g*."""
        z = np.concatenate([phi_a, phi_o], axis=1)
        if self.generator == "identity":
            return z
        w = self.weights
        return np.tanh(z @ w["w1"] + w["b1"]) @ w["w2"] + w["b2"]

    def sample(self, attr_ids, obj_ids, rng: np.random.Generator) -> np.ndarray:
        attr_ids = np.asarray(attr_ids, dtype=np.int64)
        obj_ids = np.asarray(obj_ids, dtype=np.int64)
        n = attr_ids.size
        phi_a = self.attr_table[attr_ids] + self.sigma_a * rng.standard_normal((n, self.d_attr))
        phi_o = self.obj_table[obj_ids] + self.sigma_o * rng.standard_normal((n, self.d_obj))
        x = self.mix(phi_a, phi_o)
        return x + self.sigma_x * rng.standard_normal(x.shape)

    def save(self, path) -> None:
        meta = {k: getattr(self, k) for k in (
            "generator", "sigma_a", "sigma_o", "sigma_x", "alpha", "uniform_pairs",
            "train_per_pair", "val_per_pair", "test_per_pair")}
        arrays = {"attr_table": self.attr_table, "obj_table": self.obj_table}
        arrays.update({f"w/{k}": v for k, v in self.weights.items()})
        arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "ScmConfig":
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            weights = {k[2:]: data[k] for k in data.files if k.startswith("w/")}
            return cls(attr_table=data["attr_table"], obj_table=data["obj_table"], weights=weights, **meta)


def make_scm(
    vocab: PairVocabulary,
    seed: int = 0,
    d_attr: int = 8,
    d_obj: int = 8,
    d_x: int = 16,
    hidden: int = 32,
    generator: str = "mlp",
    **knobs,
) -> ScmConfig:
    """Draw label tables ~ N(0, I) and, for ``generator="mlp"``, a random
    one-hidden-layer tanh network on ``[phi_a; phi_o]``."""
    rng = np.random.default_rng([seed, 7])
    attr_table = rng.standard_normal((vocab.num_attrs, d_attr))
    obj_table = rng.standard_normal((vocab.num_objs, d_obj))
    weights = {}
    if generator == "mlp":
        d_in = d_attr + d_obj
        weights = {
            "w1": rng.standard_normal((d_in, hidden)) / np.sqrt(d_in),
            "b1": 0.1 * rng.standard_normal((1, hidden)),
            "w2": rng.standard_normal((hidden, d_x)) / np.sqrt(hidden),
            "b2": 0.1 * rng.standard_normal((1, d_x)),
        }
    return ScmConfig(attr_table, obj_table, generator=generator, weights=weights, **knobs)


@dataclass
class FeatureDataset:
    features: np.ndarray
    attr_ids: np.ndarray
    obj_ids: np.ndarray
    split: np.ndarray
    provenance: str = "scm"
    scm: ScmConfig | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.attr_ids = np.asarray(self.attr_ids, dtype=np.int64)
        self.obj_ids = np.asarray(self.obj_ids, dtype=np.int64)
        self.split = np.asarray(self.split, dtype="<U5")
        n = self.features.shape[0]
        if not (self.attr_ids.size == self.obj_ids.size == self.split.size == n):
            raise ConfigError("dataset columns have different lengths")
        if self.provenance not in ("scm", "imported"):
            raise ConfigError(f"unknown provenance {self.provenance!r}")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def part(self, tag: str) -> "FeatureDataset":
        mask = self.split == tag
        return replace(
            self, features=self.features[mask], attr_ids=self.attr_ids[mask],
            obj_ids=self.obj_ids[mask], split=self.split[mask],
        )

    def pair_ids(self, vocab: PairVocabulary) -> np.ndarray:
        return vocab.pair_id(self.attr_ids, self.obj_ids)

    def validate(self, vocab: PairVocabulary, split: SplitSpec) -> None:
        if not np.isfinite(self.features).all():
            raise LoadError("features contain non-finite values")
        if self.attr_ids.size and (self.attr_ids.max() >= vocab.num_attrs or self.obj_ids.max() >= vocab.num_objs):
            raise LoadError("label id outside the vocabulary")
        if not np.isin(self.split, SPLIT_TAGS).all():
            raise LoadError("unknown split tag")
        pairs = self.pair_ids(vocab)
        for tag, allowed in (("train", split.seen), ("val", split.candidates("val")), ("test", split.candidates("test"))):
            bad = (self.split == tag) & ~np.isin(pairs, allowed)
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                a, o = vocab.pair_name(pairs[i])
                raise LoadError(f"{tag} row {i} has pair ({a}, {o}) outside its allowed set")

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.features, self.attr_ids, self.obj_ids):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update("|".join(self.split.tolist()).encode())
        return h.hexdigest()


def generate_dataset(vocab: PairVocabulary, split: SplitSpec, scm: ScmConfig, seed: int) -> FeatureDataset:
    """Sample train/val/test rows from the generator; deterministic per seed."""
    split.validate(vocab)
    ss = np.random.SeedSequence(seed)
    pair_seed, noise_seed = ss.generate_state(2)
    rng = np.random.default_rng(noise_seed)

    n_train = scm.train_per_pair * len(split.seen)
    train_pairs = sample_pair_joint(split, scm.alpha, int(pair_seed), n_train, uniform=scm.uniform_pairs)
    val_pairs = np.repeat(np.asarray(split.candidates("val"), dtype=np.int64), scm.val_per_pair)
    test_pairs = np.repeat(np.asarray(split.candidates("test"), dtype=np.int64), scm.test_per_pair)

    feats, attrs, objs, tags = [], [], [], []
    for tag, pairs in (("train", train_pairs), ("val", val_pairs), ("test", test_pairs)):
        a, o = vocab.split_pair(pairs)
        feats.append(scm.sample(a, o, rng))
        attrs.append(a)
        objs.append(o)
        tags.append(np.full(pairs.size, tag))
    return FeatureDataset(
        np.concatenate(feats), np.concatenate(attrs), np.concatenate(objs), np.concatenate(tags),
        provenance="scm", scm=scm,
    )


# -- file formats -----------------------------------------------------------
#
# features.csv: header f0,...,f{d-1},attr,obj,split; floats written with
#   repr() so they parse back bit-exactly; attr/obj are label names.
# splits.json: {"attrs": [...], "objs": [...], "seen": [[a, o], ...],
#   "unseen": [[a, o], ...], "val_unseen": [[a, o], ...]} plus optional
#   "mode", "ratio", "seed" metadata.

SPLIT_KEYS = {"attrs", "objs", "seen", "unseen", "val_unseen"}
SPLIT_META = {"mode", "ratio", "seed"}


def export_dataset(dataset: FeatureDataset, vocab: PairVocabulary, split: SplitSpec, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "features.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(dataset.dim)] + ["attr", "obj", "split"])
        for x, a, o, s in zip(dataset.features, dataset.attr_ids, dataset.obj_ids, dataset.split):
            writer.writerow([repr(float(v)) for v in x] + [vocab.attrs[a], vocab.objs[o], s])

    def names(pairs):
        return [list(vocab.pair_name(p)) for p in pairs]

    payload = {
        "attrs": list(vocab.attrs), "objs": list(vocab.objs),
        "seen": names(split.seen), "unseen": names(split.unseen), "val_unseen": names(split.val_unseen),
        "mode": split.mode, "ratio": split.ratio, "seed": split.seed,
    }
    (out_dir / "splits.json").write_text(json.dumps(payload, indent=1))
    if dataset.scm is not None:
        dataset.scm.save(out_dir / "scm.npz")


def load_splits(splits_path) -> tuple[PairVocabulary, SplitSpec]:
    try:
        payload = json.loads(Path(splits_path).read_text())
    except json.JSONDecodeError as exc:
        raise LoadError(f"{splits_path}: invalid JSON ({exc.msg})", line=exc.lineno) from None
    missing = SPLIT_KEYS - set(payload)
    unknown = set(payload) - SPLIT_KEYS - SPLIT_META
    if missing or unknown:
        raise LoadError(f"{splits_path}: missing keys {sorted(missing)}, unknown keys {sorted(unknown)}")
    vocab = PairVocabulary(payload["attrs"], payload["objs"])
    a_index = {n: i for i, n in enumerate(vocab.attrs)}
    o_index = {n: i for i, n in enumerate(vocab.objs)}

    def ids(key):
        out = []
        for item in payload[key]:
            if len(item) != 2 or item[0] not in a_index or item[1] not in o_index:
                raise LoadError(f"{splits_path}: bad pair {item!r} in {key!r}")
            out.append(int(vocab.pair_id(a_index[item[0]], o_index[item[1]])))
        return out

    unseen, val_unseen = ids("unseen"), ids("val_unseen")
    mode = payload.get("mode") or ("overlapping" if set(unseen) == set(val_unseen) else "non_overlapping")
    split = SplitSpec(ids("seen"), unseen, val_unseen, mode=mode,
                      ratio=payload.get("ratio", ""), seed=int(payload.get("seed", 0)))
    try:
        split.validate(vocab)
    except SplitError as exc:
        raise LoadError(f"{splits_path}: {exc}") from None
    return vocab, split


def import_features(csv_path, splits_path) -> tuple[PairVocabulary, SplitSpec, FeatureDataset]:
    """Load a feature CSV against its splits file; errors carry the CSV line."""
    vocab, split = load_splits(splits_path)
    a_index = {n: i for i, n in enumerate(vocab.attrs)}
    o_index = {n: i for i, n in enumerate(vocab.objs)}
    allowed = {"train": set(split.seen), "val": set(split.candidates("val")), "test": set(split.candidates("test"))}

    feats, attrs, objs, tags = [], [], [], []
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[-3:] != ["attr", "obj", "split"]:
            raise LoadError("header must end with attr,obj,split", line=1)
        d = len(header) - 3
        if d < 1 or header[:d] != [f"f{i}" for i in range(d)]:
            raise LoadError("feature columns must be f0..f{d-1}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if len(row) != d + 3:
                raise LoadError(f"expected {d + 3} fields, got {len(row)}", line=lineno)
            try:
                x = [float(v) for v in row[:d]]
            except ValueError:
                raise LoadError("non-numeric feature value", line=lineno) from None
            if not all(math.isfinite(v) for v in x):
                raise LoadError("non-finite feature value", line=lineno)
            a_name, o_name, tag = row[d:]
            if a_name not in a_index:
                raise LoadError(f"unknown attribute {a_name!r}", line=lineno)
            if o_name not in o_index:
                raise LoadError(f"unknown object {o_name!r}", line=lineno)
            if tag not in allowed:
                raise LoadError(f"unknown split {tag!r}", line=lineno)
            a, o = a_index[a_name], o_index[o_name]
            if int(vocab.pair_id(a, o)) not in allowed[tag]:
                raise LoadError(f"{tag} row has pair ({a_name}, {o_name}) outside its allowed set", line=lineno)
            feats.append(x)
            attrs.append(a)
            objs.append(o)
            tags.append(tag)
    features = np.asarray(feats, dtype=np.float64).reshape(len(feats), d)
    return vocab, split, FeatureDataset(features, attrs, objs, tags, provenance="imported")


def load_dataset_dir(path) -> tuple[PairVocabulary, SplitSpec, FeatureDataset]:
    """Load ``features.csv`` + ``splits.json``; an ``scm.npz`` next to them
    restores SCM provenance (needed for interventional diagnostics)."""
    path = Path(path)
    vocab, split, ds = import_features(path / "features.csv", path / "splits.json")
    if (path / "scm.npz").exists():
        ds = replace(ds, provenance="scm", scm=ScmConfig.load(path / "scm.npz"))
    return vocab, split, ds
