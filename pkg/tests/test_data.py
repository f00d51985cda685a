import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compcausal.data import (
    FeatureDataset,
    PairVocabulary,
    SplitSpec,
    export_dataset,
    generate_dataset,
    import_features,
    load_dataset_dir,
    make_scm,
    pair_frequencies,
    parse_ratio,
    sample_pair_joint,
    sample_split,
)
from compcausal.errors import ConfigError, LoadError, SplitError


def test_default_vocabulary_has_24_pairs():
    vocab = PairVocabulary.default()
    assert (vocab.num_attrs, vocab.num_objs, vocab.num_pairs) == (8, 3, 24)


def test_pair_id_is_a_bijection():
    vocab = PairVocabulary.sized(5, 4)
    a, o = np.meshgrid(np.arange(5), np.arange(4), indexing="ij")
    ids = vocab.pair_id(a.ravel(), o.ravel())
    assert sorted(ids.tolist()) == list(range(20))
    back_a, back_o = vocab.split_pair(ids)
    np.testing.assert_array_equal(back_a, a.ravel())
    np.testing.assert_array_equal(back_o, o.ravel())


def test_vocabulary_needs_two_labels_each():
    with pytest.raises(ConfigError):
        PairVocabulary(("a",), ("x", "y"))


# -- splits -----------------------------------------------------------------

def test_five_five_split_sizes():
    split = sample_split(PairVocabulary.default(), parse_ratio("5:5"), seed=0)
    assert len(split.unseen) == 12 and len(split.seen) == 12


def test_two_eight_split_rounds_to_five():
    split = sample_split(PairVocabulary.default(), parse_ratio("2:8"), seed=3)
    assert len(split.unseen) == 5 and len(split.seen) == 19


def test_coverage_violation_names_a_label():
    vocab = PairVocabulary.sized(2, 6)
    # 12 pairs, 10 unseen leaves 2 seen pairs, which cannot cover 6 objects
    with pytest.raises(SplitError, match="label"):
        sample_split(vocab, 10 / 12, seed=0, max_retries=50)


def test_seven_three_on_default_vocab_cannot_cover_attributes():
    # 7 seen pairs can never cover 8 attributes
    with pytest.raises(SplitError, match="label"):
        sample_split(PairVocabulary.default(), parse_ratio("7:3"), seed=0, max_retries=20)


def test_split_is_deterministic():
    vocab = PairVocabulary.default()
    assert sample_split(vocab, 0.5, seed=42) == sample_split(vocab, 0.5, seed=42)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["2:8", "3:7", "4:6", "5:5", "6:4"]),
       st.sampled_from(["overlapping", "non_overlapping"]))
def test_split_invariants(seed, ratio, mode):
    vocab = PairVocabulary.default()
    split = sample_split(vocab, parse_ratio(ratio), mode=mode, seed=seed)
    split.validate(vocab)
    S, U, V = set(split.seen), set(split.unseen), set(split.val_unseen)
    assert not S & U
    assert S | U | V <= set(range(24))
    if mode == "non_overlapping":
        assert not U & V
        assert len(V) == 5
    else:
        assert U == V


def test_non_overlapping_disjoint_on_many_seeds():
    vocab = PairVocabulary.default()
    for seed in range(200):
        split = sample_split(vocab, 0.5, mode="non_overlapping", seed=seed)
        assert not set(split.unseen) & set(split.val_unseen)


def test_bad_ratio_tag():
    with pytest.raises(ConfigError):
        parse_ratio("5-5")


# -- pair joint ----------------------------------------------------------------

def _split():
    return sample_split(PairVocabulary.default(), 0.5, seed=1)


def test_uniform_flag_within_multinomial_bounds():
    split = _split()
    n = 12000
    pairs = sample_pair_joint(split, 0.3, seed=5, n=n, uniform=True)
    k = len(split.seen)
    counts = np.array([np.sum(pairs == p) for p in split.seen])
    sd = np.sqrt(n * (1 / k) * (1 - 1 / k))
    assert np.all(np.abs(counts - n / k) <= 3 * sd)


def test_frequency_vector_is_deterministic():
    split = _split()
    np.testing.assert_array_equal(pair_frequencies(split, 0.3, 9), pair_frequencies(split, 0.3, 9))


def test_small_alpha_lowers_entropy():
    split = _split()
    pairs = sample_pair_joint(split, 0.3, seed=2, n=10000)
    _, counts = np.unique(pairs, return_counts=True)
    p = counts / counts.sum()
    assert -(p * np.log(p)).sum() < np.log(len(split.seen))


def test_joint_only_draws_seen_pairs():
    split = _split()
    for seed in range(1000):
        pairs = sample_pair_joint(split, 0.3, seed=seed, n=20)
        assert set(pairs.tolist()) <= set(split.seen)


def test_alpha_must_be_positive():
    with pytest.raises(ConfigError):
        sample_pair_joint(_split(), 0.0, seed=0, n=5)


# -- generation ------------------------------------------------------------------

def test_noiseless_identity_rows_equal_tables():
    vocab = PairVocabulary.default()
    split = _split()
    scm = make_scm(vocab, 0, generator="identity", sigma_a=0.0, sigma_o=0.0, sigma_x=0.0,
                   train_per_pair=5, val_per_pair=2, test_per_pair=2)
    ds = generate_dataset(vocab, split, scm, seed=0)
    expected = np.concatenate([scm.attr_table[ds.attr_ids], scm.obj_table[ds.obj_ids]], axis=1)
    np.testing.assert_array_equal(ds.features, expected)


def test_sample_mean_matches_generator_output():
    vocab = PairVocabulary.default()
    scm = make_scm(vocab, 4, sigma_a=0.0, sigma_o=0.0)
    n = 5000
    a, o = np.full(n, 3), np.full(n, 1)
    x = scm.sample(a, o, np.random.default_rng(0))
    target = scm.mix(scm.attr_table[[3]], scm.obj_table[[1]])[0]
    assert np.all(np.abs(x.mean(axis=0) - target) <= 4 * scm.sigma_x / np.sqrt(n))


def test_generated_dataset_invariants_and_determinism():
    vocab = PairVocabulary.default()
    split = _split()
    scm = make_scm(vocab, 0)
    ds = generate_dataset(vocab, split, scm, seed=7)
    ds.validate(vocab, split)
    assert ds.digest() == generate_dataset(vocab, split, scm, seed=7).digest()
    assert ds.digest() != generate_dataset(vocab, split, scm, seed=8).digest()
    assert len(ds.part("train")) == 300 * 12
    assert len(ds.part("test")) == 100 * 24
    assert set(ds.part("train").pair_ids(vocab).tolist()) <= set(split.seen)
    assert ds.dim == 16


def test_negative_sigma_rejected():
    with pytest.raises(ConfigError):
        make_scm(PairVocabulary.default(), 0, sigma_x=-1.0)


# -- import / export -----------------------------------------------------------------

def _write_splits(path, seen, unseen):
    payload = {"attrs": ["red", "blue"], "objs": ["cube", "ball"], "seen": seen, "unseen": unseen, "val_unseen": unseen}
    path.write_text(json.dumps(payload))


def test_three_row_file(tmp_path):
    _write_splits(tmp_path / "s.json", [["red", "cube"], ["blue", "ball"]], [["red", "ball"], ["blue", "cube"]])
    (tmp_path / "f.csv").write_text(
        "f0,f1,attr,obj,split\n1.5,2,red,cube,train\n0,1,blue,ball,train\n3,4,red,ball,test\n")
    vocab, split, ds = import_features(tmp_path / "f.csv", tmp_path / "s.json")
    assert len(ds) == 3 and ds.provenance == "imported"
    np.testing.assert_array_equal(ds.attr_ids, [0, 1, 0])
    np.testing.assert_array_equal(ds.obj_ids, [0, 1, 1])
    np.testing.assert_array_equal(ds.features[0], [1.5, 2.0])


def test_train_row_with_unseen_pair_reports_line(tmp_path):
    _write_splits(tmp_path / "s.json", [["red", "cube"], ["blue", "ball"]], [["red", "ball"], ["blue", "cube"]])
    (tmp_path / "f.csv").write_text("f0,attr,obj,split\n1,red,cube,train\n2,red,ball,train\n")
    with pytest.raises(LoadError, match="line 3"):
        import_features(tmp_path / "f.csv", tmp_path / "s.json")


@pytest.mark.parametrize("row,msg", [
    ("1,green,cube,train", "unknown attribute"),
    ("x,red,cube,train", "non-numeric"),
    ("1,red,cube", "expected"),
    ("1,red,cube,holdout", "unknown split"),
])
def test_malformed_rows(tmp_path, row, msg):
    _write_splits(tmp_path / "s.json", [["red", "cube"], ["blue", "ball"]], [["red", "ball"], ["blue", "cube"]])
    (tmp_path / "f.csv").write_text(f"f0,attr,obj,split\n{row}\n")
    with pytest.raises(LoadError, match=msg) as err:
        import_features(tmp_path / "f.csv", tmp_path / "s.json")
    assert err.value.line == 2


def test_export_import_round_trip_is_bit_exact(tmp_path):
    vocab = PairVocabulary.default()
    split = sample_split(vocab, 0.5, mode="non_overlapping", seed=2)
    scm = make_scm(vocab, 1, train_per_pair=20, val_per_pair=5, test_per_pair=5)
    ds = generate_dataset(vocab, split, scm, seed=3)
    export_dataset(ds, vocab, split, tmp_path)
    vocab2, split2, ds2 = load_dataset_dir(tmp_path)
    assert vocab2 == vocab and split2 == split
    assert ds2.features.tobytes() == ds.features.tobytes()
    assert ds2.digest() == ds.digest()
    assert ds2.provenance == "scm"
    np.testing.assert_array_equal(ds2.scm.attr_table, scm.attr_table)


def test_dataset_column_lengths_checked():
    with pytest.raises(ConfigError):
        FeatureDataset(np.zeros((3, 2)), [0, 1], [0, 1, 0], ["train"] * 3)


def test_split_spec_rejects_overlap():
    with pytest.raises(SplitError):
        SplitSpec((0, 1, 2, 3), (3,), (3,)).validate(PairVocabulary.sized(2, 2))
