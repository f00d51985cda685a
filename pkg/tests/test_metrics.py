import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from compcausal.data import PairVocabulary, generate_dataset, make_scm, sample_split
from compcausal.errors import DomainError, UnsupportedError
from compcausal.metrics import (
    EvalReport,
    ausuc,
    balanced_accuracy,
    confusion_counts,
    evaluate_closed,
    evaluate_open,
    harmonic_mean,
    pida,
    pida_from_means,
)
from compcausal.model import ScoreMatrix, oracle_model


def test_all_correct_is_one():
    assert balanced_accuracy([0, 1, 2, 2], [0, 1, 2, 2], {0, 1, 2}) == 1.0


def test_balancing_ignores_sample_counts():
    preds = [0] * 9 + [0]
    truths = [0] * 9 + [1]
    assert balanced_accuracy(preds, truths, {0, 1}) == 0.5


def test_truth_outside_pair_set():
    with pytest.raises(DomainError):
        balanced_accuracy([0], [3], {0, 1})


def test_empty_set_is_domain_error():
    with pytest.raises(DomainError):
        balanced_accuracy([], [], {0})


def test_random_predictions_near_chance():
    rng = np.random.default_rng(0)
    k, n = 12, 12000
    truths = rng.integers(0, k, n)
    preds = rng.integers(0, k, n)
    p = 1 / k
    assert abs(balanced_accuracy(preds, truths, set(range(k))) - p) <= 3 * math.sqrt(p * (1 - p) / n)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=30),
       st.integers(0, 4), st.integers(1, 4))
def test_duplicating_one_pair_leaves_balanced_accuracy(samples, pair, times):
    preds = np.array([p for p, _ in samples])
    truths = np.array([t for _, t in samples])
    base = balanced_accuracy(preds, truths, set(range(5)))
    mask = truths == pair
    preds2 = np.concatenate([preds] + [preds[mask]] * times)
    truths2 = np.concatenate([truths] + [truths[mask]] * times)
    assert balanced_accuracy(preds2, truths2, set(range(5))) == pytest.approx(base, abs=1e-12)


# -- harmonic ---------------------------------------------------------------

@pytest.mark.parametrize("seen,unseen,expected", [(0.397, 0.266, 0.318), (0.857, 0.575, 0.688)])
def test_harmonic_reported_values(seen, unseen, expected):
    assert abs(harmonic_mean(seen, unseen) - expected) <= 0.001


def test_harmonic_zero_cases():
    assert harmonic_mean(0.7, 0.0) == 0.0
    assert harmonic_mean(0.0, 0.0) == 0.0


def test_harmonic_needs_both_sides():
    with pytest.raises(DomainError):
        harmonic_mean(None, 0.5)


@settings(max_examples=100)
@given(st.floats(0, 1), st.floats(0, 1))
def test_harmonic_properties(x, y):
    assert harmonic_mean(x, x) == pytest.approx(x, abs=1e-12)
    assert harmonic_mean(x, y) == harmonic_mean(y, x)
    assert harmonic_mean(x, y) <= (x + y) / 2 + 1e-12


# -- open / closed ---------------------------------------------------------------

def test_open_accuracy_splits_by_truth():
    # candidates 0,1 seen and 2,3 unseen; rows: right, wrong, right, wrong
    s = np.array([
        [5.0, 0, 0, 0],
        [0, 0, 5, 0],
        [0, 0, 5, 0],
        [0, 5, 0, 0],
    ])
    seen, unseen, harm = evaluate_open(ScoreMatrix(s, [0, 1, 2, 3]), [0, 1, 2, 3], {0, 1})
    assert (seen, unseen, harm) == (0.5, 0.5, 0.5)


def test_open_missing_side_is_absent():
    s = np.eye(2)
    seen, unseen, harm = evaluate_open(ScoreMatrix(s, [0, 1]), [0, 1], {0, 1})
    assert seen == 1.0 and unseen is None and harm is None


def test_closed_single_unseen_pair_is_one():
    rng = np.random.default_rng(1)
    s = rng.normal(size=(5, 3))
    assert evaluate_closed(ScoreMatrix(s, [0, 1, 2]), [2] * 5, {2}) == 1.0


def test_closed_perfect_scorer():
    s = np.eye(4) * 3
    truths = np.array([0, 1, 2, 3])
    assert evaluate_closed(ScoreMatrix(s, [0, 1, 2, 3]), truths, {2, 3}) == 1.0


def test_closed_random_near_chance():
    rng = np.random.default_rng(2)
    k, n = 12, 12000
    truths = rng.integers(0, k, n)
    s = rng.normal(size=(n, k))
    p = 1 / k
    acc = evaluate_closed(ScoreMatrix(s, np.arange(k)), truths, set(range(k)))
    assert abs(acc - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_closed_needs_unseen_samples():
    with pytest.raises(DomainError):
        evaluate_closed(ScoreMatrix(np.eye(2), [0, 1]), [0, 0], {1})


# -- AUSUC -----------------------------------------------------------------------

SEEN = {0, 1}
TABLE = np.array([
    [2.0, 0.3, 1.1, -0.4],
    [0.2, 0.9, 1.7, 0.0],
    [1.3, -0.2, 0.6, 0.1],
    [0.5, 1.4, -0.3, 0.95],
])
TRUTHS = np.array([0, 1, 2, 3])


def _brute_point(scores, truths, c):
    shifted = scores.copy()
    shifted[:, sorted(SEEN)] += c
    preds = np.argmax(shifted, axis=1)
    correct = preds == truths
    is_seen = np.isin(truths, sorted(SEEN))
    return correct[is_seen].mean(), correct[~is_seen].mean()


def _exhaustive_area(scores, truths):
    # every distinct prediction pattern lies between consecutive breakpoints
    best_seen = scores[:, sorted(SEEN)].max(axis=1)
    best_unseen = np.delete(scores, sorted(SEEN), axis=1).max(axis=1)
    breaks = np.unique(best_unseen - best_seen)
    probes = [breaks[0] - 1.0, *((breaks[:-1] + breaks[1:]) / 2), breaks[-1] + 1.0]
    pts = [(0.0, _brute_point(scores, truths, -1e9)[1])]
    pts += [_brute_point(scores, truths, c) for c in probes]
    pts.append((_brute_point(scores, truths, 1e9)[0], 0.0))
    pts = sorted(pts, key=lambda p: (p[0], -p[1]))
    xs, ys = np.array(pts).T
    return float(np.sum((xs[1:] - xs[:-1]) * (ys[1:] + ys[:-1]) / 2))


def test_ausuc_matches_exhaustive_sweep():
    area, curve = ausuc(ScoreMatrix(TABLE, [0, 1, 2, 3]), TRUTHS, SEEN)
    assert area == pytest.approx(_exhaustive_area(TABLE, TRUTHS), abs=1e-12)
    cs = [c for c, _, _ in curve]
    assert cs == sorted(cs)
    assert len(curve) == 203


def test_ausuc_endpoints_are_forced_candidate_accuracies():
    sm = ScoreMatrix(TABLE, [0, 1, 2, 3])
    _, curve = ausuc(sm, TRUTHS, SEEN)
    c0, s0, u0 = curve[0]
    c1, s1, u1 = curve[-1]
    assert c0 == -math.inf and s0 == 0.0
    assert u0 == evaluate_closed(sm, TRUTHS, {2, 3})
    assert c1 == math.inf and u1 == 0.0
    assert s1 == evaluate_closed(sm, TRUTHS, SEEN)
    # the finite sweep ends reach the same values
    assert curve[1][1:] == (s0, u0)
    assert curve[-2][1:] == (s1, u1)


def test_perfect_scorer_fills_the_unit_square():
    area, _ = ausuc(ScoreMatrix(np.eye(4) * 100, [0, 1, 2, 3]), TRUTHS, SEEN)
    assert area == pytest.approx(1.0)


def test_ausuc_rejects_few_points():
    with pytest.raises(DomainError):
        ausuc(ScoreMatrix(TABLE, [0, 1, 2, 3]), TRUTHS, SEEN, num_points=2)


def test_degenerate_curve_gives_zero(caplog):
    # every prediction is wrong whatever the offset
    s = np.array([[0.0, 5.0, 1.0, 0.0], [5.0, 0.0, 0.0, 1.0], [0.0, 1.0, 0.0, 5.0], [1.0, 0.0, 5.0, 0.0]])
    area, _ = ausuc(ScoreMatrix(s, [0, 1, 2, 3]), TRUTHS, SEEN)
    assert area == 0.0
    assert "single point" in caplog.text


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_ausuc_is_bounded_and_deterministic(seed):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=(20, 6))
    truths = rng.integers(0, 6, 20)
    truths[:2] = [0, 5]
    sm = ScoreMatrix(s, np.arange(6))
    a1, c1 = ausuc(sm, truths, {0, 1, 2})
    a2, c2 = ausuc(sm, truths, {0, 1, 2})
    assert 0.0 <= a1 <= 1.0 and a1 == a2 and c1 == c2


# -- confusion / report ---------------------------------------------------------

def test_confusion_counts():
    preds = [0, 2, 3, 1, 3]
    truths = [0, 3, 2, 2, 3]
    assert confusion_counts(preds, truths, {0, 1}, {2, 3}) == (1, 2)


def test_report_json_round_trip():
    report = EvalReport(0.5, 0.25, harmonic_mean(0.5, 0.25), 0.4, 0.1,
                        per_pair_acc={3: 1.0}, curve=[(-math.inf, 0.0, 0.4), (0.0, 0.5, 0.25), (math.inf, 0.6, 0.0)])
    data = json.loads(report.to_json())
    assert data["per_pair_acc"] == {"3": 1.0}
    assert data["curve"][0][0] == "-inf" and data["curve"][-1][0] == "inf"
    assert report.metric("closed") == 0.4
    assert EvalReport(None, None, None, None, None).metric("harmonic") == -math.inf


# -- PIDA --------------------------------------------------------------------

def test_pida_hand_two_by_two():
    mean_a = np.array([[[0.0], [2.0]], [[1.0], [1.0]]])
    mean_o = np.zeros((2, 2, 1))
    mean_o[0, 1, 0] = 4.0
    p = np.array([0.5, 0.5])
    # do(a=0) mean is 1, so distances are 1, 1, 0, 0; do(o=1) mean is 2, so 0, 2, 0, 2
    attr, obj = pida_from_means(mean_a, mean_o, p, p)
    assert attr == pytest.approx(0.5)
    assert obj == pytest.approx(1.0)


def test_pida_constant_cores_is_zero():
    means = np.ones((3, 2, 4))
    assert pida_from_means(means, means, np.full(3, 1 / 3), np.full(2, 0.5)) == (0.0, 0.0)


def _identity_setup():
    vocab = PairVocabulary.default()
    split = sample_split(vocab, 0.5, seed=0)
    scm = make_scm(vocab, 0, generator="identity", sigma_a=0.0, sigma_o=0.0, sigma_x=0.0,
                   train_per_pair=5, val_per_pair=2, test_per_pair=2)
    return vocab, split, scm, generate_dataset(vocab, split, scm, seed=0)


def test_disentangled_oracle_has_zero_pida():
    vocab, _, scm, ds = _identity_setup()
    model = oracle_model(scm, (vocab.num_attrs, vocab.num_objs))
    attr, obj = pida(model, ds, vocab, num_samples=20)
    assert attr == pytest.approx(0.0, abs=1e-12)
    assert obj == pytest.approx(0.0, abs=1e-12)


def test_pida_rejects_imported_data():
    vocab, _, scm, ds = _identity_setup()
    ds.provenance = "imported"
    with pytest.raises(UnsupportedError):
        pida(oracle_model(scm, (8, 3)), ds, vocab)
