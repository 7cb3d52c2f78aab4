import numpy as np
import pytest

from e2ekws.errors import InvalidArgumentError, NoOperatingPointError
from e2ekws.evaluation import (RocPoint, ScoredUtterance, check_roc_monotone, default_thresholds,
                               fr_at_fa, interpolate_fr, latency_report, load_scores, roc_curve,
                               roc_to_csv, roc_to_json, save_scores, score_utterances, window_max)
from e2ekws.scoring import ScoringRule
from e2ekws.synth import gen_synthetic_dataset
from e2ekws.topology import Model, e2e_config


def scored(is_kw, times, scores, kw_end=1000, duration=10.0):
    return ScoredUtterance("u", is_kw, np.asarray(times), np.asarray(scores, float), duration,
                           kw_end if is_kw else None)


def test_default_thresholds():
    th = default_thresholds()
    assert len(th) == 1001 and th[0] == 1 / 1002 and th[-1] == 1001 / 1002


def test_window_max_uses_hit_window():
    s = scored(True, [800, 899, 900, 1750, 1751], [0.9, 0.8, 0.3, 0.4, 0.99])
    assert window_max(s) == 0.4


def test_roc_counts():
    pos = scored(True, [1000], [0.6])
    neg = scored(False, [0, 500, 1500, 3000], [0.7, 0.7, 0.7, 0.2], duration=3600.0)
    roc = roc_curve([pos, neg], [0.1, 0.5, 0.65, 0.8])
    assert [p.fr_rate for p in roc] == [0, 0, 1, 1]
    # the 500 ms event is suppressed; the 1500 ms one is not
    assert [p.fa_per_hour for p in roc] == [3, 2, 2, 0]
    assert check_roc_monotone(roc)


def test_roc_errors():
    with pytest.raises(InvalidArgumentError):
        roc_curve([scored(False, [0], [0.5])])
    with pytest.raises(InvalidArgumentError):
        roc_curve([scored(True, [0], [0.5])], [0.5, 0.2])


def test_random_scores_sit_near_the_diagonal():
    rng = np.random.default_rng(0)
    pos = [scored(True, [1000], [rng.random()]) for _ in range(4000)]
    roc = roc_curve(pos + [scored(False, [0], [0.0], duration=3600)], np.linspace(0.05, 0.95, 19))
    for p in roc:
        assert p.fr_rate == pytest.approx(p.threshold, abs=0.03)


def test_fr_at_fa_and_resolution_guard():
    roc = [RocPoint(0.1, 5.0, 0.0), RocPoint(0.5, 0.4, 0.1), RocPoint(0.9, 0.0, 0.6)]
    assert fr_at_fa(roc, 0.5) == (0.5, 0.1)
    assert fr_at_fa(roc, 0.5, negative_hours=2.0) == (0.5, 0.1)
    with pytest.raises(InvalidArgumentError):
        fr_at_fa(roc, 0.5, negative_hours=1.0)
    assert fr_at_fa(roc, 0.5, negative_hours=1.0, allow_low_resolution=True) == (0.5, 0.1)
    with pytest.raises(NoOperatingPointError):
        fr_at_fa([RocPoint(0.5, 3.0, 0.0)], 0.5)
    assert interpolate_fr(roc, 2.7) == pytest.approx(0.05)


def test_latency_report():
    good = scored(True, [900, 1300], [0.2, 0.9])
    early = scored(True, [500, 1200], [0.9, 0.1])
    silent = scored(True, [1000], [0.1])
    rep = latency_report([good, early, silent], 0.5)
    assert rep["firing"] == 2 and rep["positives"] == 3
    assert rep["in_window_fraction"] == 0.5
    assert rep["median_latency_ms"] == pytest.approx(-100.0)
    assert np.isnan(latency_report([silent], 0.5)["in_window_fraction"])


def test_serialization(tmp_path):
    items = [scored(True, [10, 20], [0.1234567, 0.5]), scored(False, [10], [0.25])]
    save_scores(tmp_path / "s.jsonl", items)
    back = load_scores(tmp_path / "s.jsonl")
    assert [b.id for b in back] == ["u", "u"] and back[1].keyword_end_ms is None
    np.testing.assert_allclose(back[0].scores, items[0].scores, atol=1e-7)
    roc = [RocPoint(0.5, 1.0, 0.25)]
    assert roc_to_csv(roc, "m").splitlines()[1] == "m,0.500000,1,0.25"
    assert roc_to_json(roc, name="m")["fr_rate"] == [0.25]


def test_parallel_scoring_matches_serial():
    ds = gen_synthetic_dataset(3, 2, 2, neg_seconds=1.5)
    cfg = e2e_config("s", 8, 4, memory=2, big_layers=1, small_nodes=4, small_memory=2,
                     small_layers=1)
    det = {"m": (Model(cfg, seed=0), ScoringRule())}
    serial = score_utterances(ds.utterances, det)["m"]
    parallel = score_utterances(ds.utterances, det, jobs=2)["m"]
    for a, b in zip(serial, parallel):
        assert a.id == b.id and a.keyword_end_ms == b.keyword_end_ms
        np.testing.assert_array_equal(a.scores, b.scores)


def test_monotone_score_transform_leaves_roc_unchanged():
    # the K-th root in the smoothed scorer is monotone, so it only relabels thresholds
    rng = np.random.default_rng(2)
    items = [scored(True, np.arange(0, 2000, 20), rng.random(100) ** 2) for _ in range(30)]
    items += [scored(False, np.arange(0, 20000, 20), rng.random(1000) ** 2, duration=60.0)
              for _ in range(5)]
    th = np.linspace(0.01, 0.99, 40)
    cubed = [ScoredUtterance(s.id, s.is_keyword, s.times, s.scores ** 3, s.duration_s,
                             s.keyword_end_ms) for s in items]
    a = roc_curve(items, th)
    b = roc_curve(cubed, th ** 3)
    assert [(p.fa_per_hour, p.fr_rate) for p in a] == [(p.fa_per_hour, p.fr_rate) for p in b]
