import numpy as np
import pytest

from e2ekws.errors import InvalidArgumentError
from e2ekws.labeling import OK_GOOGLE, read_manifest
from e2ekws.synth import _contains, gen_synthetic_dataset, make_negative, make_positive


def test_same_seed_same_corpus(tmp_path):
    a = gen_synthetic_dataset(5, 3, 2)
    b = gen_synthetic_dataset(5, 3, 2)
    assert a.utterances == b.utterances
    np.testing.assert_array_equal(a.positives[0].render(), b.positives[0].render())
    pa = a.write(tmp_path / "a")
    pb = b.write(tmp_path / "b")
    assert pa.read_bytes() == pb.read_bytes()
    assert (tmp_path / "a/audio/pos00000.wav").read_bytes() == \
        (tmp_path / "b/audio/pos00000.wav").read_bytes()


def test_different_seed_differs():
    assert gen_synthetic_dataset(1, 2, 0).positives != gen_synthetic_dataset(2, 2, 0).positives


def test_positive_plan_is_keyword_in_order():
    for seed in range(20):
        u = make_positive("p", seed)
        assert [p[0] for p in u.plan] == list(OK_GOOGLE.components)
        for _, start, end in u.plan:
            assert 80 * 16 - 16 <= end - start <= 200 * 16
        assert u.keyword_end_ms == round(u.plan[-1][2] / 16)
        assert u.plan[-1][2] < u.n_samples


@pytest.mark.parametrize("near_miss", [0.0, 0.5, 1.0])
def test_negatives_never_contain_keyword(near_miss):
    for seed in range(40):
        u = make_negative("n", seed, seconds=6.0, near_miss=near_miss)
        # across phrase boundaries too: the flattened label stream
        assert not _contains([p[0] for p in u.plan], OK_GOOGLE.components)
        assert u.keyword_end_ms is None and u.n_samples == 6 * 16000


def test_near_miss_zero_matches_default():
    assert make_negative("n", 9) == make_negative("n", 9, near_miss=0.0)


def test_near_miss_adds_truncated_keywords():
    prefix = list(OK_GOOGLE.components[:-1])
    hits = sum(_contains([p[0] for p in make_negative("n", s, seconds=10, near_miss=1.0).plan],
                         prefix) for s in range(10))
    assert hits == 10


def test_alignment_matches_plan_and_labels():
    u = make_positive("p", 3)
    a = u.alignment()
    assert a.num_frames == (u.n_samples - 480) // 160 + 1
    assert [s.label for s in a.segments] == list(OK_GOOGLE.components)
    for (label, start, end), seg in zip(u.plan, a.segments):
        # every frame of the segment has its window center inside the planned span
        for f in (seg.start_frame, seg.end_frame):
            center = f * 160 + 240
            assert start <= center < end


def test_render_is_bounded_and_sized():
    u = make_positive("p", 0)
    pcm = u.render()
    assert pcm.shape == (u.n_samples,) and np.max(np.abs(pcm)) <= 1.0


def test_manifest_written(tmp_path):
    ds = gen_synthetic_dataset(0, 2, 1, neg_seconds=2.0, prefix="x")
    utts = read_manifest(ds.write(tmp_path))
    assert [u.id for u in utts] == ["xpos00000", "xpos00001", "xneg00000"]
    assert utts[2].extra["duration_ms"] == 2000
    assert ds.negative_hours == pytest.approx(2.0 / 3600)


def test_invalid_counts():
    with pytest.raises(InvalidArgumentError):
        gen_synthetic_dataset(0, 0, 0)
    with pytest.raises(InvalidArgumentError):
        gen_synthetic_dataset(0, -1, 3)
