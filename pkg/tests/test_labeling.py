import numpy as np
import pytest

from e2ekws.errors import DataError, InvalidArgumentError
from e2ekws.frontend import ContextConfig
from e2ekws.labeling import (OK_GOOGLE, AlignedUtterance, LabeledSequence, Segment,
                             align_labels_to_stride, generate_e2e_labels,
                             generate_encoder_labels, labeled_sequence, read_manifest,
                             utterance_from_json, utterance_to_json, write_manifest)


def ten_frames(l_start=6, l_end=7, keyword=True):
    segs = [Segment("@", 4, 5), Segment("l", l_start, l_end)] if keyword else []
    return AlignedUtterance("u", 10, segs, keyword)


def test_final_component_frames_are_positive():
    np.testing.assert_array_equal(generate_e2e_labels(ten_frames(), OK_GOOGLE),
                                  [0, 0, 0, 0, 0, 0, 1, 1, 0, 0])


def test_extra_positives_extend_from_segment_start():
    labels = generate_e2e_labels(ten_frames(), OK_GOOGLE, extra_positives=3)
    assert list(np.flatnonzero(labels)) == [6, 7, 8]


def test_extra_positives_never_shorten_and_clip_at_end():
    assert list(np.flatnonzero(generate_e2e_labels(ten_frames(), OK_GOOGLE, 1))) == [6, 7]
    assert list(np.flatnonzero(generate_e2e_labels(ten_frames(), OK_GOOGLE, 50))) == [6, 7, 8, 9]


def test_non_keyword_is_all_zero():
    assert not generate_e2e_labels(ten_frames(keyword=False), OK_GOOGLE).any()


def test_missing_final_component_is_data_error():
    utt = AlignedUtterance("u", 10, [Segment("@", 4, 5)], True)
    with pytest.raises(DataError):
        generate_e2e_labels(utt, OK_GOOGLE)
    with pytest.raises(InvalidArgumentError):
        generate_e2e_labels(ten_frames(), OK_GOOGLE, -1)


def test_encoder_labels_follow_class_map():
    comps = OK_GOOGLE.components
    segs = [Segment(c, 2 * k, 2 * k) for k, c in enumerate(comps)]
    utt = AlignedUtterance("u", 2 * len(comps), segs, True)
    labels = generate_encoder_labels(utt, OK_GOOGLE)
    assert list(labels[::2]) == [1, 2, 3, 4, 5, 6, 5, 7, 8]
    assert not labels[1::2].any()
    assert OK_GOOGLE.class_of("h") == OK_GOOGLE.class_of("k")
    assert OK_GOOGLE.num_classes == 9


def test_silence_only_is_background():
    assert not generate_encoder_labels(AlignedUtterance("s", 5), OK_GOOGLE).any()


@pytest.mark.parametrize("left, expected", [(0, [0, 0]), (1, [1, 1])])
def test_stride_phase_starts_at_left_context(left, expected):
    got = align_labels_to_stride([0, 1, 0, 1], ContextConfig(left, 0, 2))
    assert list(got) == expected


def test_stride_one_is_identity_and_baseline_window():
    labels = np.arange(7)
    np.testing.assert_array_equal(align_labels_to_stride(labels, ContextConfig(0, 0, 1)), labels)
    assert list(align_labels_to_stride(np.arange(41), ContextConfig(30, 10, 3))) == [30]


def test_labeled_sequence_lengths():
    stacked = np.zeros((4, 120), np.float32)
    seq = labeled_sequence(ten_frames(), stacked, OK_GOOGLE, ContextConfig(1, 1, 2))
    assert len(seq) == 4 and list(seq.labels) == [0, 0, 0, 1]
    with pytest.raises(DataError):
        LabeledSequence(stacked, [0, 1])
    with pytest.raises(InvalidArgumentError):
        labeled_sequence(ten_frames(), stacked, OK_GOOGLE, ContextConfig(1, 1, 2), target="x")


def test_segment_validation():
    with pytest.raises(DataError):
        AlignedUtterance("x", 5, [Segment("a", 2, 3), Segment("b", 3, 4)])
    with pytest.raises(DataError):
        AlignedUtterance("x", 5, [Segment("a", 2, 5)])


def test_manifest_roundtrip(tmp_path):
    utts = [ten_frames(), AlignedUtterance("n", 8, (), False, audio_path="audio/n.wav",
                                           extra={"duration_ms": 110})]
    path = tmp_path / "m.jsonl"
    write_manifest(path, utts)
    back = read_manifest(path)
    assert back == utts
    assert back[1].extra["duration_ms"] == 110
    assert utterance_from_json(utterance_to_json(utts[0])) == utts[0]
    path.write_text('{"id": 1}\n')
    with pytest.raises(DataError):
        read_manifest(path)
    path.write_text("not json\n")
    with pytest.raises(DataError):
        read_manifest(path)
