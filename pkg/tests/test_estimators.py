import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from e2ekws.errors import InvalidArgumentError
from e2ekws.estimators import BaselineKeywordSpotter, SvdfKeywordSpotter, normalization
from e2ekws.frontend import log_mel_frames
from e2ekws.synth import gen_synthetic_dataset
from e2ekws.topology import baseline_config, e2e_config


@pytest.fixture(scope="module")
def corpus():
    ds = gen_synthetic_dataset(11, 4, 2, neg_seconds=2.0)
    return [log_mel_frames(u.render()) for u in ds.utterances], [u.alignment() for u in ds.utterances]


def small_cfg():
    return e2e_config("s", 8, 4, memory=2, big_layers=2, small_nodes=4, small_memory=3,
                      small_layers=1)


def test_params_and_clone():
    est = SvdfKeywordSpotter("E2E_40K", epochs=3, learning_rate=0.1)
    assert est.get_params()["epochs"] == 3
    twin = clone(est)
    assert twin.get_params() == est.get_params() and twin is not est


def test_unfitted_raises(corpus):
    with pytest.raises(NotFittedError):
        SvdfKeywordSpotter().predict_proba(corpus[0])


def test_normalization():
    offset, scale = normalization([np.array([[1.0, 3.0]]), np.array([[1.0, 3.0]])])
    assert offset == 2.0 and scale == 1.0


def test_svdf_fit_predict(corpus):
    X, y = corpus
    est = SvdfKeywordSpotter(small_cfg(), epochs=2, learning_rate=0.05).fit(X, y)
    scores = est.decision_function(X)
    assert len(scores) == len(X)
    assert all(len(s) == len(t) for s, t in zip(scores, (est.score_times(len(f)) for f in X)))
    assert set(est.predict(X)) <= {0, 1}
    assert np.isfinite(est.frame_loss(X, y))
    again = SvdfKeywordSpotter(small_cfg(), epochs=2, learning_rate=0.05).fit(X, y)
    assert again.model_.checksum() == est.model_.checksum()


def test_svdf_two_stage(corpus):
    X, y = corpus
    cfg = e2e_config("s", 8, 4, memory=2, big_layers=2, small_nodes=4, small_memory=3,
                     small_layers=1, intermediate_softmax=True)
    est = SvdfKeywordSpotter(cfg, recipe="two_stage", epochs=1, encoder_epochs=1).fit(X, y)
    assert len(est.reports_) == 2
    assert est.model_.frozen[est.model_.encoder_mask()].all()


def test_baseline_fit(corpus):
    X, y = corpus
    cfg = baseline_config("b", filters=2, hidden=8, hidden_layers=1)
    est = BaselineKeywordSpotter(cfg, epochs=1, smooth_window=10, max_window=10).fit(X, y)
    assert est.predict_proba(X[0])[0].shape[1] == 9
    assert all(np.all((s >= 0) & (s <= 1)) for s in est.decision_function(X))


def test_wrong_head_rejected(corpus):
    X, y = corpus
    with pytest.raises(InvalidArgumentError):
        BaselineKeywordSpotter(small_cfg(), epochs=1).fit(X, y)
    with pytest.raises(InvalidArgumentError):
        SvdfKeywordSpotter(baseline_config("b", filters=2, hidden=8, hidden_layers=1)).fit(X, y)
