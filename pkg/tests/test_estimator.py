import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from tgrounding import GroundingEstimator
from tgrounding.checkpoint import load_checkpoint, save_checkpoint
from tgrounding.data import GroundingSample, SynthConfig, generate
from tgrounding.errors import DataError, DimensionError, LoadError
from tgrounding.model import ModelConfig, build_model

TINY = SynthConfig(num_videos=6, T=6, d_v=8, d_q=8, prototype_dim=4, events_min=2, events_max=3, seed=5)


def tiny_estimator(**kw):
    params = dict(hidden=8, num_blocks=1, num_layers=1, num_kernels=10, epochs=2, batch_size=3)
    params.update(kw)
    return GroundingEstimator(**params)


@pytest.fixture(scope="module")
def corpus():
    return generate(TINY), generate(TINY, "test")


@pytest.fixture(scope="module")
def fitted(corpus):
    return tiny_estimator().fit(corpus[0])


def test_get_params_round_trip():
    est = tiny_estimator(aggregator="gat", seed=3)
    params = est.get_params()
    assert params["aggregator"] == "gat" and params["seed"] == 3
    twin = clone(est)
    assert twin.get_params() == params
    twin.set_params(epochs=7)
    assert twin.epochs == 7 and est.epochs == 2


def test_config_translation():
    est = tiny_estimator(pooling="conv", gamma=5.0, mode="single_query", temperature=0.2)
    mc = est.model_config(6, 8, 8)
    assert mc.proposal.pooling == "conv" and mc.graph.gamma == 5.0 and mc.hidden == 8
    tc = est.train_config()
    assert tc.mode == "single_query" and tc.loss.temperature == 0.2


def test_predict_before_fit():
    with pytest.raises(NotFittedError):
        tiny_estimator().predict(generate(TINY))


def test_fit_sets_history(fitted):
    assert len(fitted.history_) == 2
    assert all(np.isfinite(h["loss"]) for h in fitted.history_)


def test_predict_ranked(fitted, corpus):
    preds = fitted.predict(corpus[1])
    assert set(preds) == {q for s in corpus[1] for q in s.query_ids}
    for ranked in preds.values():
        assert 1 <= len(ranked) <= 5
        scores = [s for _, s in ranked]
        assert scores == sorted(scores, reverse=True)


def test_score_is_fraction(fitted, corpus):
    report = fitted.evaluate(corpus[1])
    assert fitted.score(corpus[1]) == pytest.approx(report.recall[(1, 0.5)] / 100)
    assert all(np.isfinite(v) for v in report.as_dict().values())


def test_evaluate_deterministic(fitted, corpus):
    assert fitted.evaluate(corpus[1]).as_dict() == fitted.evaluate(corpus[1]).as_dict()


def test_untrained_eval_finite(corpus):
    est = tiny_estimator(epochs=1)
    est.net_ = build_model(est.model_config(6, 8, 8), 0)
    assert all(np.isfinite(v) for v in est.evaluate(corpus[1]).as_dict().values())


def test_width_mismatch_rejected(fitted):
    other = generate(SynthConfig(num_videos=2, T=6, d_v=10, d_q=8, prototype_dim=4, events_max=3))
    with pytest.raises(DimensionError):
        fitted.predict(other)


def test_empty_corpus_rejected():
    with pytest.raises(DataError):
        tiny_estimator().fit([])


def test_bad_sample_rejected(corpus):
    s = corpus[0][0]
    broken = GroundingSample(s.video_id, s.duration, s.clip_features, s.query_features,
                             s.timestamps[:, ::-1].copy(), s.query_ids)
    with pytest.raises(DataError, match="index 0"):
        tiny_estimator().fit([broken])


def test_non_finite_rejected(corpus):
    s = corpus[0][0]
    clips = s.clip_features.copy()
    clips[0, 0] = np.nan
    with pytest.raises(DataError, match="non-finite"):
        tiny_estimator().fit([GroundingSample(s.video_id, s.duration, clips, s.query_features,
                                              s.timestamps, s.query_ids)])


def test_train_deterministic(corpus):
    a = tiny_estimator(seed=2).fit(corpus[0]).history_[-1]["loss"]
    b = tiny_estimator(seed=2).fit(corpus[0]).history_[-1]["loss"]
    assert abs(a - b) <= 1e-9


def test_save_load_bit_identical(fitted, corpus, tmp_path):
    path = fitted.save(tmp_path / "m.npz")
    again = GroundingEstimator.load(path)
    assert again.get_params() == fitted.get_params()
    assert again.evaluate(corpus[1]).as_dict() == fitted.evaluate(corpus[1]).as_dict()
    for (n1, p1), (n2, p2) in zip(fitted.net_.named_parameters(), again.net_.named_parameters()):
        assert n1 == n2
        assert np.array_equal(p1.data, p2.data)


def test_describe(fitted):
    info = fitted.describe()
    assert info["model"]["T"] == 6 and info["train"]["epochs"] == 2


def test_checkpoint_meta(tmp_path):
    net = build_model(ModelConfig(T=4, d_v=3, d_q=5, hidden=8, num_blocks=1), 0)
    save_checkpoint(tmp_path / "c.npz", net, 11, {"note": "x"})
    loaded, meta = load_checkpoint(tmp_path / "c.npz")
    assert meta["seed"] == 11 and meta["extra"] == {"note": "x"}
    assert loaded.cfg == net.cfg


def test_checkpoint_shape_mismatch(tmp_path):
    net = build_model(ModelConfig(T=4, d_v=3, d_q=5, hidden=8, num_blocks=1), 0)
    path = save_checkpoint(tmp_path / "c.npz", net, 0)
    with np.load(path) as data:
        arrays = {k: data[k] for k in data.files}
    first = next(k for k in arrays if k != "__meta__")
    arrays[first] = np.zeros((1, 1))
    np.savez(path, **arrays)
    with pytest.raises(LoadError):
        load_checkpoint(path)


def test_checkpoint_garbage(tmp_path):
    bad = tmp_path / "bad.npz"
    bad.write_bytes(b"not a zip")
    with pytest.raises(LoadError):
        load_checkpoint(bad)
    with pytest.raises(LoadError):
        load_checkpoint(tmp_path / "missing.npz")


def test_checkpoint_without_meta(tmp_path):
    path = tmp_path / "raw.npz"
    np.savez(path, w=np.zeros(3))
    with pytest.raises(LoadError, match="config"):
        load_checkpoint(path)
