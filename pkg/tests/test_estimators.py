import numpy as np
import pytest
from sklearn.base import clone

from fluentforge import corpus as cp
from fluentforge.estimators import FluencyConverter


@pytest.fixture(scope="module")
def fitted():
    samples = cp.generate_corpus(3, seed=31)
    est = FluencyConverter(kind="stutterzero", epochs=1, mini=True, seed=0)
    return est.fit(samples), samples


class TestFluencyConverter:
    def test_get_params_round_trip(self):
        est = FluencyConverter(kind="stutterformer", epochs=5, lr=0.01)
        params = est.get_params()
        assert params["kind"] == "stutterformer"
        again = FluencyConverter(**params)
        assert again.get_params() == params

    def test_clone_unfitted(self):
        est = FluencyConverter(epochs=3)
        twin = clone(est)
        assert twin.epochs == 3 and not hasattr(twin, "model_")

    def test_fit_sets_state(self, fitted):
        est, _ = fitted
        assert hasattr(est, "model_") and hasattr(est, "history_")
        assert len(est.history_) == 1

    def test_transform_returns_waveforms(self, fitted):
        est, samples = fitted
        outs = est.transform([s.stuttered for s in samples[:2]])
        assert len(outs) == 2
        assert all(np.isfinite(w.samples).all() for w in outs)

    def test_predict_returns_text(self, fitted):
        est, samples = fitted
        texts = est.predict([samples[0].stuttered])
        assert isinstance(texts[0], str)

    def test_score_is_negated_wer(self, fitted):
        est, samples = fitted
        s = est.score([samples[0].stuttered], [samples[0].transcript])
        assert s <= 0.0

    def test_unfitted_raises(self):
        est = FluencyConverter()
        with pytest.raises(RuntimeError, match="not fitted"):
            est.transform([])
