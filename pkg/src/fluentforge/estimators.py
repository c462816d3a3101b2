"""Estimator-style wrappers around the training loop and inference pipeline.

FluencyConverter follows the fit/transform/predict convention: fit on a list
of paired samples, transform stuttered waveforms into fluent waveforms, and
predict their transcripts.  Hyperparameters are plain constructor arguments
so get_params/set_params and clone() work as usual.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator

from . import metrics as mt
from . import training as tr


class FluencyConverter(BaseEstimator):
    def __init__(self, kind: str = "stutterzero", epochs: int = 100,
                 batch_size: int = 3, lr: float = 1e-4,
                 weight_decay: float = 1e-6, ablate: bool = False,
                 mini: bool = False, seed: int = 0):
        self.kind = kind
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.ablate = ablate
        self.mini = mini
        self.seed = seed

    def _model_config(self):
        if not self.mini:
            return None
        from . import stutterformer as sf
        from . import stutterzero as sz
        return (sz.mini_config() if self.kind == "stutterzero"
                else sf.mini_config())

    def fit(self, X, y=None):
        """X: list of paired samples (stuttered/fluent waveforms + transcript)."""
        cfg = tr.default_train_config(
            self.kind, epochs=self.epochs, batch_size=self.batch_size,
            lr=self.lr, weight_decay=self.weight_decay, seed=self.seed)
        cfg.eval_interval = max(1, self.epochs)  # skip mid-run decoding
        self.model_, self.history_ = tr.train(
            self.kind, list(X), self._model_config(), cfg, ablate=self.ablate)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("estimator is not fitted; call fit first")

    def transform(self, X):
        """Stuttered waveforms -> predicted fluent waveforms."""
        self._check_fitted()
        return [mt.infer_sample(self.model_, w)[0] for w in X]

    def predict(self, X):
        """Stuttered waveforms -> predicted transcripts."""
        self._check_fitted()
        return [mt.infer_sample(self.model_, w)[1] for w in X]

    def score(self, X, y):
        """Mean negated WER of predicted transcripts against references y."""
        self._check_fitted()
        preds = self.predict(X)
        errs = [mt.wer(ref, hyp) for ref, hyp in zip(y, preds)]
        return -sum(errs) / max(1, len(errs))
