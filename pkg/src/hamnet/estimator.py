"""scikit-learn compatible classifier wrapping the training pipeline."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_positive, seed_from, validate_features, validate_training_data
from .layers import VARIANTS, NetworkParams, OutputHead
from .training import TrainConfig, model_forward, predict_proba, train_coordinate_descent


class HamiltonianNetClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Residual network classifier built from Hamiltonian (or baseline) layers.

    Inputs are zero-padded to ``n_state`` features (default: the smallest even
    size >= max(4, n_features)). With ``step_size=None`` the step is
    ``horizon / n_layers``. ``transform`` returns the final hidden state.

    Examples
    --------
    >>> from hamnet.data import gen_double_moons
    >>> d = gen_double_moons(200, seed=0)
    >>> clf = HamiltonianNetClassifier(n_layers=2, epochs=5, batch_size=50).fit(d.X, d.y)
    >>> clf.predict(d.X[:3]).shape
    (3,)
    """

    def __init__(self, architecture="H1", n_layers=4, step_size=None, horizon=0.2, n_state=None,
                 time_invariant=False, learning_rate=0.05, lr_decay=1.0, epochs=50,
                 batch_size=125, alpha=5e-3, alpha_c=1e-4, beta1=0.9, beta2=0.999,
                 adam_eps=1e-8, inner_head_iters=10, random_state=0):
        self.architecture = architecture
        self.n_layers = n_layers
        self.step_size = step_size
        self.horizon = horizon
        self.n_state = n_state
        self.time_invariant = time_invariant
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.alpha = alpha
        self.alpha_c = alpha_c
        self.beta1 = beta1
        self.beta2 = beta2
        self.adam_eps = adam_eps
        self.inner_head_iters = inner_head_iters
        self.random_state = random_state

    def _check_params(self, n_features):
        if self.architecture not in VARIANTS:
            raise ValueError(f"architecture must be one of {VARIANTS}, got {self.architecture!r}")
        check_positive("n_layers", self.n_layers, integer=True, allow_zero=True)
        check_positive("horizon", self.horizon)
        if self.step_size is not None:
            check_positive("step_size", self.step_size)
        n = self.n_state
        if n is None:
            n = max(4, n_features)
            n += n % 2
        check_positive("n_state", n, integer=True)
        if n < n_features:
            raise ValueError(f"n_state={n} is smaller than the {n_features} input features")
        if self.step_size is not None:
            h = self.step_size
        elif self.architecture == "FCNN":
            h = 1.0
        else:
            h = self.horizon / self.n_layers if self.n_layers else self.horizon
        return n, h

    def fit(self, X, y):
        X, y_enc, classes = validate_training_data(X, y)
        n, h = self._check_params(X.shape[1])
        seed = seed_from(self.random_state)
        config = TrainConfig(
            lr=self.learning_rate, lr_decay_gamma=self.lr_decay, epochs=self.epochs,
            batch_size=self.batch_size, alpha=self.alpha, alpha_c=self.alpha_c,
            beta1=self.beta1, beta2=self.beta2, adam_eps=self.adam_eps,
            inner_head_iters=self.inner_head_iters, seed=seed)
        params = NetworkParams.initialize(self.architecture, n, self.n_layers, h, seed,
                                          tied=self.time_invariant)
        head = OutputHead.zeros(n, len(classes))
        self.params_, self.head_, self.history_ = train_coordinate_descent(
            params, head, self._pad(X, n), y_enc, config)
        self.classes_ = classes
        self.n_features_in_ = X.shape[1]
        return self

    @staticmethod
    def _pad(X, n):
        if X.shape[1] == n:
            return X
        out = np.zeros((len(X), n))
        out[:, :X.shape[1]] = X
        return out

    def _prepared(self, X):
        check_is_fitted(self, "params_")
        return self._pad(validate_features(X, self.n_features_in_, type(self).__name__), self.params_.n)

    def predict_proba(self, X):
        X = self._prepared(X)
        return predict_proba(self.params_, self.head_, X)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    def transform(self, X):
        X = self._prepared(X)
        yN, _ = model_forward(self.params_, X)
        return np.atleast_2d(yN)

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y).transform(X)
