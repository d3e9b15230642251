"""scikit-learn estimator wrapping the vMF mixture regression head."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import head, mixture
from .sphere import cart_to_geo, geo_to_cart, haversine_km
from .train import TrainConfig, train_head


def check_latlon(y) -> np.ndarray:
    """Validate an (n, 2) array of latitude/longitude degrees."""
    y = check_array(y, ensure_2d=True, dtype=float)
    if y.shape[1] != 2:
        raise ValueError(f"targets must have two columns (lat, lon), got {y.shape[1]}")
    if np.any(np.abs(y[:, 0]) > 90.0):
        raise ValueError("latitude out of range [-90, 90]")
    return y


class VmfMixtureRegressor(RegressorMixin, BaseEstimator):
    """Regress coordinates on features with a mixture of vMF distributions.

    ``fit`` takes features ``X (n, D)`` and targets ``y (n, 2)`` as
    latitude/longitude degrees. ``predict`` returns one point per row under
    ``rule``; ``predict_mixture`` returns the full per-row distributions.
    Compose with :class:`~vmfgeo.features.HashedNgramVectorizer` in a
    pipeline to work on raw text.

    Parameters
    ----------
    n_components : int
        Mixture size K.
    hidden_units : int
        Width of each of the three sigmoid layers.
    learning_rate, epochs, batch_size, beta1, beta2, eps :
        Adam and minibatch settings.
    loss : {"mixture_nll", "weighted_nll"}
        Training objective.
    rule : {"highProb", "random"}
        Point-prediction rule used by ``predict``.
    kappa_init : float
        Initial concentration of every component.
    random_state : int
        Seeds initialisation, shuffling and the ``random`` rule.
    """

    def __init__(self, n_components=5, hidden_units=256, learning_rate=5e-5, epochs=5,
                 batch_size=32, beta1=0.9, beta2=0.999, eps=1e-8, loss="mixture_nll",
                 shuffle=True, rule="highProb", kappa_init=head.KAPPA_INIT, random_state=42):
        self.n_components = n_components
        self.hidden_units = hidden_units
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.loss = loss
        self.shuffle = shuffle
        self.rule = rule
        self.kappa_init = kappa_init
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, epochs=self.epochs,
                           batch_size=self.batch_size, beta1=self.beta1, beta2=self.beta2,
                           eps=self.eps, loss=self.loss, seed=self.random_state,
                           shuffle=self.shuffle)

    def fit(self, X, y, validation_data=None):
        X, y = check_X_y(X, y, multi_output=True, dtype=float)
        y = check_latlon(y)
        X_val = val_y = None
        if validation_data is not None:
            X_val = check_array(validation_data[0], dtype=float)
            val_y = check_latlon(validation_data[1])
        self.params_, self.history_ = train_head(
            X, geo_to_cart(y[:, 0], y[:, 1]), self._train_config(),
            hidden_units=self.hidden_units, n_components=self.n_components,
            X_val=X_val, val_latlon=val_y, kappa_init=self.kappa_init)
        self.n_features_in_ = X.shape[1]
        return self

    def _features(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, but {type(self).__name__} "
                             f"is expecting {self.n_features_in_} features as input")
        return X

    def predict_mixture(self, X) -> list[mixture.VmfMixture]:
        return head.predict_mixtures(self._features(X), self.params_)

    def predict_params(self, X):
        """Batched ``(mu, kappa, rho)`` arrays of shapes (n, K, 3), (n, K), (n, K)."""
        c = head.forward_batch(self._features(X), self.params_)
        return c.mu, c.kappa, c.rho

    def predict(self, X, rule=None):
        rule = rule or self.rule
        mu, _, rho = self.predict_params(X)
        rng = np.random.default_rng(self.random_state)
        k = np.array([mixture.select_component(r, rule, rng) for r in rho], dtype=int)
        lat, lon = cart_to_geo(mu[np.arange(len(k)), k])
        return np.column_stack([lat, lon])

    def log_likelihood(self, X, y):
        """Per-row mixture log density at the targets."""
        y = check_latlon(y)
        mu, kappa, rho = self.predict_params(X)
        return -mixture.mixture_nll_batch(geo_to_cart(y[:, 0], y[:, 1]), mu, kappa, rho)

    def score(self, X, y, sample_weight=None):
        """Mean log-likelihood of ``y`` under the predicted mixtures (higher is better)."""
        return float(np.average(self.log_likelihood(X, y), weights=sample_weight))

    def error_km(self, X, y, rule=None):
        y = check_latlon(y)
        pred = self.predict(X, rule)
        return haversine_km(pred[:, 0], pred[:, 1], y[:, 0], y[:, 1])
