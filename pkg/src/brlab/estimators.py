"""scikit-learn wrappers around the Lyapunov estimator.

``LyapunovTransformer`` maps a column of energies to ``[L_hat, stderr]``;
``PhaseClassifier`` labels energies ``deloc`` / ``loc`` / ``boundary`` by
comparing ``L_hat`` with ``log K`` at three standard errors.
"""

import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted

from .ensembles import EnsembleSpec, ModelSpec
from .lyapunov import estimate_L
from .pool import PoolConfig, prepare_pool
from .rng import RngStream

CLASSES = ("boundary", "deloc", "loc")


def _energies(X):
    X = check_array(X, ensure_2d=True)
    if X.shape[1] != 1:
        raise ValueError(f"expected a single energy column, got {X.shape[1]}")
    return X[:, 0]


class LyapunovTransformer(TransformerMixin, BaseEstimator):
    """Energies ``(n_samples, 1)`` to ``[L_hat, stderr]`` at ``z = E + i eta``.

    Row ``i`` uses stream ``seed/(i,)`` so the output depends only on the
    row position and the parameters.
    """

    def __init__(self, K=2, W=1, A=None, ensemble="goe", lam=0.0, eta=1e-3, n=2000, replicas=32,
                 pool_size=10_000, burn_in=1000, seed=0):
        self.K = K
        self.W = W
        self.A = A
        self.ensemble = ensemble
        self.lam = lam
        self.eta = eta
        self.n = n
        self.replicas = replicas
        self.pool_size = pool_size
        self.burn_in = burn_in
        self.seed = seed

    def _model(self):
        A = None if self.A is None else np.asarray(self.A, dtype=float)
        return ModelSpec(self.K, self.W, A, EnsembleSpec(self.ensemble, self.W), self.lam)

    def fit(self, X, y=None):
        _energies(X)
        self.model_ = self._model()
        self.pool_config_ = PoolConfig(self.pool_size, self.burn_in)
        self.n_features_in_ = 1
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        out = np.empty((len(E := _energies(X)), 2))
        root = RngStream(self.seed)
        for i, e in enumerate(E):
            z = complex(e, self.eta)
            stream = root.child(i)
            pool = prepare_pool(self.model_, z, self.pool_config_, stream)
            est = estimate_L(self.model_, z, self.n, stream, self.replicas, pool, self.pool_config_)
            out[i] = est.mean, est.stderr
        return out


class PhaseClassifier(ClassifierMixin, BaseEstimator):
    """Threshold ``L_hat`` against ``log K``; ``fit`` only validates input.

    ``fit`` is unsupervised: labels passed as ``y`` are ignored apart from
    the usual shape checks, and ``classes_`` is always the three phases.
    """

    def __init__(self, transformer=None, n_sigma=3.0):
        self.transformer = transformer
        self.n_sigma = n_sigma

    def fit(self, X, y=None):
        E = _energies(X)
        if y is not None and len(y) != len(E):
            raise ValueError("X and y have different lengths")
        base = LyapunovTransformer() if self.transformer is None else clone(self.transformer)
        self.transformer_ = base.fit(X)
        self.classes_ = np.array(CLASSES)
        self.log_K_ = math.log(self.transformer_.K)
        self.n_features_in_ = 1
        return self

    def decision_function(self, X):
        """``(L_hat - log K) / stderr`` per energy (infinite when stderr is 0)."""
        check_is_fitted(self, "transformer_")
        L = self.transformer_.transform(X)
        diff = L[:, 0] - self.log_K_
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(L[:, 1] > 0, diff / L[:, 1], np.sign(diff) * np.inf)

    def predict(self, X):
        score = self.decision_function(X)
        out = np.full(score.shape, "boundary", dtype=object)
        out[score < -self.n_sigma] = "deloc"
        out[score > self.n_sigma] = "loc"
        return out


__all__ = ["CLASSES", "LyapunovTransformer", "PhaseClassifier"]
