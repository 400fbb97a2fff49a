"""scikit-learn style wrappers around the decoders.

Rows of ``X`` are half-LLR vectors of one code; ``transform`` returns the
soft bit estimates ``<sigma_i>`` row by row. ``fit`` learns nothing: the code
is a hyperparameter. It only checks the input width.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .bp import bp_decode
from .graph import TannerGraph, load_code
from .inference import DEFAULT_BUDGET, gibbs_batch


def _resolve(code) -> TannerGraph:
    return code if isinstance(code, TannerGraph) else load_code(str(code))


class _DecoderBase(BaseEstimator, TransformerMixin):
    def fit(self, X, y=None):
        G = _resolve(self.code)
        X = check_array(X, dtype=float)
        if X.shape[1] != G.n:
            raise ValueError(f"expected {G.n} columns, got {X.shape[1]}")
        self.graph_ = G
        self.n_features_in_ = G.n
        return self

    def _check(self, X):
        check_is_fitted(self, "graph_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        return X

    def predict(self, X):
        """Hard decisions as bits (0 for sigma = +1)."""
        return (self.transform(X) < 0).astype(np.uint8)


class ExactMAPDecoder(_DecoderBase):
    """Bitwise MAP marginals by exhaustive enumeration of the code."""

    def __init__(self, code="builtin:spc3", budget: int = DEFAULT_BUDGET):
        self.code = code
        self.budget = budget

    def transform(self, X):
        X = self._check(X)
        return gibbs_batch(self.graph_, X, budget=self.budget).marginals


class BPDecoder(_DecoderBase):
    """Flooding sum-product with a fixed number of iterations."""

    def __init__(self, code="builtin:spc3", iterations: int = 20):
        self.code = code
        self.iterations = iterations

    def transform(self, X):
        X = self._check(X)
        return np.vstack([bp_decode(self.graph_, row, self.iterations) for row in X])
