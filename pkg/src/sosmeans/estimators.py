"""scikit-learn style wrappers around the robust and mixture pipelines."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .mixtures import learn_mixture_means, learn_nonuniform
from .robust import DEFAULT_EPS_MAX, DEFAULT_TAU, estimate_mean


def _check_X(est, X, reset: bool):
    X = check_array(X, dtype=np.float64, ensure_min_samples=1)
    if reset:
        est.n_features_in_ = X.shape[1]
    elif X.shape[1] != est.n_features_in_:
        raise ValueError(f"X has {X.shape[1]} features, expected {est.n_features_in_}")
    return X


class SoSRobustMean(BaseEstimator):
    """Mean of an eps-corrupted sample.

    Parameters
    ----------
    eps : float
        Assumed corruption fraction.
    t : int
        Moment order used by the subset constraints.
    tau, pe_degree, eps_max
        Passed to :func:`sosmeans.robust.estimate_mean`.

    Attributes
    ----------
    location_ : ndarray of shape (n_features,)
    pruned_ : ndarray of int
        Rows dropped by the naive prune.
    diagnostics_ : dict
    """

    def __init__(self, eps=0.1, t=4, tau=DEFAULT_TAU, pe_degree=None, eps_max=DEFAULT_EPS_MAX):
        self.eps = eps
        self.t = t
        self.tau = tau
        self.pe_degree = pe_degree
        self.eps_max = eps_max

    def fit(self, X, y=None):
        X = _check_X(self, X, reset=True)
        res = estimate_mean(X, self.eps, self.t, tau=self.tau, pe_degree=self.pe_degree,
                            eps_max=self.eps_max)
        self.location_ = res.mean
        self.pruned_ = res.pruned
        self.diagnostics_ = res.diagnostics
        return self

    def error(self, mu_true) -> float:
        """Euclidean distance from ``location_`` to ``mu_true``."""
        check_is_fitted(self, "location_")
        return float(np.linalg.norm(self.location_ - np.asarray(mu_true, dtype=float)))


class _CentersMixin(ClusterMixin):
    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = _check_X(self, X, reset=False)
        D = np.linalg.norm(X[:, None, :] - self.cluster_centers_[None, :, :], axis=2)
        return np.argmin(D, axis=1)


class SoSMixtureMeans(_CentersMixin, BaseEstimator):
    """Uniform-weight mixture clustering by rounding ``pE w w^T``.

    Attributes
    ----------
    cluster_centers_ : ndarray of shape (n_clusters, n_features)
    labels_ : ndarray of shape (n_samples,)
    diagnostics_ : dict
    """

    def __init__(self, n_clusters=2, t=4, delta=None, tau=None, eps_for_mean_step=None, E=None,
                 pe_degree=None, precluster_radius=None, random_state=None):
        self.n_clusters = n_clusters
        self.t = t
        self.delta = delta
        self.tau = tau
        self.eps_for_mean_step = eps_for_mean_step
        self.E = E
        self.pe_degree = pe_degree
        self.precluster_radius = precluster_radius
        self.random_state = random_state

    def fit(self, X, y=None):
        X = _check_X(self, X, reset=True)
        res = learn_mixture_means(X, self.n_clusters, self.t, self.tau, self.eps_for_mean_step,
                                  self.random_state, delta=self.delta, E=self.E,
                                  pe_degree=self.pe_degree, precluster_radius=self.precluster_radius)
        self.cluster_centers_ = res.means
        self.labels_ = res.assignment.labels
        self.diagnostics_ = res.diagnostics
        return self


class SoSNonuniformMixture(_CentersMixin, BaseEstimator):
    """Mixture with unknown, possibly unequal weights; clusters are peeled one at a time."""

    def __init__(self, eta=0.2, t=4, xi=0.05, tau=None, c=2.0, pe_degree=None, random_state=None):
        self.eta = eta
        self.t = t
        self.xi = xi
        self.tau = tau
        self.c = c
        self.pe_degree = pe_degree
        self.random_state = random_state

    def fit(self, X, y=None):
        X = _check_X(self, X, reset=True)
        res = learn_nonuniform(X, self.eta, self.t, self.xi, self.random_state, tau=self.tau,
                               c=self.c, pe_degree=self.pe_degree)
        self.cluster_centers_ = res.means
        self.labels_ = res.assignment.labels
        self.n_clusters_ = len(res.means)
        self.diagnostics_ = res.diagnostics
        return self
