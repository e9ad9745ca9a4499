"""scikit-learn style wrappers around the inverse Born series.

The forward model is a constructor parameter; ``fit`` consumes a
MeasurementSet and ``transform`` maps measurements to the reconstructed
potential values.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import inverse
from .field import MeasurementSet, Potential, relative_error


def check_measurements(X, model):
    """Validate data against the model's source and detector layout."""
    if not isinstance(X, MeasurementSet):
        raise TypeError(f"expected a MeasurementSet, got {type(X).__name__}")
    want = (model.n_sources, 2 * len(model.detectors))
    if X.data.shape != want:
        raise ValueError(f"measurement shape {X.data.shape} does not match model {want}")
    if not np.all(np.isfinite(X.data)):
        raise ValueError("measurements contain non-finite values")
    return X


def check_potential(V, grid):
    if not isinstance(V, Potential):
        V = Potential(grid, np.asarray(V, dtype=float))
    if V.grid != grid:
        raise ValueError("potential is not on the model grid")
    return V


class InverseBornSeries(TransformerMixin, BaseEstimator):
    """Truncated inverse Born series reconstruction.

    Parameters mirror :class:`inverse.SeriesConfig`; ``method`` picks the
    full series (``"ibs"``) or the reduced one (``"ribs"``).
    """

    def __init__(self, model=None, method="ibs", n_terms=3, lam=1e-3,
                 lam_convention="euclidean", cg_tol=1e-8, cg_maxit=500):
        self.model = model
        self.method = method
        self.n_terms = n_terms
        self.lam = lam
        self.lam_convention = lam_convention
        self.cg_tol = cg_tol
        self.cg_maxit = cg_maxit

    def _config(self):
        return inverse.SeriesConfig(self.method, self.n_terms, self.lam, self.cg_tol,
                                    self.cg_maxit, self.lam_convention)

    def fit(self, X, y=None):
        """Run the series on measurements X; y is an optional true potential."""
        if self.model is None:
            raise ValueError("a forward model is required")
        data = check_measurements(X, self.model)
        truth = None if y is None else check_potential(y, self.model.grid)
        self.report_ = inverse.run_series(self.model, data, self._config(), truth)
        self.terms_ = self.report_.terms
        self.cumulative_ = self.report_.cumulative
        self.potential_ = self.report_.potential
        self._fitted_on = X
        return self

    def transform(self, X):
        """Reconstructed potential values for X (refits when X is new data)."""
        check_is_fitted(self, "potential_")
        if X is not getattr(self, "_fitted_on", None):
            self.fit(X)
        return self.potential_.values

    def fit_transform(self, X, y=None, **fit_params):
        self.fit(X, y)
        return self.potential_.values

    def predict(self, X):
        return Potential(self.model.grid, self.transform(X))

    def score(self, X, y):
        """Negative relative L2 error of the reconstruction against y."""
        return -relative_error(self.predict(X), check_potential(y, self.model.grid))


class ReducedInverseBornSeries(InverseBornSeries):
    """Reduced series: one K2 application per term beyond the first."""

    def __init__(self, model=None, method="ribs", n_terms=3, lam=1e-3,
                 lam_convention="euclidean", cg_tol=1e-8, cg_maxit=500):
        super().__init__(model, method, n_terms, lam, lam_convention, cg_tol, cg_maxit)
