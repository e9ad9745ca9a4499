"""Forward and inverse scattering for chiral and anti-chiral Dirac models."""

from .antichiral import AntichiralModel, AntichiralParams
from .chiral import ChiralModel, ChiralParams
from .estimators import InverseBornSeries, ReducedInverseBornSeries
from .field import Grid2D, MeasurementSet, Potential, SpinorField, relative_error
from .inverse import SeriesConfig, ibs_reconstruct, k1_pseudoinverse, ribs_reconstruct

__all__ = [
    "AntichiralModel", "AntichiralParams", "ChiralModel", "ChiralParams",
    "Grid2D", "InverseBornSeries", "MeasurementSet", "Potential",
    "ReducedInverseBornSeries", "SeriesConfig", "SpinorField",
    "ibs_reconstruct", "k1_pseudoinverse", "relative_error", "ribs_reconstruct",
]
