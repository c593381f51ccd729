"""Synthetic surface-inspection data generation and evaluation."""

from surfgen.grid import (
    FieldStats,
    GridError,
    HeightField,
    NormalMap,
    TopographyParseError,
    field_stats,
    fit_moments,
    height_to_normal,
    load_topography,
    read_grid,
    resample_nearest,
    write_grid,
)

__all__ = [
    "FieldStats",
    "GridError",
    "HeightField",
    "NormalMap",
    "TopographyParseError",
    "field_stats",
    "fit_moments",
    "height_to_normal",
    "load_topography",
    "read_grid",
    "resample_nearest",
    "write_grid",
]

__version__ = "0.1.0"
