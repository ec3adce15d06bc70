"""Uniform time grids and time-indexed families of state functions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .measure import FiniteMeasureSpace

__all__ = ["TimeGrid", "Field"]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < ... < t_steps = t_end."""

    t_end: float
    steps: int

    def __post_init__(self):
        if self.t_end <= 0.0:
            raise ValueError("t_end must be positive")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")

    @property
    def dt(self) -> float:
        return self.t_end / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.steps + 1)

    def refined(self, substeps: int) -> "TimeGrid":
        if substeps < 1:
            raise ValueError("substeps must be >= 1")
        return TimeGrid(self.t_end, self.steps * substeps)


@dataclass(frozen=True)
class Field:
    """Values u(t_k, x) on a time grid; one row per grid node.

    The value array is frozen at construction: fields are solver outputs or
    coefficient data, never mutated in place.
    """

    grid: TimeGrid
    space: FiniteMeasureSpace
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        expected = (self.grid.steps + 1, self.space.n)
        if vals.shape != expected:
            raise ValueError(f"field values shape {vals.shape}, expected {expected}")
        if vals.flags.writeable:
            vals = vals.copy()
            vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: TimeGrid, space: FiniteMeasureSpace, fn) -> "Field":
        """Tabulate fn(t) -> length-N array on the grid nodes."""
        vals = np.stack([np.asarray(fn(t), dtype=float) for t in grid.times])
        return cls(grid, space, vals)

    @classmethod
    def constant(cls, grid: TimeGrid, space: FiniteMeasureSpace, f) -> "Field":
        f = space.check_function(f)
        return cls(grid, space, np.tile(f, (grid.steps + 1, 1)))

    def at(self, k: int) -> np.ndarray:
        return self.values[k]

    def min(self) -> float:
        return float(self.values.min())

    def sup_norm(self) -> float:
        return float(np.abs(self.values).max())

    def __sub__(self, other: "Field") -> "Field":
        if self.grid != other.grid or self.space != other.space:
            raise ValueError("fields live on different grids or spaces")
        return Field(self.grid, self.space, self.values - other.values)

    def __add__(self, other: "Field") -> "Field":
        if self.grid != other.grid or self.space != other.space:
            raise ValueError("fields live on different grids or spaces")
        return Field(self.grid, self.space, self.values + other.values)
