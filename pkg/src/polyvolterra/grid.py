"""Uniform time grid shared by all solvers."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid:
    T: float
    M: int

    def __post_init__(self):
        if self.M < 1 or not self.T > 0:
            raise ValueError(f"grid needs T > 0 and M >= 1, got T={self.T}, M={self.M}")

    @property
    def dt(self):
        return self.T / self.M

    @property
    def times(self):
        return self.dt * np.arange(self.M + 1)

    def index(self, t, rtol=1e-9):
        """Grid index of t; raises if t is not a grid point."""
        x = t / self.dt
        j = int(round(x))
        if abs(x - j) > rtol * max(1.0, abs(x)) or not 0 <= j <= self.M:
            raise ValueError(f"time {t} is not a point of the grid (T={self.T}, M={self.M})")
        return j

    def on_grid(self, t):
        try:
            self.index(t)
        except ValueError:
            return False
        return True
