"""Library of smooth compactly supported bumps used by the test batteries.

Each bump is b((x - c) / r) with b(u) = exp(-1 / (1 - u^2)) on |u| < 1.
Derivatives are evaluated in closed form so that pairings against rough
fields never need a numerical derivative of the test function.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np


def _profile(u: np.ndarray, order: int) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) < 1.0
    s = np.where(inside, 1.0 - u * u, 1.0)
    b = np.where(inside, np.exp(-1.0 / s), 0.0)
    if order == 0:
        return b
    if order == 1:
        return b * (-2.0 * u / s**2)
    if order == 2:
        return b * (6.0 * u**4 - 2.0) / s**4
    raise ValueError("order must be 0, 1 or 2")


@dataclass(frozen=True)
class Bump:
    name: str
    center: float
    radius: float

    def __call__(self, x: np.ndarray, order: int = 0) -> np.ndarray:
        u = (np.asarray(x, dtype=float) - self.center) / self.radius
        return _profile(u, order) / self.radius**order

    @property
    def support(self) -> tuple[float, float]:
        return self.center - self.radius, self.center + self.radius


def load_library(path=None) -> list[Bump]:
    if path is None:
        text = resources.files("mkdvlab").joinpath("data/test_functions.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    data = json.loads(text)
    return [Bump(b["name"], float(b["center"]), float(b["radius"])) for b in data["bumps"]]


def library_support(bumps) -> tuple[float, float]:
    lo = min(b.support[0] for b in bumps)
    hi = max(b.support[1] for b in bumps)
    return lo, hi
