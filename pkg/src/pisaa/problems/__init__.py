"""Benchmark cost functions and the registry used by configs."""

from __future__ import annotations

import numpy as np

from .base import BoxSpace, Problem
from .ising import (BinaryImage, IsingRestoration, ising_count_delta, ising_counts, ising_energy,
                    ising_energy_delta, read_binary_grid, read_pgm)
from .mixture import GaussianMixture, gaussian_mixture_energy, load_components
from .protein import (ABProtein, AbChain, ab2d_energy, ab3d_energy, angles_from_positions,
                      energy_from_positions, fibonacci_sequence)
from .quadratic import Quadratic
from .rastrigin import RotatedRastrigin, RotationMatrix, rastrigin, rotated_rastrigin, salomon_rotation

__all__ = [
    "ABProtein", "AbChain", "BinaryImage", "BoxSpace", "GaussianMixture", "IsingRestoration",
    "Problem", "Quadratic", "RotatedRastrigin", "RotationMatrix", "ab2d_energy", "ab3d_energy",
    "angles_from_positions", "default_partition", "energy_from_positions", "fibonacci_sequence",
    "gaussian_mixture_energy", "ising_count_delta", "ising_counts", "ising_energy",
    "ising_energy_delta", "load_components", "make_problem", "rastrigin", "read_binary_grid",
    "read_pgm", "rotated_rastrigin", "salomon_rotation", "synthetic_image",
]

# energy grids used in the reference experiments, as (u_min, u_max, m)
DEFAULT_PARTITIONS = {
    "mixture": (0.0, 9.0, 19),
    "rastrigin": (-0.01, 40.0, 400),
    "ising": (-971500.5, -826315.5, 200),
}


def synthetic_image(height: int, width: int, noise: float = 0.1, seed=0):
    """Blocky binary scene plus i.i.d. bit flips; returns ``(clean, noisy)``."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width]
    clean = ((xx // max(1, width // 4) + yy // max(1, height // 3)) % 2).astype(np.int8)
    disk = (yy - height / 2) ** 2 + (xx - width / 2) ** 2 < (min(height, width) / 4) ** 2
    clean[disk] = 1 - clean[disk]
    flips = rng.random((height, width)) < noise
    noisy = np.where(flips, 1 - clean, clean).astype(np.int8)
    return clean, noisy


def _ising_from_params(params):
    p = dict(params)
    if "image" in p:
        path = str(p.pop("image"))
        if path.lower().endswith(".pgm"):
            observed = read_pgm(path, int(p.pop("threshold", 128)))
        else:
            observed = read_binary_grid(path)
    elif "observed" in p:
        observed = np.asarray(p.pop("observed"), dtype=np.int8)
    else:
        syn = p.pop("synthetic", {}) or {}
        _, observed = synthetic_image(int(syn.get("height", 24)), int(syn.get("width", 32)),
                                      float(syn.get("noise", 0.1)), syn.get("seed", 0))
    p.pop("threshold", None)
    return IsingRestoration(observed, **p)


def make_problem(spec) -> Problem:
    """Build a problem from a ``{"name": ..., **params}`` mapping."""
    if isinstance(spec, Problem):
        return spec
    params = dict(spec)
    name = params.pop("name")
    if name == "mixture":
        comps = params.pop("components", None)
        path = params.pop("components_file", None)
        if comps is not None:
            comps = [(float(c[0]), (float(c[1]), float(c[2]))) if len(c) == 3 else (float(c[0]), tuple(c[1]))
                     for c in comps]
        elif path is not None:
            comps = load_components(path)
        return GaussianMixture(comps, **params)
    if name == "rastrigin":
        return RotatedRastrigin(**params)
    if name == "protein":
        return ABProtein(**params)
    if name == "ising":
        return _ising_from_params(params)
    if name == "quadratic":
        return Quadratic(**params)
    raise ValueError(f"unknown problem {name!r}")


def default_partition(name: str):
    return DEFAULT_PARTITIONS.get(name)
