"""Ising-prior Bayesian restoration of a binary image.

The energy is ``-(a * L + b * P)`` where ``L`` counts pixels agreeing with the
observation and ``P`` counts equal 8-neighbour pairs (each unordered pair
once). Both counts are integers, so caches built from count deltas agree
with full re-evaluation bit for bit.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .base import BoxSpace, Problem

# half of the 8-neighbourhood: every unordered pair appears exactly once
_HALF_OFFSETS = ((0, 1), (1, -1), (1, 0), (1, 1))
_OFFSETS = tuple((di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1) if (di, dj) != (0, 0))


@dataclass(frozen=True)
class BinaryImage:
    pixels: np.ndarray = field(repr=False)
    observed: np.ndarray = field(repr=False)
    a: float = 1.1
    b: float = 0.9
    count_pairs_twice: bool = False

    def __post_init__(self):
        x = np.asarray(self.pixels, dtype=np.int8)
        y = np.asarray(self.observed, dtype=np.int8)
        if x.shape != y.shape or x.ndim != 2:
            raise ValueError("pixels and observed must be 2-d arrays of the same shape")
        if self.a <= 0 or self.b <= 0:
            raise ValueError("a and b must be positive")
        object.__setattr__(self, "pixels", x)
        object.__setattr__(self, "observed", y)

    def with_pixels(self, pixels) -> "BinaryImage":
        return BinaryImage(pixels, self.observed, self.a, self.b, self.count_pairs_twice)


def _pair_counts(x: np.ndarray) -> np.ndarray:
    """Equal unordered 8-neighbour pairs for a batch ``(B, H, W)``."""
    total = np.zeros(x.shape[0], dtype=np.int64)
    H, W = x.shape[1:]
    for di, dj in _HALF_OFFSETS:
        a = x[:, 0:H - di, max(0, -dj):W - max(0, dj)]
        b = x[:, di:H, max(0, dj):W - max(0, -dj)]
        total += np.sum(a == b, axis=(1, 2))
    return total


def ising_counts(img: BinaryImage) -> tuple[int, int]:
    x = img.pixels[None]
    agree = int(np.sum(img.pixels == img.observed))
    return agree, int(_pair_counts(x)[0])


def _energy_from_counts(agree, pairs, a, b, twice):
    mult = 2.0 if twice else 1.0
    return -(a * np.asarray(agree, dtype=float) + (b * mult) * np.asarray(pairs, dtype=float))


def ising_energy(img: BinaryImage) -> float:
    agree, pairs = ising_counts(img)
    return float(_energy_from_counts(agree, pairs, img.a, img.b, img.count_pairs_twice))


def ising_count_delta(img: BinaryImage, pixel) -> tuple[int, int]:
    """Change of (agreement count, equal-pair count) when ``pixel`` flips."""
    i, j = np.unravel_index(pixel, img.pixels.shape) if np.isscalar(pixel) else pixel
    H, W = img.pixels.shape
    v = img.pixels[i, j]
    d_agree = -1 if v == img.observed[i, j] else 1
    eq = n = 0
    for di, dj in _OFFSETS:
        r, c = i + di, j + dj
        if 0 <= r < H and 0 <= c < W:
            n += 1
            eq += int(img.pixels[r, c] == v)
    # flipping turns the eq equal pairs unequal and the n - eq unequal pairs equal
    return d_agree, n - 2 * eq


def ising_energy_delta(img: BinaryImage, pixel) -> float:
    """``U(after flip) - U(before)`` from the pixel's neighbourhood and observation only."""
    d_agree, d_pairs = ising_count_delta(img, pixel)
    return float(_energy_from_counts(d_agree, d_pairs, img.a, img.b, img.count_pairs_twice))


def _neighbour_table(H: int, W: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(H * W).reshape(H, W)
    table = np.full((H * W, 8), -1, dtype=np.intp)
    for k, (di, dj) in enumerate(_OFFSETS):
        r = np.arange(H)[:, None] + di
        c = np.arange(W)[None, :] + dj
        ok = (r >= 0) & (r < H) & (c >= 0) & (c < W)
        rr = np.broadcast_to(np.clip(r, 0, H - 1), (H, W))
        cc = np.broadcast_to(np.clip(c, 0, W - 1), (H, W))
        table[:, k] = np.where(ok, idx[rr, cc], -1).ravel()
    valid = table >= 0
    return np.where(valid, table, 0), valid


def read_pgm(path, threshold: int = 128) -> np.ndarray:
    """8-bit grayscale PGM (P2 or P5) thresholded to {0, 1} (``pixel >= threshold`` -> 1)."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raise ValueError("only 8-bit PGM files are supported")
    if magic == b"P5":
        raster = np.frombuffer(data[pos + 1:pos + 1 + w * h], dtype=np.uint8)
    elif magic == b"P2":
        raster = np.array(data[pos:].split()[: w * h], dtype=np.int64)
    else:
        raise ValueError(f"not a PGM file (magic {magic!r})")
    if raster.size != w * h:
        raise ValueError("truncated PGM raster")
    return (raster.reshape(h, w) >= threshold).astype(np.int8)


def read_binary_grid(path) -> np.ndarray:
    """Plain-text grid of 0/1 characters, one image row per line (spaces optional)."""
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.replace(" ", "").replace(",", "").strip()
        if not line:
            continue
        if set(line) - {"0", "1"}:
            raise ValueError(f"non-binary character in grid row {line!r}")
        rows.append([int(c) for c in line])
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError("grid rows must be non-empty and of equal length")
    return np.array(rows, dtype=np.int8)


class IsingRestoration(Problem):
    """Individuals are flattened ``H*W`` vectors of {0, 1} pixels."""

    name = "ising"
    discrete = True
    dtype = np.int8

    def __init__(self, observed, a: float = 1.1, b: float = 0.9, count_pairs_twice: bool = False,
                 init: str = "uniform"):
        self.observed = np.asarray(observed, dtype=np.int8)
        if self.observed.ndim != 2:
            raise ValueError("observed image must be 2-d")
        if a <= 0 or b <= 0:
            raise ValueError("a and b must be positive")
        self.a, self.b = float(a), float(b)
        self.count_pairs_twice = bool(count_pairs_twice)
        self.shape = self.observed.shape
        self.init = init
        hw = self.observed.size
        super().__init__(BoxSpace(np.zeros(hw), np.ones(hw)))
        self._y = self.observed.ravel()
        self._nb, self._nb_valid = _neighbour_table(*self.shape)
        self._n_nb = self._nb_valid.sum(axis=1)

    def image(self, x) -> BinaryImage:
        return BinaryImage(np.asarray(x).reshape(self.shape), self.observed, self.a, self.b,
                           self.count_pairs_twice)

    def stats(self, X) -> np.ndarray:
        """Integer sufficient statistics ``(agree, equal_pairs)`` per row."""
        X = np.atleast_2d(X)
        agree = np.sum(X == self._y, axis=1)
        pairs = _pair_counts(X.reshape((-1,) + self.shape))
        return np.stack([agree, pairs], axis=1).astype(np.int64)

    def energy_from_stats(self, S) -> np.ndarray:
        S = np.atleast_2d(S)
        return _energy_from_counts(S[:, 0], S[:, 1], self.a, self.b, self.count_pairs_twice)

    def _energies(self, X):
        return self.energy_from_stats(self.stats(X))

    def evaluate(self, X):
        X = np.atleast_2d(X)
        self.n_evals += X.shape[0]
        S = self.stats(X)
        return self.energy_from_stats(S), S

    def energy_from_aux(self, aux):
        return self.energy_from_stats(aux)

    def flip_stats_delta(self, X, pixels) -> np.ndarray:
        """Count deltas for flipping ``pixels[r]`` in row ``r`` of ``X`` (vectorised)."""
        rows = np.arange(X.shape[0])
        v = X[rows, pixels]
        d_agree = np.where(v == self._y[pixels], -1, 1)
        nb = self._nb[pixels]
        eq = np.sum((X[rows[:, None], nb] == v[:, None]) & self._nb_valid[pixels], axis=1)
        return np.stack([d_agree, self._n_nb[pixels] - 2 * eq], axis=1).astype(np.int64)

    def contains(self, X):
        X = np.atleast_2d(X)
        return np.all((X == 0) | (X == 1), axis=1)

    def sample_initial(self, rng, size):
        if self.init == "observed":
            return np.repeat(self._y[None, :], size, axis=0)
        return rng.integers(0, 2, size=(size, self.observed.size)).astype(np.int8)

    def enumerate_states(self):
        hw = self.observed.size
        if hw > 20:
            return None
        return np.array(list(itertools.product((0, 1), repeat=hw)), dtype=np.int8)

    def describe(self):
        return {"name": self.name, "dim": self.dim, "shape": list(self.shape), "a": self.a,
                "b": self.b, "count_pairs_twice": self.count_pairs_twice}
