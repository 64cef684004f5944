"""Finite dyadic lattice on [0,1)^d and piecewise-constant fields.

Cells are stored in Morton (Z-curve) order. With that ordering every dyadic
cube of the lattice is a contiguous block of cells, so averages over all cubes
of one level are a single reshape + mean.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from pathlib import Path

import numpy as np


class DomainError(ValueError):
    """Input outside the domain of an operation."""


MAX_DEPTH = {1: 14, 2: 7}


@dataclass(frozen=True, order=True)
class DyadicCube:
    level: int
    coords: tuple[int, ...]

    def __post_init__(self):
        if self.level < 0:
            raise DomainError(f"negative level {self.level}")
        side = 1 << self.level
        if any(c < 0 or c >= side for c in self.coords):
            raise DomainError(f"coords {self.coords} out of range for level {self.level}")

    @property
    def d(self) -> int:
        return len(self.coords)

    @property
    def measure(self) -> Fraction:
        return Fraction(1, 1 << (self.level * self.d))

    @property
    def side(self) -> Fraction:
        return Fraction(1, 1 << self.level)

    def parent(self) -> "DyadicCube":
        if self.level == 0:
            raise DomainError("the root has no parent")
        return DyadicCube(self.level - 1, tuple(c >> 1 for c in self.coords))

    def children(self) -> list["DyadicCube"]:
        out = []
        for bits in range(1 << self.d):
            # first coordinate takes the high bit, matching the Morton layout
            offs = [(bits >> (self.d - 1 - k)) & 1 for k in range(self.d)]
            out.append(DyadicCube(self.level + 1, tuple(2 * c + o for c, o in zip(self.coords, offs))))
        return out

    def contains(self, other: "DyadicCube") -> bool:
        if other.level < self.level or other.d != self.d:
            return False
        shift = other.level - self.level
        return all((c >> shift) == s for c, s in zip(other.coords, self.coords))

    def interval(self) -> tuple[tuple[Fraction, Fraction], ...]:
        s = self.side
        return tuple((c * s, (c + 1) * s) for c in self.coords)

    def __str__(self):
        parts = [f"[{a},{b})" for a, b in self.interval()]
        return "x".join(parts)


def _interleave(coords: tuple[int, ...], level: int) -> int:
    d = len(coords)
    if d == 1:
        return coords[0]
    m = 0
    for bit in range(level):
        for k, c in enumerate(coords):
            m |= ((c >> bit) & 1) << (bit * d + (d - 1 - k))
    return m


def _deinterleave(m: int, d: int, level: int) -> tuple[int, ...]:
    if d == 1:
        return (m,)
    coords = [0] * d
    for bit in range(level):
        for k in range(d):
            coords[k] |= ((m >> (bit * d + (d - 1 - k))) & 1) << bit
    return tuple(coords)


class DyadicLattice:
    """Dyadic cubes of [0,1)^d down to a finest level ``depth``."""

    def __init__(self, d: int, depth: int):
        if d not in MAX_DEPTH:
            raise DomainError(f"dimension must be 1 or 2, got {d}")
        if not 1 <= depth <= MAX_DEPTH[d]:
            raise DomainError(f"depth must be in [1, {MAX_DEPTH[d]}] for d={d}, got {depth}")
        self.d = d
        self.depth = depth

    def __repr__(self):
        return f"DyadicLattice(d={self.d}, depth={self.depth})"

    def __eq__(self, other):
        return isinstance(other, DyadicLattice) and (self.d, self.depth) == (other.d, other.depth)

    def __hash__(self):
        return hash((self.d, self.depth))

    @property
    def ncells(self) -> int:
        return 1 << (self.depth * self.d)

    @property
    def cell_measure(self) -> Fraction:
        return Fraction(1, self.ncells)

    @property
    def root(self) -> DyadicCube:
        return DyadicCube(0, (0,) * self.d)

    def block(self, level: int) -> int:
        """Number of finest cells in a cube of the given level."""
        return 1 << ((self.depth - level) * self.d)

    def count(self, level: int) -> int:
        return 1 << (level * self.d)

    def check(self, Q: DyadicCube) -> None:
        if Q.d != self.d or Q.level > self.depth:
            raise DomainError(f"cube {Q} is not in {self}")

    def index(self, Q: DyadicCube) -> int:
        """Position of Q among the cubes of its level (Morton order)."""
        self.check(Q)
        return _interleave(Q.coords, Q.level)

    def cube(self, level: int, index: int) -> DyadicCube:
        return DyadicCube(level, _deinterleave(index, self.d, level))

    def cells(self, Q: DyadicCube) -> slice:
        size = self.block(Q.level)
        start = self.index(Q) * size
        return slice(start, start + size)

    def cubes(self, level: int) -> list[DyadicCube]:
        return [self.cube(level, i) for i in range(self.count(level))]

    def all_cubes(self, max_level: int | None = None) -> list[DyadicCube]:
        top = self.depth if max_level is None else min(max_level, self.depth)
        return [Q for lev in range(top + 1) for Q in self.cubes(lev)]

    def cell_cube(self, x: int) -> DyadicCube:
        self._check_cell(x)
        return self.cube(self.depth, x)

    def cubes_containing(self, x: int) -> list[DyadicCube]:
        """Ancestor chain of cell x, finest first, root last."""
        self._check_cell(x)
        return [self.cube(lev, x >> ((self.depth - lev) * self.d)) for lev in range(self.depth, -1, -1)]

    def _check_cell(self, x: int) -> None:
        if not 0 <= x < self.ncells:
            raise DomainError(f"cell {x} out of range")

    def ancestor_index(self, level: int) -> np.ndarray:
        """For every cell, the index of its level-``level`` ancestor."""
        return np.arange(self.ncells) >> ((self.depth - level) * self.d)

    # -- array helpers -------------------------------------------------

    def blocks(self, values: np.ndarray, level: int) -> np.ndarray:
        values = np.asarray(values)
        return values.reshape((self.count(level), self.block(level)) + values.shape[1:])

    def level_means(self, values: np.ndarray, level: int) -> np.ndarray:
        return self.blocks(values, level).mean(axis=1)

    def expand(self, per_cube: np.ndarray, level: int) -> np.ndarray:
        return np.repeat(np.asarray(per_cube), self.block(level), axis=0)

    @cached_property
    def grid_coords(self) -> np.ndarray:
        """Integer grid coordinates (ncells, d) of every cell, Morton order."""
        out = np.array([_deinterleave(m, self.d, self.depth) for m in range(self.ncells)], dtype=np.int64)
        return out.reshape(self.ncells, self.d)

    @cached_property
    def centers(self) -> np.ndarray:
        return (self.grid_coords + 0.5) / (1 << self.depth)

    @cached_property
    def rowmajor_order(self) -> np.ndarray:
        """perm such that values_rowmajor = values_morton[perm]."""
        side = 1 << self.depth
        g = self.grid_coords
        rm = np.zeros(self.ncells, dtype=np.int64)
        for k in range(self.d):
            rm = rm * side + g[:, k]
        perm = np.empty(self.ncells, dtype=np.int64)
        perm[rm] = np.arange(self.ncells)
        return perm

    def to_rowmajor(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values)[self.rowmajor_order]

    def from_rowmajor(self, values: np.ndarray) -> np.ndarray:
        out = np.empty_like(np.asarray(values))
        out[self.rowmajor_order] = values
        return out

    def triple_mask(self, Q: DyadicCube) -> np.ndarray:
        """Cells of the concentric triple 3Q intersected with [0,1)^d."""
        self.check(Q)
        shift = self.depth - Q.level
        up = self.grid_coords >> shift
        inside = np.ones(self.ncells, dtype=bool)
        for k in range(self.d):
            inside &= np.abs(up[:, k] - Q.coords[k]) <= 1
        return inside


@dataclass(frozen=True)
class VectorField:
    """Cellwise-constant field; values has shape (ncells,) or (ncells, n)."""

    lattice: DyadicLattice
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.ndim not in (1, 2) or vals.shape[0] != self.lattice.ncells:
            raise DomainError(f"expected {self.lattice.ncells} cell values, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise DomainError("field has non-finite values")
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return 1 if self.values.ndim == 1 else self.values.shape[1]

    @property
    def columns(self) -> np.ndarray:
        """Values as a (ncells, n) array."""
        return self.values.reshape(self.lattice.ncells, -1)

    def to_dict(self) -> dict:
        L = self.lattice
        return {
            "dimension": L.d,
            "depth": L.depth,
            "n": self.n,
            "values": L.to_rowmajor(self.values).tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "VectorField":
        L = DyadicLattice(int(doc["dimension"]), int(doc["depth"]))
        vals = np.asarray(doc["values"], dtype=float)
        n = int(doc.get("n", 1))
        if n > 1 and (vals.ndim != 2 or vals.shape[1] != n):
            raise DomainError(f"values do not have n={n} components")
        return cls(L, L.from_rowmajor(vals))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "VectorField":
        return cls.from_dict(json.loads(Path(path).read_text()))


def average(field: VectorField, Q: DyadicCube) -> np.ndarray:
    """(1/|Q|) * integral of the field over Q."""
    field.lattice.check(Q)
    return field.values[field.lattice.cells(Q)].mean(axis=0)


def level_sums_exact(lattice: DyadicLattice, level: int) -> Fraction:
    return sum((Q.measure for Q in lattice.cubes(level)), Fraction(0))
