"""Periodic cubic lattices, field configurations and free-field modes.

Sites are indexed row-major over ``dims`` (last axis fastest), the same
order used by :func:`numpy.ravel_multi_index`.  Every continuum integral
``∫ d^dx`` becomes ``a**d * sum_x``; the factor ``a**d`` is exposed as
:attr:`LatticeSpec.cell`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class LatticeSpec:
    dims: tuple[int, ...]
    spacing: float = 1.0

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if not 1 <= len(dims) <= 3:
            raise ValueError(f"lattice needs 1 to 3 axes, got {len(dims)}")
        if any(n < 1 for n in dims):
            raise ValueError(f"every lattice dimension must be >= 1, got {list(dims)}")
        if not np.isfinite(self.spacing) or self.spacing <= 0:
            raise ValueError(f"lattice spacing must be positive, got {self.spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", float(self.spacing))

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def volume(self) -> int:
        """Number of sites V."""
        return int(np.prod(self.dims))

    @property
    def cell(self) -> float:
        """Volume a**d of one lattice cell."""
        return self.spacing ** self.ndim

    @property
    def physical_volume(self) -> float:
        return self.volume * self.cell

    def site_index(self, coords) -> int:
        coords = tuple(int(c) % n for c, n in zip(coords, self.dims))
        return int(np.ravel_multi_index(coords, self.dims))

    def site_coords(self, index: int) -> tuple[int, ...]:
        return tuple(int(c) for c in np.unravel_index(index, self.dims))

    @cached_property
    def neighbors(self) -> np.ndarray:
        """Array ``(ndim, 2, V)``: forward and backward neighbour of each site per axis."""
        grid = np.indices(self.dims).reshape(self.ndim, -1)
        out = np.empty((self.ndim, 2, self.volume), dtype=np.intp)
        for axis, n in enumerate(self.dims):
            for j, step in enumerate((1, -1)):
                shifted = grid.copy()
                shifted[axis] = (shifted[axis] + step) % n
                out[axis, j] = np.ravel_multi_index(tuple(shifted), self.dims)
        return out

    def displacement_lengths(self) -> np.ndarray:
        """Minimum-image distance from site 0 to every site, physical units."""
        parts = []
        for n in self.dims:
            k = np.arange(n)
            parts.append(np.minimum(k, n - k).astype(float))
        mesh = np.meshgrid(*parts, indexing="ij")
        r2 = sum(m**2 for m in mesh)
        return self.spacing * np.sqrt(r2).ravel()


def build_lattice(dims, spacing=1.0) -> LatticeSpec:
    return LatticeSpec(tuple(dims), spacing)


@dataclass(frozen=True)
class FieldConfig:
    """One point of configuration space: a real field value per site."""

    lattice: LatticeSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        if values.shape != (self.lattice.volume,):
            raise ValueError(
                f"field has {values.size} values but lattice has {self.lattice.volume} sites"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, lattice: LatticeSpec) -> FieldConfig:
        return cls(lattice, np.zeros(lattice.volume))


def config_distance(a: FieldConfig, b: FieldConfig) -> float:
    """Information distance sqrt(a**d * sum (φa - φb)**2)."""
    if a.lattice != b.lattice:
        raise ValueError("configurations live on different lattices")
    diff = a.values - b.values
    return float(np.sqrt(a.lattice.cell * np.dot(diff, diff)))


@dataclass(frozen=True)
class PotentialSpec:
    """On-site potential ½m²φ² + λ3 φ³ + λ4 φ⁴ (gradient energy handled by the lattice)."""

    m: float = 1.0
    lambda3: float = 0.0
    lambda4: float = 0.0

    def __post_init__(self):
        for name in ("m", "lambda3", "lambda4"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.m < 0:
            raise ValueError(f"mass must be >= 0, got {self.m}")
        if self.lambda4 < 0:
            raise ValueError(f"lambda4 must be >= 0, got {self.lambda4}")
        if self.lambda3 != 0 and self.lambda4 <= 0:
            raise ValueError("a cubic coupling needs lambda4 > 0 to stay bounded below")

    @property
    def is_free(self) -> bool:
        return self.lambda3 == 0 and self.lambda4 == 0

    def anharmonic(self, phi):
        return self.lambda3 * phi**3 + self.lambda4 * phi**4


@dataclass(frozen=True)
class ModeTable:
    """Momentum modes of a periodic lattice, in row-major order of the mode indices."""

    lattice: LatticeSpec
    m: float
    indices: np.ndarray = field(repr=False)
    k2: np.ndarray = field(repr=False)
    omega: np.ndarray = field(repr=False)

    @property
    def has_zero_mode(self) -> bool:
        return bool(self.omega[0] == 0.0)

    def omega_grid(self) -> np.ndarray:
        return self.omega.reshape(self.lattice.dims)


def lattice_momentum_sq(lattice: LatticeSpec) -> np.ndarray:
    """k̂² = Σ_i (2/a sin(π n_i / N_i))² on the mode grid, shape ``dims``."""
    a = lattice.spacing
    total = np.zeros(lattice.dims)
    for axis, n in enumerate(lattice.dims):
        shape = [1] * lattice.ndim
        shape[axis] = n
        khat = (2.0 / a) * np.sin(np.pi * np.arange(n) / n)
        total = total + (khat**2).reshape(shape)
    return total


def mode_table(lattice: LatticeSpec, m: float) -> ModeTable:
    if not np.isfinite(m) or m < 0:
        raise ValueError(f"mass must be >= 0, got {m}")
    k2 = lattice_momentum_sq(lattice).ravel()
    omega = np.sqrt(k2 + m * m)
    omega[0] = m
    indices = np.indices(lattice.dims).reshape(lattice.ndim, -1).T.copy()
    for arr in (indices, k2, omega):
        arr.setflags(write=False)
    return ModeTable(lattice, float(m), indices, k2, omega)


def kinetic_matrix(lattice: LatticeSpec, m: float, sparse: bool = False):
    """K = -∇²_lattice + m², the quadratic form of ½(∇φ)² + ½m²φ²."""
    V = lattice.volume
    inv_a2 = 1.0 / lattice.spacing**2
    rows = [np.arange(V)]
    cols = [np.arange(V)]
    vals = [np.full(V, 2 * lattice.ndim * inv_a2 + m * m)]
    for axis in range(lattice.ndim):
        for j in range(2):
            rows.append(np.arange(V))
            cols.append(lattice.neighbors[axis, j])
            vals.append(np.full(V, -inv_a2))
    K = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(V, V)
    ).tocsr()
    K.sum_duplicates()
    if sparse:
        return K
    if V > 8192:
        raise MemoryError(f"dense kinetic matrix with V={V} refused; pass sparse=True")
    return K.toarray()
