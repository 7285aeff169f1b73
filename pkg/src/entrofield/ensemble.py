"""Walker ensembles stepped with the maximum-entropy kernel.

Each walker is one field configuration; one call of the step loop is one
instant of entropic time, ``t = steps * dt``.  Drift comes from a provider
returning ∂Λ/∂φ with Λ = Φ/η + ½ log ρ, and the second return value flags
walkers the provider cannot serve (they are frozen and counted).

Random numbers are drawn in fixed blocks of ``BLOCK`` walkers, each from its
own Philox stream keyed by ``(seed, purpose, block, step)``.  A walker's
noise therefore depends only on its index, not on ``n`` or on how blocks
are scheduled across threads.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import ndimage

from .grid import AmplitudeGrid, EdConstants, FieldPotential, HamiltonIntegrator, HydroState
from .kernel import DriftPotential, TransitionKernel, sample_step
from .lattice import FieldConfig, LatticeSpec

BLOCK = 4096
_INIT, _STEP = 0, 1


def thread_count(workers: Optional[int] = None) -> int:
    if workers is None:
        env = os.environ.get("ENTROFIELD_THREADS")
        workers = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(workers))


def block_rng(seed: int, purpose: int, block: int, step: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(purpose, block, step))
    return np.random.Generator(np.random.Philox(ss))


def _blocks(n: int):
    return [(b, b * BLOCK, min(n, (b + 1) * BLOCK)) for b in range(-(-n // BLOCK))]


def _map_blocks(fn, n: int, workers: Optional[int]):
    blocks = _blocks(n)
    w = min(thread_count(workers), len(blocks))
    if w <= 1:
        return [fn(*b) for b in blocks]
    with ThreadPoolExecutor(max_workers=w) as pool:
        return list(pool.map(lambda b: fn(*b), blocks))


@dataclass(frozen=True)
class WalkerEnsemble:
    lattice: LatticeSpec
    values: np.ndarray = field(repr=False)
    seed: int
    steps: int = 0
    dt: Optional[float] = None
    frozen: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] != self.lattice.volume or v.shape[0] < 1:
            raise ValueError(f"values must have shape (n, {self.lattice.volume})")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        fr = np.zeros(len(v), bool) if self.frozen is None else np.array(self.frozen, bool)
        fr.setflags(write=False)
        object.__setattr__(self, "frozen", fr)

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def time(self) -> float:
        return 0.0 if self.dt is None else self.steps * self.dt

    @property
    def frozen_count(self) -> int:
        return int(self.frozen.sum())

    @property
    def walkers(self) -> list:
        return [FieldConfig(self.lattice, row) for row in self.values]


def init_ensemble(sampler: Callable[[np.random.Generator, int], np.ndarray], n: int, seed: int,
                  lattice: LatticeSpec) -> WalkerEnsemble:
    """Draw ``n`` walkers i.i.d. from ρ₀; ``sampler(rng, k)`` returns ``(k, V)`` values."""
    if n < 1:
        raise ValueError("need at least one walker")

    def draw(b, lo, hi):
        full = np.asarray(sampler(block_rng(seed, _INIT, b), BLOCK), dtype=float)
        return full.reshape(BLOCK, lattice.volume)[: hi - lo]

    return WalkerEnsemble(lattice, np.concatenate(_map_blocks(draw, n, 1)), int(seed))


def gaussian_sampler(mean, cov) -> Callable:
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    L = np.linalg.cholesky(np.atleast_2d(np.asarray(cov, dtype=float)))
    return lambda rng, k: mean + rng.standard_normal((k, len(mean))) @ L.T


def grid_sampler(state: HydroState) -> Callable:
    """Samples from the grid density: pick a grid point, jitter uniformly within its cell."""
    g = state.grid
    p = np.clip(state.rho, 0, None).ravel()
    p = p / p.sum()
    cdf = np.cumsum(p)
    cdf[-1] = 1.0

    def sample(rng, k):
        idx = np.minimum(np.searchsorted(cdf, rng.random(k), side="right"), len(cdf) - 1)
        centres = np.stack([m.ravel()[idx] for m in g.mesh], axis=1)
        return centres + g.h * (rng.random((k, g.sites)) - 0.5)

    return sample


# --- drift providers ------------------------------------------------------

class NoDrift:
    def __call__(self, values, t):
        return np.zeros_like(values), np.ones(len(values), bool)


@dataclass
class GaussianDrift:
    """Closed-form ∂Λ for Ψ ∝ exp(-½ (φ-μ)ᵀA(φ-μ) + i p·(φ-μ)/ħ).

    ``state_at(t)`` returns ``(A, mu, p)``; on a unit cell ∂Φ = p - ħ Im(A)(φ-μ)
    and ½∂log ρ = -Re(A)(φ-μ).
    """

    state_at: Callable
    hbar: float
    eta: float

    def __call__(self, values, t):
        A, mu, p = self.state_at(t)
        A = np.atleast_2d(A)
        d = values - np.asarray(mu, dtype=float)
        dPhi = np.asarray(p, dtype=float) - self.hbar * d @ A.imag.T
        grad = dPhi / self.eta - d @ A.real.T
        return grad, np.ones(len(values), bool)


def stationary_gaussian_drift(A, hbar: float = 1.0, eta: float = 1.0) -> GaussianDrift:
    A = np.atleast_2d(np.asarray(A, dtype=complex))
    zero = np.zeros(A.shape[0])
    return GaussianDrift(lambda t: (A, zero, zero), hbar, eta)


class GridDrift:
    """∂Λ = (∂Φ + ½η ∂ log ρ)/η from grid fields, by cubic-spline interpolation.

    Walkers outside [-L+2h, L-2h] on any site are reported as outside.
    """

    def __init__(self, grid: AmplitudeGrid, s: np.ndarray, Phi: np.ndarray, eta: float):
        if grid.cell != 1.0:
            raise ValueError("walker drift uses the site-basis kernel; grid cell must be 1")
        self.grid = grid
        self.coeffs = [ndimage.spline_filter((grid.d1(Phi, ax) + 0.5 * eta * grid.d1(s, ax)) / eta,
                                             order=3, mode="nearest")
                       for ax in range(grid.sites)]

    @classmethod
    def from_state(cls, state: HydroState, eta: float):
        return cls(state.grid, state.log_rho, state.Phi, eta)

    def __call__(self, values, t=None):
        g = self.grid
        lim = g.L - 2 * g.h
        inside = np.all(np.abs(values) <= lim, axis=1)
        coords = ((np.clip(values, -lim, lim) + g.L) / g.h).T
        grad = np.stack([ndimage.map_coordinates(c, coords, order=3, prefilter=False, mode="nearest")
                         for c in self.coeffs], axis=1)
        return grad, inside


def advance(ensemble: WalkerEnsemble, drift_provider, eta: float, dt: float, steps: int = 1,
            workers: Optional[int] = None) -> WalkerEnsemble:
    """Step every active walker with the max-entropy kernel; frozen walkers stay put.

    ``drift_provider(values, t)`` is queried at the start of each step with
    the entropic time of that instant.
    """
    if ensemble.dt is not None and dt != ensemble.dt:
        raise ValueError("entropic time step must stay constant over a run")
    kernel = TransitionKernel(eta, dt)
    vals = np.array(ensemble.values)
    frozen = np.array(ensemble.frozen)
    V = ensemble.lattice.volume
    for k in range(steps):
        step_no = ensemble.steps + k
        grad, inside = drift_provider(vals, step_no * dt)
        frozen |= ~np.asarray(inside, bool)

        def move(b, lo, hi):
            noise = block_rng(ensemble.seed, _STEP, b, step_no).standard_normal((BLOCK, V))[: hi - lo]
            sub = replace(kernel, drift=DriftPotential(None, lambda phi, g=grad[lo:hi]: g))
            return sample_step(sub, vals[lo:hi], None, noise=noise)

        new = np.concatenate(_map_blocks(move, len(vals), workers))
        vals = np.where(frozen[:, None], vals, new)
    return WalkerEnsemble(ensemble.lattice, vals, ensemble.seed, ensemble.steps + steps, dt, frozen)


# --- statistics -----------------------------------------------------------

@dataclass(frozen=True)
class Histogram:
    edges: tuple
    probs: np.ndarray
    density: np.ndarray
    counted: int


def empirical_density(ensemble: WalkerEnsemble, grid: AmplitudeGrid) -> Histogram:
    """Histogram over cells centred on the grid points; ``probs`` sums to 1."""
    if ensemble.lattice.volume > 2 or ensemble.lattice.volume != grid.sites:
        raise ValueError("histogramming needs V <= 2 matching the grid")
    e = np.concatenate([grid.axis - grid.h / 2, [grid.axis[-1] + grid.h / 2]])
    edges = (e,) * grid.sites
    counts, _ = np.histogramdd(ensemble.values, bins=edges)
    total = counts.sum()
    probs = counts / total if total > 0 else counts
    return Histogram(edges, probs, probs / grid.dv, int(total))


@dataclass(frozen=True)
class FluctuationStats:
    mean: np.ndarray
    mean_se: np.ndarray
    var: np.ndarray
    var_se: np.ndarray
    cov: np.ndarray
    cov_se: np.ndarray


def fluctuation_stats(increments) -> FluctuationStats:
    """Per-site mean and variance of Δw, plus site-pair covariances, with standard errors."""
    x = np.asarray(increments, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    d = x - x.mean(axis=0)
    var = np.mean(d * d, axis=0)
    var_se = np.sqrt(np.var(d * d, axis=0) / n)
    prod = np.einsum("ni,nj->nij", d, d)
    cov = prod.mean(axis=0)
    cov_se = np.sqrt(prod.var(axis=0) / n)
    return FluctuationStats(x.mean(axis=0), np.sqrt(var / n), var, var_se, cov, cov_se)


def ks_distance(samples, axis: np.ndarray, rho: np.ndarray) -> float:
    """sup |F_n - F| for 1D samples against the CDF of a gridded density."""
    x = np.sort(np.asarray(samples, dtype=float))
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (rho[1:] + rho[:-1]) * np.diff(axis))])
    cdf /= cdf[-1]
    F = np.interp(x, axis, cdf)
    n = len(x)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def marginal_ks(values: np.ndarray, grid: AmplitudeGrid, rho: np.ndarray) -> float:
    """Largest KS distance over the single-site marginals on a 1- or 2-site grid."""
    out = 0.0
    for site in range(grid.sites):
        other = tuple(ax for ax in range(grid.sites) if ax != site)
        marg = rho.sum(axis=other) * grid.h ** len(other) if other else rho
        out = max(out, ks_distance(values[:, site], grid.axis, marg))
    return out


@dataclass(frozen=True)
class ConsistencyReport:
    n: int
    T: float
    dt: float
    ks: float
    threshold: float
    frozen: int
    times: np.ndarray
    ks_series: np.ndarray
    values: np.ndarray = field(repr=False)
    rho: np.ndarray = field(repr=False)
    voided: bool = False

    @property
    def passed(self) -> bool:
        return (not self.voided) and self.ks < self.threshold


def fokker_planck_consistency(initial: HydroState, potential: FieldPotential, constants: EdConstants,
                              n: int, T: float, dt: float, seed: int = 0, sampler=None,
                              allowance: float = 0.005, checkpoints: int = 10,
                              workers: Optional[int] = None) -> ConsistencyReport:
    """Walkers against the concurrently evolved grid density.

    The grid (ρ, Φ) is advanced with Hamilton's equations; at each step the
    walker drift is rebuilt from the current grid fields.  The run passes if
    the KS distance at T is below 4/√n plus ``allowance``; more than 1%
    frozen walkers voids it.
    """
    g = initial.grid
    lat = LatticeSpec((g.sites,), 1.0)
    if g.cell != 1.0:
        raise ValueError("the site-basis walker kernel matches the grid only for unit cell")
    ens = init_ensemble(sampler or grid_sampler(initial), n, seed, lat)
    ham = HamiltonIntegrator(g, potential, constants, dt)
    s, Phi = initial.log_rho, initial.Phi
    steps = int(round(T / dt))
    every = max(1, steps // checkpoints)
    times, ks = [0.0], [marginal_ks(ens.values, g, np.exp(s))]
    for k in range(1, steps + 1):
        ens = advance(ens, GridDrift(g, s, Phi, constants.eta), constants.eta, dt, 1, workers)
        s, Phi = ham.step_arrays(s, Phi)
        if k % every == 0 or k == steps:
            times.append(k * dt)
            ks.append(marginal_ks(ens.values, g, np.exp(s)))
    return ConsistencyReport(n, steps * dt, dt, ks[-1], 4 / np.sqrt(n) + allowance,
                             ens.frozen_count, np.array(times), np.array(ks), ens.values, np.exp(s),
                             voided=ens.frozen_count > 0.01 * n)


def subset_ks(values: np.ndarray, grid: AmplitudeGrid, rho: np.ndarray, sizes) -> np.ndarray:
    """Mean KS over disjoint consecutive subsets of each size.

    Walkers are independent and their streams do not depend on the ensemble
    size, so the first k walkers of a run are a valid size-k ensemble.
    """
    out = []
    for k in sizes:
        parts = len(values) // k
        if parts < 1:
            raise ValueError(f"subset size {k} exceeds ensemble size {len(values)}")
        out.append(np.mean([marginal_ks(values[i * k:(i + 1) * k], grid, rho) for i in range(parts)]))
    return np.array(out)
