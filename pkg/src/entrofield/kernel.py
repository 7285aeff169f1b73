"""The maximum-entropy transition kernel P[φ'|φ] for one short step.

Under a uniform prior, fixed ⟨Δφ_x²⟩ per site and a fixed expected
displacement along δΛ/δφ, the entropy maximiser is the Gaussian

    P[φ'|φ] ∝ exp(-α/2 Σ_x (Δφ_x - ∂_xΛ/α)²),     α = 1/(η Δt).

The multiplier for the displacement constraint is absorbed into Λ and the
per-site constraint constant κ is carried only through α.  Site-basis
(Kronecker) conventions are used throughout this module.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .lattice import FieldConfig


@dataclass(frozen=True)
class DriftPotential:
    """A drift potential Λ[φ] supplied as value, gradient and (optionally) Hessian.

    All callables take arrays whose last axis runs over sites; the kernel
    never differentiates them numerically.
    """

    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Optional[Callable[[np.ndarray], np.ndarray]] = None


def linear_drift(c) -> DriftPotential:
    """Λ[φ] = c·φ (constant gradient)."""
    c = np.asarray(c, dtype=float)
    return DriftPotential(
        value=lambda phi: np.asarray(phi) @ np.broadcast_to(c, np.shape(phi)[-1:]),
        gradient=lambda phi: np.broadcast_to(c, np.shape(phi)).astype(float),
        hessian=lambda phi: np.zeros((np.shape(phi)[-1],) * 2),
    )


def quadratic_drift(matrix, center=0.0) -> DriftPotential:
    """Λ[φ] = -½ (φ-c)ᵀ M (φ-c); gradient -M(φ-c)."""
    M = np.atleast_2d(np.asarray(matrix, dtype=float))

    def value(phi):
        d = np.asarray(phi) - center
        return -0.5 * np.einsum("...i,ij,...j->...", d, M, d)

    return DriftPotential(
        value=value,
        gradient=lambda phi: -(np.asarray(phi) - center) @ M.T,
        hessian=lambda phi: -M,
    )


@dataclass(frozen=True)
class TransitionKernel:
    eta: float
    dt: float
    drift: Optional[DriftPotential] = None

    def __post_init__(self):
        for name in ("eta", "dt"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v}")

    @property
    def alpha(self) -> float:
        return 1.0 / (self.eta * self.dt)

    @property
    def step_variance(self) -> float:
        return self.eta * self.dt

    def drift_gradient(self, phi: np.ndarray) -> np.ndarray:
        if self.drift is None:
            return np.zeros_like(phi, dtype=float)
        return np.asarray(self.drift.gradient(phi), dtype=float)


FieldLike = Union[FieldConfig, np.ndarray, Sequence[float]]


def _values(phi: FieldLike) -> np.ndarray:
    if isinstance(phi, FieldConfig):
        return phi.values
    arr = np.asarray(phi, dtype=float)
    if arr.ndim == 0:
        arr = arr[None]
    return arr


def log_density(kernel: TransitionKernel, phi: FieldLike, phi_new: FieldLike):
    """log P[φ'|φ], normalised in closed form over φ' ∈ R^V."""
    x, y = _values(phi), _values(phi_new)
    if x.shape[-1] != y.shape[-1]:
        raise ValueError("φ and φ' have different numbers of sites")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("log_density needs finite configurations")
    alpha = kernel.alpha
    z = y - x - kernel.drift_gradient(x) / alpha
    V = x.shape[-1]
    return -0.5 * alpha * np.sum(z * z, axis=-1) + 0.5 * V * np.log(alpha / (2 * np.pi))


def moments(kernel: TransitionKernel, phi: FieldLike):
    """Closed-form step moments: (⟨Δφ⟩, covariance of Δφ) in the site basis."""
    x = _values(phi)
    shift = kernel.drift_gradient(x) / kernel.alpha
    cov = np.eye(x.shape[-1]) / kernel.alpha
    return shift, cov


def sample_step(kernel: TransitionKernel, phi: FieldLike, rng: np.random.Generator, noise=None):
    """Draw φ' = φ + ∂Λ/α + Δw with Δw ~ N(0, ηΔt) i.i.d. per site.

    ``phi`` may be a stack of configurations (last axis = sites).  Standard
    normal ``noise`` of matching shape may be passed instead of ``rng``.
    """
    x = _values(phi)
    if noise is None:
        noise = rng.standard_normal(x.shape)
    out = x + kernel.drift_gradient(x) / kernel.alpha + np.sqrt(kernel.step_variance) * noise
    if isinstance(phi, FieldConfig):
        return FieldConfig(phi.lattice, out)
    return out


def fisher_metric(
    kernel: TransitionKernel, phi: FieldLike, C: float = 1.0, nodes: int = 12, check: bool = True
) -> np.ndarray:
    """Information metric γ = C E[∂log P ∂log Pᵀ] by Gauss-Hermite quadrature over φ'.

    The score involves the Hessian of Λ, which must be supplied when a drift
    is present.  With ``check`` the quadrature is repeated with twice the
    nodes and must agree to 1e-10 (relative).
    """
    x = _values(phi)
    if x.ndim != 1:
        raise ValueError("fisher_metric takes a single configuration")
    V = x.size
    if V > 4:
        raise ValueError("tensor-product quadrature is limited to V <= 4 sites")
    alpha = kernel.alpha
    if kernel.drift is None:
        jac = np.eye(V)
    else:
        if kernel.drift.hessian is None:
            raise ValueError("fisher_metric needs the Hessian of the drift potential")
        jac = np.eye(V) + np.asarray(kernel.drift.hessian(x), dtype=float).reshape(V, V) / alpha
    mean = x + kernel.drift_gradient(x) / alpha

    def integrate(n):
        t, w = np.polynomial.hermite.hermgauss(n)
        grids = np.meshgrid(*([t] * V), indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=-1)
        wts = np.prod(np.meshgrid(*([w] * V), indexing="ij"), axis=0).ravel() / np.pi ** (V / 2)
        phi_new = mean + np.sqrt(2.0 / alpha) * pts
        # d/dφ log P = α Jᵀ (φ' - φ - ∂Λ/α)
        score = alpha * (phi_new - mean) @ jac
        return C * np.einsum("n,ni,nj->ij", wts, score, score)

    gamma = integrate(nodes)
    if check:
        again = integrate(2 * nodes)
        scale = max(np.abs(again).max(), np.finfo(float).tiny)
        if np.abs(again - gamma).max() / scale > 1e-10:
            raise ArithmeticError("Gauss-Hermite Fisher metric did not converge")
        gamma = again
    return gamma


class InfeasiblePerturbation(ValueError):
    """A perturbed distribution would go negative after constraint matching."""


@dataclass(frozen=True)
class MaxentGrid:
    """One-site grid of step values Δφ with the discretised Gaussian kernel."""

    x: np.ndarray
    h: float
    p: np.ndarray
    basis: np.ndarray  # p-orthonormal basis of span{1, Δφ, Δφ²}


def maxent_grid(alpha: float, drift_gradient_value: float, points: int = 801, width: float = 6.0):
    if points < 801 or points % 2 == 0:
        raise ValueError("maxent grid needs an odd number of points >= 801")
    sigma = 1.0 / np.sqrt(alpha)
    mean = drift_gradient_value / alpha
    half = abs(mean) + width * sigma
    x = np.linspace(-half, half, points)
    h = x[1] - x[0]
    logp = -0.5 * alpha * (x - mean) ** 2
    p = np.exp(logp - logp.max())
    p /= p.sum() * h
    # p-weighted Gram-Schmidt of the constraint functions
    raw = np.stack([np.ones_like(x), x / half, (x / half) ** 2])
    basis = []
    for f in raw:
        for b in basis:
            f = f - h * np.sum(p * f * b) * b
        basis.append(f / np.sqrt(h * np.sum(p * f * f)))
    return MaxentGrid(x, h, p, np.array(basis))


def project_perturbation(grid: MaxentGrid, delta) -> np.ndarray:
    """Remove the parts of a relative perturbation that would change normalisation,
    ⟨Δφ²⟩ or ⟨Δφ⟩·∂Λ."""
    d = np.asarray(delta(grid.x) if callable(delta) else delta, dtype=float)
    if d.shape != grid.x.shape:
        raise ValueError(f"perturbation has shape {d.shape}, grid has {grid.x.shape}")
    for b in grid.basis:
        d = d - grid.h * np.sum(grid.p * d * b) * b
    return d


def discrete_entropy(p: np.ndarray, h: float) -> float:
    """-Σ h p log p (uniform prior Q = 1)."""
    nz = p > 0
    return float(-h * np.sum(p[nz] * np.log(p[nz])))


def verify_maxent(
    alpha: float,
    drift_gradient_value: float,
    perturbations,
    points: int = 801,
    width: float = 6.0,
) -> np.ndarray:
    """Entropy gaps S[Gaussian] - S[perturbed] for constraint-respecting perturbations.

    Each perturbation is a relative change δ (array on the grid, or a
    callable of Δφ); it is projected so that normalisation and both moment
    constraints are preserved exactly, then applied as p(1 + δ).
    """
    grid = maxent_grid(alpha, drift_gradient_value, points, width)
    s0 = discrete_entropy(grid.p, grid.h)
    gaps = []
    for i, delta in enumerate(perturbations):
        d = project_perturbation(grid, delta)
        q = grid.p * (1.0 + d)
        if np.any(q < 0):
            raise InfeasiblePerturbation(
                f"perturbation {i} drives the density negative; reduce its amplitude"
            )
        gaps.append(s0 - discrete_entropy(q, grid.h))
    return np.array(gaps)


def random_perturbations(
    n: int, alpha: float, drift_gradient_value: float, rng: np.random.Generator,
    amplitude: float = 0.5, points: int = 801, width: float = 6.0, modes: int = 6,
):
    """Smooth random constraint-respecting relative perturbations with max |δ| <= amplitude."""
    grid = maxent_grid(alpha, drift_gradient_value, points, width)
    u = grid.x / grid.x[-1]
    out = []
    for _ in range(n):
        coeff = rng.standard_normal((modes, 2))
        k = np.arange(1, modes + 1)[:, None]
        shape = coeff[:, :1] * np.cos(np.pi * k * u) + coeff[:, 1:] * np.sin(np.pi * k * u)
        d = project_perturbation(grid, shape.sum(axis=0))
        out.append(amplitude * rng.uniform(0.05, 1.0) * d / np.abs(d).max())
    return out


def gap_scaling_exponent(
    alpha: float, drift_gradient_value: float, shape, amplitudes, points: int = 801
) -> float:
    """Log-log slope of the entropy gap against perturbation amplitude."""
    grid = maxent_grid(alpha, drift_gradient_value, points)
    d = project_perturbation(grid, shape)
    d = d / np.abs(d).max()
    amps = np.asarray(amplitudes, dtype=float)
    gaps = verify_maxent(alpha, drift_gradient_value, [a * d for a in amps], points)
    slope, _ = np.polyfit(np.log(amps), np.log(gaps), 1)
    return float(slope)
