"""Free scalar field through the Gaussian wave functional.

Units: the potential energy of a configuration is ``c * ½ φᵀKφ`` with
``c = a**d`` and the kinetic term is ``-(ħ²/2c) Σ_x ∂²/∂φ_x²``.  The ground
state is ``Ψ₀ ∝ exp(-½ φᵀAφ)`` with ``A = c G / ħ`` and ``G = K^{1/2}``,
which reduces to ``A = G/ħ`` on unit-spacing lattices.  Equal-time
correlators are ``⟨φ_x φ_y⟩ = (ħ/2c) (G⁻¹)_xy``.

K is circulant on a periodic lattice, so every function of it is applied
through ``numpy.fft``; dense eigendecompositions are kept for cross-checks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analytics import CorrelatorQuery, continuum_correlator
from .lattice import LatticeSpec, ModeTable, kinetic_matrix, mode_table

DENSE_LIMIT = 8192
SCAN_LIMIT = 10**6


class ZeroModeError(ValueError):
    """A massless lattice has a k=0 mode that inverse-dependent quantities cannot handle."""


def _check_mass(modes: ModeTable, exclude_zero_mode: bool):
    if modes.has_zero_mode and not exclude_zero_mode:
        raise ZeroModeError("m=0 has a zero mode; pass exclude_zero_mode=True")


def _inverse_omega(modes: ModeTable, exclude_zero_mode: bool = False) -> np.ndarray:
    _check_mass(modes, exclude_zero_mode)
    inv = np.zeros_like(modes.omega)
    nz = modes.omega > 0
    inv[nz] = 1.0 / modes.omega[nz]
    return inv


def circulant_kernel(lattice: LatticeSpec, spectrum: np.ndarray) -> np.ndarray:
    """First row ``f(x - 0)`` of the circulant matrix with eigenvalues ``spectrum``."""
    out = np.fft.ifftn(np.reshape(spectrum, lattice.dims))
    return out.real.ravel()


def circulant_matrix(lattice: LatticeSpec, row: np.ndarray) -> np.ndarray:
    """Dense ``M[x, y] = row[x - y]`` with periodic wrap along every axis."""
    V = lattice.volume
    if V > DENSE_LIMIT:
        raise MemoryError(f"dense {V}x{V} matrix refused")
    coords = np.indices(lattice.dims).reshape(lattice.ndim, -1)
    idx = np.zeros((V, V), dtype=np.int64)
    stride = 1
    for axis in reversed(range(lattice.ndim)):
        n = lattice.dims[axis]
        c = coords[axis]
        idx += ((c[:, None] - c[None, :]) % n) * stride
        stride *= n
    return np.asarray(row)[idx]


def ground_kernel(lattice: LatticeSpec, m: float, method: str = "spectral",
                  exclude_zero_mode: bool = False) -> np.ndarray:
    """G = K^{1/2} as a dense symmetric matrix.

    ``method="spectral"`` uses the Fourier eigenbasis; ``"dense"`` takes the
    square root through ``eigh`` and is limited to small lattices.
    """
    modes = mode_table(lattice, m)
    _check_mass(modes, exclude_zero_mode)
    if method == "spectral":
        return circulant_matrix(lattice, circulant_kernel(lattice, modes.omega))
    if method == "dense":
        if lattice.volume > 256:
            raise ValueError("dense square root is a cross-check for V <= 256")
        w, U = np.linalg.eigh(kinetic_matrix(lattice, m))
        G = (U * np.sqrt(np.clip(w, 0.0, None))) @ U.T
        return 0.5 * (G + G.T)
    raise ValueError(f"unknown method {method!r}")


def apply_kinetic_power(lattice: LatticeSpec, m: float, v: np.ndarray, power: float,
                        exclude_zero_mode: bool = False) -> np.ndarray:
    """K^power applied to the last axis of ``v`` (site vectors), by FFT."""
    modes = mode_table(lattice, m)
    if power < 0:
        _check_mass(modes, exclude_zero_mode)
    w2 = modes.omega_grid() ** 2
    spec = np.zeros_like(w2)
    nz = w2 > 0
    spec[nz] = w2[nz] ** power
    if power >= 0 and not np.all(nz):
        spec[~nz] = 0.0 ** power if power > 0 else 1.0
    v = np.asarray(v, dtype=float)
    lead = v.shape[:-1]
    axes = tuple(range(-lattice.ndim, 0))
    f = np.fft.fftn(v.reshape(lead + lattice.dims), axes=axes)
    return np.fft.ifftn(f * spec, axes=axes).real.reshape(v.shape)


def ground_energy(modes: ModeTable, hbar: float = 1.0) -> float:
    """E₀ = ½ ħ Σ_k ω_k."""
    return float(0.5 * hbar * np.sum(modes.omega))


def ground_energy_trace(lattice: LatticeSpec, m: float, hbar: float = 1.0) -> float:
    """E₀ = ½ ħ tr G from the site-basis kernel: V times its diagonal entry."""
    g = circulant_kernel(lattice, mode_table(lattice, m).omega)
    return float(0.5 * hbar * lattice.volume * g[0])


def correlation_function(lattice: LatticeSpec, m: float, hbar: float = 1.0,
                         exclude_zero_mode: bool = False) -> np.ndarray:
    """⟨φ_0 φ_x⟩ for every site x (row-major), i.e. the first row of (ħ/2c) G⁻¹."""
    inv = _inverse_omega(mode_table(lattice, m), exclude_zero_mode)
    return hbar / (2.0 * lattice.cell) * circulant_kernel(lattice, inv)


def vacuum_variance(lattice: LatticeSpec, m: float, hbar: float = 1.0,
                    exclude_zero_mode: bool = False) -> float:
    """⟨φ_x²⟩ = (ħ/(V a^d)) Σ_k 1/(2ω_k)."""
    inv = _inverse_omega(mode_table(lattice, m), exclude_zero_mode)
    return float(hbar * np.sum(0.5 * inv) / (lattice.volume * lattice.cell))


def equal_time_correlator(lattice: LatticeSpec, m: float, x, y, hbar: float = 1.0,
                          exclude_zero_mode: bool = False) -> float:
    """⟨φ_x φ_y⟩ for sites given as integer coordinate tuples or flat indices."""
    def coords(s):
        if np.ndim(s) == 0:
            return np.array(lattice.site_coords(int(s)))
        return np.asarray(s, dtype=int)

    d = (coords(x) - coords(y)) % np.array(lattice.dims)
    row = correlation_function(lattice, m, hbar, exclude_zero_mode)
    return float(row[np.ravel_multi_index(tuple(d), lattice.dims)])


def shell_correlator(lattice: LatticeSpec, m: float, r: float, halfwidth: float | None = None,
                     hbar: float = 1.0):
    """Lattice and continuum correlators averaged over the shell ||d| - r| <= halfwidth.

    Averaging over all lattice displacements of nearly equal length removes
    most of the cubic anisotropy of the lattice propagator.  Returns
    ``(lattice_mean, continuum_mean, count)``.
    """
    if halfwidth is None:
        halfwidth = 0.4 * lattice.spacing
    dist = lattice.displacement_lengths()
    sel = (np.abs(dist - r) <= halfwidth) & (dist > 0)
    if not np.any(sel):
        raise ValueError(f"no lattice displacement within {halfwidth} of r={r}")
    row = correlation_function(lattice, m, hbar)
    cont = np.array([continuum_correlator(CorrelatorQuery(m, d)) for d in dist[sel]])
    return float(row[sel].mean()), float(hbar * cont.mean()), int(sel.sum())


# --- time evolution -------------------------------------------------------

@dataclass(frozen=True)
class GaussianState:
    """Ψ = exp(iθ) det(Re A / π)^{1/4}-normalised exp(-½ φᵀAφ).

    ``phase`` is the accumulated global phase θ; ``cell`` is the lattice
    measure factor a^d that enters the Schrödinger operator.
    """

    A: np.ndarray
    phase: float = 0.0
    cell: float = 1.0

    def __post_init__(self):
        A = np.array(self.A, dtype=complex)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        if not np.allclose(A, A.T, rtol=1e-12, atol=1e-12 * np.abs(A).max()):
            raise ValueError("A must be complex symmetric")
        A = 0.5 * (A + A.T)
        if np.linalg.eigvalsh(A.real).min() <= 0:
            raise ValueError("Re(A) must be positive definite")
        A.setflags(write=False)
        object.__setattr__(self, "A", A)

    @property
    def covariance(self) -> np.ndarray:
        """⟨φφᵀ⟩ = ½ (Re A)⁻¹."""
        return 0.5 * np.linalg.inv(self.A.real)

    def energy(self, K: np.ndarray, hbar: float = 1.0) -> float:
        """⟨Ĥ⟩ = (ħ²/2c) Re tr(Ā A Σ) + (c/2) tr(K Σ)."""
        S = self.covariance
        kin = hbar**2 / (2 * self.cell) * np.real(np.trace(self.A.conj() @ self.A @ S))
        return float(kin + 0.5 * self.cell * np.trace(K @ S))

    def density(self, *phis) -> np.ndarray:
        """|Ψ|² evaluated on broadcast site-amplitude arrays, one per site."""
        Ar = self.A.real
        V = Ar.shape[0]
        if len(phis) != V:
            raise ValueError(f"expected {V} amplitude arrays")
        quad = sum(Ar[i, j] * phis[i] * phis[j] for i in range(V) for j in range(V))
        return np.sqrt(np.linalg.det(Ar / np.pi)) * np.exp(-quad)


def ground_gaussian(lattice: LatticeSpec, m: float, hbar: float = 1.0) -> GaussianState:
    G = ground_kernel(lattice, m)
    return GaussianState(lattice.cell * G / hbar, 0.0, lattice.cell)


def riccati_rhs(A: np.ndarray, K: np.ndarray, hbar: float = 1.0, cell: float = 1.0) -> np.ndarray:
    """dA/dt from iħ dA/dt = (ħ²/c) A² - c K."""
    return -1j / hbar * (hbar**2 / cell * A @ A - cell * K)


class PositivityLost(ArithmeticError):
    def __init__(self, message, suggested_dt=None):
        super().__init__(message)
        self.suggested_dt = suggested_dt


def evolve_gaussian(state: GaussianState, K: np.ndarray, hbar: float = 1.0, dt: float = 1e-3,
                    steps: int = 1, record: bool = False):
    """Schrödinger evolution of a Gaussian state in the potential c·½φᵀKφ.

    The Riccati flow is linearised by writing A = -(i/ħ) P Q⁻¹ with
    dQ/dt = P/c, dP/dt = -cKQ, and (Q, P) are propagated exactly in the
    normal modes of K, so the step has no truncation error.  The global phase
    follows from Ψ ∝ det(Q)^{-1/2}.

    Returns the final state, or ``(states, times)`` when ``record`` is set.
    """
    K = np.asarray(K, dtype=float)
    c = state.cell
    w2, U = np.linalg.eigh(0.5 * (K + K.T))
    if w2.min() < -1e-12 * max(1.0, abs(w2).max()):
        raise ValueError("K must be positive semidefinite")
    w = np.sqrt(np.clip(w2, 0.0, None))
    # per-mode propagator over one dt; sin(wt)/w -> t for zero modes
    cs = np.cos(w * dt)
    sn_w = np.where(w > 0, np.sin(w * dt) / np.where(w > 0, w, 1.0), dt)
    w_sn = w * np.sin(w * dt)

    Q = U.T.astype(complex)  # mode-basis representation of Q = I
    P = U.T @ (1j * hbar * state.A)
    phase = state.phase
    logdet_prev = np.linalg.slogdet(Q)[0]
    states, times = [state], [0.0]
    for n in range(1, steps + 1):
        Q, P = cs[:, None] * Q + sn_w[:, None] * P / c, -c * w_sn[:, None] * Q + cs[:, None] * P
        sign, _ = np.linalg.slogdet(Q)
        phase -= 0.5 * np.angle(sign / logdet_prev)
        logdet_prev = sign
        A = -1j / hbar * U @ np.linalg.solve(Q.T, P.T).T @ U.T
        A = 0.5 * (A + A.T)
        low = np.linalg.eigvalsh(A.real).min()
        if not low > 0:
            raise PositivityLost(f"Re(A) lost positivity at step {n}", suggested_dt=dt / 2)
        if record or n == steps:
            st = GaussianState(A, float(phase), c)
            if record:
                states.append(st)
                times.append(n * dt)
    if record:
        return states, np.array(times)
    return st if steps > 0 else state


# --- divergence diagnostics ----------------------------------------------

@dataclass(frozen=True)
class ScanRow:
    spacing: float
    volume: int
    E0: float
    E0_density: float
    var_phi: float


@dataclass(frozen=True)
class PowerFit:
    slope: float
    intercept: float
    r2: float


def power_fit(x, y) -> PowerFit:
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    tot = np.sum((ly - ly.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / tot if tot > 0 else 1.0
    return PowerFit(float(slope), float(intercept), float(r2))


@dataclass(frozen=True)
class DivergenceScan:
    rows: list
    energy_fit: PowerFit
    variance_fit: PowerFit


def divergence_scan(physical_size: float, m: float, spacings, hbar: float = 1.0,
                    max_volume: int = SCAN_LIMIT) -> DivergenceScan:
    """E₀ density and ⟨φ²⟩ on 3D lattices of fixed size as the spacing shrinks."""
    rows = []
    for a in spacings:
        n = int(round(physical_size / a))
        if n < 1 or abs(n * a - physical_size) > 1e-9 * physical_size:
            raise ValueError(f"spacing {a} does not divide size {physical_size}")
        V = n**3
        if V > max_volume:
            raise MemoryError(f"lattice {n}^3 = {V} sites exceeds the guard of {max_volume}; "
                              "use a coarser spacing or a smaller physical size")
        lat = LatticeSpec((n, n, n), float(a))
        modes = mode_table(lat, m)
        E0 = ground_energy(modes, hbar)
        rows.append(ScanRow(float(a), V, E0, E0 / lat.physical_volume,
                            vacuum_variance(lat, m, hbar)))
    a = [r.spacing for r in rows]
    return DivergenceScan(rows, power_fit(a, [r.E0_density for r in rows]),
                          power_fit(a, [r.var_phi for r in rows]))
