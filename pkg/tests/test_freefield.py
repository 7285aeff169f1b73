import numpy as np
import pytest

from entrofield.freefield import (GaussianState, PositivityLost, ZeroModeError, apply_kinetic_power,
                                  circulant_kernel, circulant_matrix, correlation_function,
                                  divergence_scan, equal_time_correlator, evolve_gaussian,
                                  ground_energy, ground_energy_trace, ground_gaussian, ground_kernel,
                                  power_fit, riccati_rhs, shell_correlator, vacuum_variance)
from entrofield.grid import AmplitudeGrid, CrankNicolson, FieldPotential, WaveState
from entrofield.lattice import PotentialSpec, build_lattice, kinetic_matrix, mode_table


def translation(lattice, shift):
    """Permutation matrix of a periodic lattice translation by ``shift`` sites."""
    coords = np.indices(lattice.dims).reshape(lattice.ndim, -1)
    moved = (coords + np.reshape(shift, (-1, 1))) % np.reshape(lattice.dims, (-1, 1))
    target = np.ravel_multi_index(tuple(moved), lattice.dims)
    T = np.zeros((lattice.volume, lattice.volume))
    T[target, np.arange(lattice.volume)] = 1.0
    return T


def test_ground_kernel_scalar():
    assert ground_kernel(build_lattice([1]), 2.0) == pytest.approx(np.array([[2.0]]))


def test_ground_kernel_two_sites():
    G = ground_kernel(build_lattice([2]), 1.0)
    assert np.linalg.eigvalsh(G) == pytest.approx([1.0, np.sqrt(5.0)], rel=1e-14)


@pytest.mark.parametrize("dims,a,m", [([5], 1.0, 0.7), ([4, 6], 0.5, 1.3), ([4, 4, 4], 0.25, 2.0),
                                      ([3, 5, 7], 1.0, 0.2)])
def test_spectral_and_dense_kernels_agree(dims, a, m):
    lat = build_lattice(dims, a)
    Gs = ground_kernel(lat, m)
    Gd = ground_kernel(lat, m, method="dense")
    assert np.linalg.norm(Gs - Gd) / np.linalg.norm(Gd) < 1e-12


@pytest.mark.parametrize("dims", [[7], [6, 6], [8, 8, 8], [16, 16, 16]])
def test_kernel_squares_to_kinetic_matrix(dims):
    lat = build_lattice(dims, 0.5)
    G = ground_kernel(lat, 0.8)
    K = kinetic_matrix(lat, 0.8)
    assert np.allclose(G, G.T, atol=0)
    assert np.linalg.norm(G @ G - K) / np.linalg.norm(K) < 1e-10
    # (ħ/2c) G⁻¹ against the correlator row
    row = correlation_function(lat, 0.8)
    C = circulant_matrix(lat, row)
    assert np.linalg.norm(C @ G * 2 * lat.cell - np.eye(lat.volume)) / np.sqrt(lat.volume) < 1e-10


def test_kernel_positive_definite():
    G = ground_kernel(build_lattice([6, 6], 1.0), 0.3)
    assert np.linalg.eigvalsh(G).min() > 0


def test_kernel_commutes_with_translations():
    lat = build_lattice([4, 5, 3], 1.0)
    G = ground_kernel(lat, 1.1)
    for shift in ([1, 0, 0], [0, 2, 1], [3, 4, 2]):
        T = translation(lat, shift)
        assert np.allclose(T @ G, G @ T, atol=1e-13)


def test_kinetic_power_matches_dense(rng):
    lat = build_lattice([4, 6], 1.0)
    v = rng.normal(size=(3, lat.volume))
    K = kinetic_matrix(lat, 0.9)
    half = apply_kinetic_power(lat, 0.9, v, 0.5)
    assert np.allclose(apply_kinetic_power(lat, 0.9, half, 0.5), v @ K.T, atol=1e-12)
    assert np.allclose(apply_kinetic_power(lat, 0.9, v, -1.0), np.linalg.solve(K, v.T).T, atol=1e-12)


def test_zero_mode_requires_flag():
    lat = build_lattice([8], 1.0)
    with pytest.raises(ZeroModeError):
        ground_kernel(lat, 0.0)
    with pytest.raises(ZeroModeError):
        vacuum_variance(lat, 0.0)
    with pytest.raises(ZeroModeError):
        correlation_function(lat, 0.0)
    var = vacuum_variance(lat, 0.0, exclude_zero_mode=True)
    w = mode_table(lat, 0.0).omega[1:]
    assert var == pytest.approx(np.sum(0.5 / w) / 8, rel=1e-14)
    G = ground_kernel(lat, 0.0, exclude_zero_mode=True)
    assert np.linalg.matrix_rank(G, tol=1e-10) == 7


def test_ground_energy_examples():
    assert ground_energy(mode_table(build_lattice([1]), 1.0)) == pytest.approx(0.5)
    assert ground_energy(mode_table(build_lattice([2]), 1.0)) == pytest.approx(0.5 * (1 + np.sqrt(5)), rel=1e-14)
    assert ground_energy(mode_table(build_lattice([2]), 1.0), hbar=0.3) == pytest.approx(0.15 * (1 + np.sqrt(5)))


@pytest.mark.parametrize("dims,a", [([5], 1.0), ([6, 4], 0.5), ([8, 8, 8], 0.25)])
def test_ground_energy_two_paths(dims, a):
    lat = build_lattice(dims, a)
    E_modes = ground_energy(mode_table(lat, 1.2))
    assert ground_energy_trace(lat, 1.2) == pytest.approx(E_modes, rel=1e-10)
    # ½ tr G from the dense kernel
    if lat.volume <= 256:
        assert 0.5 * np.trace(ground_kernel(lat, 1.2, method="dense")) == pytest.approx(E_modes, rel=1e-10)


def test_vacuum_variance_examples():
    assert vacuum_variance(build_lattice([1]), 1.0) == pytest.approx(0.5)
    assert vacuum_variance(build_lattice([2]), 1.0) == pytest.approx(0.25 * (1 + 1 / np.sqrt(5)), rel=1e-14)
    assert vacuum_variance(build_lattice([2]), 1.0) == pytest.approx(0.3618, abs=1e-4)


@pytest.mark.parametrize("dims,a", [([6], 1.0), ([4, 4], 0.5), ([6, 6, 6], 0.5), ([16, 16, 16], 0.25)])
def test_vacuum_variance_two_paths(dims, a):
    lat = build_lattice(dims, a)
    var = vacuum_variance(lat, 0.7)
    G = ground_kernel(lat, 0.7)
    # diagonal of (ħ/2c) G⁻¹
    diag = np.diag(np.linalg.inv(G)) / (2 * lat.cell)
    assert np.allclose(diag, var, rtol=1e-10)
    assert correlation_function(lat, 0.7)[0] == pytest.approx(var, rel=1e-10)


def test_variance_grows_as_spacing_shrinks():
    vals = [vacuum_variance(build_lattice([int(4 / a)] * 3, a), 1.0) for a in (1.0, 0.5, 0.25, 0.125)]
    assert np.all(np.diff(vals) > 0)


def test_variance_hbar_scaling():
    lat = build_lattice([4, 4, 4], 0.5)
    assert vacuum_variance(lat, 1.0, hbar=2.5) == pytest.approx(2.5 * vacuum_variance(lat, 1.0), rel=1e-14)


def test_correlator_symmetry_and_coincidence():
    lat = build_lattice([5, 4, 6], 0.5)
    assert equal_time_correlator(lat, 1.0, (1, 2, 3), (1, 2, 3)) == pytest.approx(vacuum_variance(lat, 1.0), rel=1e-12)
    for x, y in [((0, 0, 0), (2, 1, 4)), ((4, 3, 5), (1, 0, 2)), (7, 31)]:
        assert equal_time_correlator(lat, 1.0, x, y) == pytest.approx(equal_time_correlator(lat, 1.0, y, x), rel=1e-12)


def test_correlator_positive_and_decreasing():
    for a, m in [(1.0, 0.5), (0.5, 1.0), (0.25, 2.0)]:
        lat = build_lattice([16, 16, 16], a)
        vals = [equal_time_correlator(lat, m, (0, 0, 0), (k, 0, 0)) for k in range(9)]
        assert np.all(np.array(vals) > 0)
        assert np.all(np.diff(vals) < 0)


def test_correlator_invariant_under_translation_and_permutation():
    lat = build_lattice([6, 6, 6], 0.5)
    base = equal_time_correlator(lat, 1.0, (0, 0, 0), (1, 2, 3))
    assert equal_time_correlator(lat, 1.0, (2, 3, 1), (3, 5, 4)) == pytest.approx(base, rel=1e-12)
    assert equal_time_correlator(lat, 1.0, (0, 0, 0), (3, 1, 2)) == pytest.approx(base, rel=1e-12)
    assert equal_time_correlator(lat, 1.0, (0, 0, 0), (5, 4, 3)) == pytest.approx(base, rel=1e-12)


def test_shell_correlator_near_continuum():
    lat = build_lattice([32, 32, 32], 0.25)
    for r in (1.0, 2.0, 3.0):
        cubic, cont, count = shell_correlator(lat, 1.0, r)
        assert count > 6
        assert abs(cubic / cont - 1) < 0.05


def test_circulant_kernel_inverts_spectrum(rng):
    lat = build_lattice([3, 4], 1.0)
    spec = mode_table(lat, 1.0).omega
    M = circulant_matrix(lat, circulant_kernel(lat, spec))
    assert np.sort(np.linalg.eigvalsh(M)) == pytest.approx(np.sort(spec), rel=1e-12)


# --- Gaussian evolution ---------------------------------------------------

def test_riccati_ground_state_fixed_point():
    for dims, a in [([1], 1.0), ([4, 4], 1.0), ([3, 3, 3], 0.5)]:
        lat = build_lattice(dims, a)
        st = ground_gaussian(lat, 1.3, hbar=0.7)
        K = kinetic_matrix(lat, 1.3)
        assert np.abs(riccati_rhs(st.A, K, 0.7, lat.cell)).max() < 1e-12 * np.abs(K).max()
        out = evolve_gaussian(st, K, 0.7, 0.01, 100)
        assert np.abs(out.A - st.A).max() < 1e-10


def test_ground_state_phase_and_energy():
    lat = build_lattice([2])
    st = ground_gaussian(lat, 1.0)
    K = kinetic_matrix(lat, 1.0)
    E0 = ground_energy(mode_table(lat, 1.0))
    assert st.energy(K) == pytest.approx(E0, rel=1e-12)
    out = evolve_gaussian(st, K, 1.0, 1e-3, 1000)
    assert out.phase == pytest.approx(-E0 * 1.0, rel=1e-9)


def test_squeezed_single_mode_oscillates_at_twice_omega():
    lat = build_lattice([1])
    w = 1.7
    K = np.array([[w * w]])
    a0 = 3.0 * w  # narrower than the ground state
    states, times = evolve_gaussian(GaussianState(np.array([[a0]])), K, 1.0, 0.01, 400, record=True)
    var = np.array([s.covariance[0, 0] for s in states])
    exact = np.cos(w * times) ** 2 / (2 * a0) + a0 * np.sin(w * times) ** 2 / (2 * w * w)
    assert np.abs(var - exact).max() < 1e-12
    # period of ⟨φ²⟩ is π/ω
    k = int(round(np.pi / w / 0.01))
    assert var[k] == pytest.approx(var[0], rel=1e-3)


def test_energy_conserved_over_unit_time(rng):
    lat = build_lattice([3, 3], 1.0)
    K = kinetic_matrix(lat, 0.8)
    B = rng.normal(size=(9, 9))
    A0 = ground_gaussian(lat, 0.8).A + 0.3 * (B @ B.T) / 9 + 0.2j * (B + B.T) / 9
    states, _ = evolve_gaussian(GaussianState(A0), K, 1.0, 1e-2, 100, record=True)
    E = np.array([s.energy(K) for s in states])
    assert np.abs(E - E[0]).max() / E[0] < 1e-8
    assert all(np.linalg.eigvalsh(s.A.real).min() > 0 for s in states)


def test_evolution_commutes_with_translations():
    lat = build_lattice([6], 1.0)
    K = kinetic_matrix(lat, 1.0)
    A0 = 2.0 * ground_gaussian(lat, 1.0).A
    out = evolve_gaussian(GaussianState(A0), K, 1.0, 0.01, 150).A
    T = translation(lat, [1])
    assert np.abs(T @ out @ T.T - out).max() < 1e-12


def test_gaussian_state_validation():
    with pytest.raises(ValueError):
        GaussianState(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        GaussianState(np.array([[-1.0]]))
    with pytest.raises(ValueError):
        evolve_gaussian(GaussianState(np.eye(2)), -np.eye(2))


def test_positivity_lost_carries_suggestion():
    err = PositivityLost("x", suggested_dt=0.05)
    assert err.suggested_dt == 0.05 and isinstance(err, ArithmeticError)


def wave_covariance(grid, psi):
    p = np.abs(psi) ** 2
    p = p / (p.sum() * grid.dv)
    mesh = grid.mesh
    mu = [np.sum(x * p) * grid.dv for x in mesh]
    return np.array([[np.sum((xi - mi) * (xj - mj) * p) * grid.dv
                      for xj, mj in zip(mesh, mu)] for xi, mi in zip(mesh, mu)])


@pytest.mark.parametrize("dims,m,points", [([1], 1.0, 201), ([2], 1.0, 201)])
def test_gaussian_evolution_matches_grid_schrodinger(dims, m, points):
    lat = build_lattice(dims, 1.0)
    K = kinetic_matrix(lat, m)
    A0 = 2.5 * ground_gaussian(lat, m).A + 0.3 * (np.ones_like(K) - np.eye(len(K)))
    grid = AmplitudeGrid.for_lattice(lat, 6.0, points)
    quad = sum(A0[i, j] * grid.mesh[i] * grid.mesh[j] for i in range(len(K)) for j in range(len(K)))
    psi = np.exp(-0.5 * quad) + 0j
    psi /= np.sqrt(np.sum(np.abs(psi) ** 2) * grid.dv)
    dt, steps, every = 1e-3, 1000, 100
    cn = CrankNicolson(grid, FieldPotential(lat, PotentialSpec(m)), 1.0, dt)
    states, _ = evolve_gaussian(GaussianState(A0), K, 1.0, dt, steps, record=True)
    worst = 0.0
    for n in range(1, steps + 1):
        psi = cn.step_array(psi)
        if n % every == 0:
            worst = max(worst, np.abs(wave_covariance(grid, psi) - states[n].covariance).max())
    assert worst < 1e-4


# --- divergence scan ------------------------------------------------------

def test_divergence_scan_exponents():
    scan = divergence_scan(4.0, 1.0, [0.5, 0.25, 0.125])
    assert [r.volume for r in scan.rows] == [8**3, 16**3, 32**3]
    dens = [r.E0_density for r in scan.rows]
    var = [r.var_phi for r in scan.rows]
    assert np.all(np.diff(dens) > 0) and np.all(np.diff(var) > 0)
    assert -4.3 <= scan.energy_fit.slope <= -3.7
    assert -2.3 <= scan.variance_fit.slope <= -1.7
    assert scan.energy_fit.r2 > 0.99 and scan.variance_fit.r2 > 0.99
    for r in scan.rows:
        assert r.E0_density == pytest.approx(r.E0 / 4.0**3, rel=1e-14)


def test_energy_per_site_grows():
    scan = divergence_scan(2.0, 1.0, [0.5, 0.25, 0.125])
    per_site = [r.E0 / r.volume for r in scan.rows]
    assert np.all(np.diff(per_site) > 0)


def test_divergence_scan_guard():
    with pytest.raises(MemoryError, match="guard"):
        divergence_scan(4.0, 1.0, [0.5, 0.03125])
    with pytest.raises(ValueError):
        divergence_scan(4.0, 1.0, [0.3])


def test_power_fit_exact():
    x = np.array([1.0, 2.0, 4.0, 8.0])
    fit = power_fit(x, 3.0 * x**-2.5)
    assert fit.slope == pytest.approx(-2.5) and fit.r2 == pytest.approx(1.0)
