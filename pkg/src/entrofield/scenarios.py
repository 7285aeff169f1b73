"""Scenario runners behind ``entrofield run``.

Each runner takes a normalized config and fills a :class:`RunReport` with
pass/fail metrics (built-in tolerances) and one data table.
"""
from __future__ import annotations

import numpy as np
from scipy import stats

from . import __version__
from .analytics import CorrelatorQuery, continuum_correlator, correlator_quadrature
from .config import ConfigError, USES, config_hash, hbar_of, provenance_text
from .ensemble import (GaussianDrift, NoDrift, advance, fluctuation_stats,
                       fokker_planck_consistency, gaussian_sampler, init_ensemble)
from .freefield import (apply_kinetic_power, correlation_function,
                        divergence_scan, ground_energy, ground_energy_trace, ground_kernel,
                        shell_correlator, vacuum_variance)
from .grid import (AmplitudeGrid, EdConstants, FieldPotential, equivalence_test, gaussian_state)
from .kernel import (TransitionKernel, fisher_metric, gap_scaling_exponent, linear_drift,
                     log_density, moments, random_perturbations, sample_step, verify_maxent)
from .lattice import LatticeSpec, PotentialSpec, kinetic_matrix, mode_table
from .report import RunReport

_KERNEL_STREAM = 2


class ScenarioRefused(Exception):
    """The configuration asks for something the scenario declines to run; exit code 2."""


def _lattice(cfg) -> LatticeSpec:
    return LatticeSpec(tuple(cfg["lattice"]["dims"]), cfg["lattice"]["spacing"])


def _potential_spec(cfg) -> PotentialSpec:
    p = cfg["physics"]
    try:
        return PotentialSpec(p["m"], p["lambda3"], p["lambda4"])
    except ValueError as exc:
        raise ConfigError(f"physics: {exc}") from None


def _constants(cfg) -> EdConstants:
    return EdConstants(cfg["physics"]["eta"], cfg["physics"]["xi"])


def _grid_lattice(cfg) -> LatticeSpec:
    lat = _lattice(cfg)
    if lat.volume > 2:
        raise ConfigError(f"lattice.dims: grid methods need 1 or 2 sites, got V={lat.volume}")
    return lat


def _ground_precision(lat: LatticeSpec, m: float, hbar: float) -> np.ndarray:
    """Inverse covariance 2 Re(A) of the free ground state, A = cG/ħ."""
    return 2.0 * lat.cell * ground_kernel(lat, m) / hbar


def kernel_check(cfg, report: RunReport):
    eta, dt = cfg["physics"]["eta"], cfg["numerics"]["dt"]
    n = cfg["numerics"]["samples"]
    V = max(2, _lattice(cfg).volume)
    kern = TransitionKernel(eta, dt)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg["seed"], spawn_key=(_KERNEL_STREAM,))))

    def norm_error():
        sd = np.sqrt(kern.step_variance)
        x = np.linspace(-12 * sd, 12 * sd, 4001)
        p = np.exp(log_density(kern, np.zeros(1), x[:, None]))
        return abs(np.sum(p) * (x[1] - x[0]) - 1.0)

    report.check("log_density_norm_error", norm_error, "< 1e-9", lambda v: v < 1e-9)
    dw = sample_step(kern, np.zeros((n, V)), rng)
    st = fluctuation_stats(dw)
    report.check("sample_mean_z", lambda: np.max(np.abs(st.mean) / st.mean_se), "< 4", lambda v: v < 4)
    report.check("sample_var_z", lambda: np.max(np.abs(st.var - kern.step_variance) / st.var_se),
                 "< 4", lambda v: v < 4)
    off = ~np.eye(V, dtype=bool)
    report.check("cross_cov_z", lambda: np.max(np.abs(st.cov[off]) / st.cov_se[off]), "< 4",
                 lambda v: v < 4)

    drifted = TransitionKernel(eta, dt, linear_drift(0.5))

    def moment_z():
        shift, cov = moments(drifted, np.zeros(V))
        d = sample_step(drifted, np.zeros((n, V)), rng)
        z_mean = np.abs(d.mean(axis=0) - shift) / np.sqrt(np.diag(cov) / n)
        return np.max(z_mean)

    report.check("moments_vs_samples_z", moment_z, "< 4", lambda v: v < 4)

    def fisher_error():
        return max(np.max(np.abs(fisher_metric(kern, np.zeros(v), C=eta * dt) - np.eye(v)))
                   for v in (1, 2))

    report.check("fisher_identity_error", fisher_error, "< 1e-8", lambda v: v < 1e-8)
    alpha = kern.alpha

    def min_gap():
        perts = random_perturbations(cfg["numerics"]["perturbations"], alpha, 0.3, rng)
        return verify_maxent(alpha, 0.3, perts).min()

    report.check("maxent_min_gap", min_gap, ">= -1e-12", lambda v: v >= -1e-12)

    def exponent():
        x = np.linspace(-1, 1, 801)
        return gap_scaling_exponent(alpha, 0.3, np.cos(3 * np.pi * x) + 0.5 * np.sin(2 * np.pi * x),
                                    np.geomspace(1e-3, 1e-1, 9))

    report.check("maxent_gap_exponent", exponent, "2.0 +/- 0.1", lambda v: abs(v - 2) <= 0.1)
    report.columns = ["site", "mean", "var", "var_expected", "var_se"]
    report.rows = [[i, st.mean[i], st.var[i], kern.step_variance, st.var_se[i]] for i in range(V)]


def grid_equivalence_scenario(cfg, report: RunReport):
    lat = _grid_lattice(cfg)
    num = cfg["numerics"]
    const = _constants(cfg)
    pot = FieldPotential(lat, _potential_spec(cfg))
    grid = AmplitudeGrid.for_lattice(lat, num["L"], num["points"])
    m = cfg["physics"]["m"]
    if m <= 0:
        raise ConfigError("physics.m: the displaced ground-state initial data needs m > 0")
    init = gaussian_state(grid, center=num["x0"], hbar=const.hbar,
                          precision=_ground_precision(lat, m, const.hbar))
    result = {}

    def run():
        result["r"] = equivalence_test(init, pot, const, num["T"], num["dt"], num["record_every"])
        return result["r"].max_discrepancy

    report.check("max_density_discrepancy", run, "< 1e-5", lambda v: v < 1e-5)
    r = result.get("r")
    if r is None:
        return
    report.check("conclusive", lambda: float(r.conclusive), "== 1", lambda v: v == 1)
    report.check("energy_drift", lambda: r.energy_drift, "< 1e-6", lambda v: v < 1e-6)
    report.check("norm_error", lambda: np.max(np.abs(np.asarray(r.norm_hamilton) - 1)), "< 1e-9",
                 lambda v: v < 1e-9)
    report.columns = ["t", "H", "norm", "discrepancy"]
    report.rows = [list(map(float, row)) for row in
                   zip(r.times, r.hamiltonian, r.norm_hamilton, r.discrepancy)]


def free_field(cfg, report: RunReport):
    lat = _lattice(cfg)
    m = cfg["physics"]["m"]
    hbar = hbar_of(cfg)
    modes = mode_table(lat, m)
    exclude = modes.has_zero_mode
    V = lat.volume

    def gg_error():
        K = kinetic_matrix(lat, m, sparse=True)
        if V <= 4096:
            G = ground_kernel(lat, m, exclude_zero_mode=exclude)
            return np.linalg.norm(G @ G - K.toarray()) / np.linalg.norm(K.toarray())
        # circulant: relative Frobenius error of the first rows equals that of the matrices
        e0 = np.zeros(V)
        e0[0] = 1.0
        gg = apply_kinetic_power(lat, m, apply_kinetic_power(lat, m, e0, 0.5), 0.5)
        k0 = K[0].toarray().ravel()
        return np.linalg.norm(gg - k0) / np.linalg.norm(k0)

    report.check("GG_minus_K_rel_frobenius", gg_error, "< 1e-10", lambda v: v < 1e-10)
    E0 = ground_energy(modes, hbar)
    report.check("E0_sum_vs_trace", lambda: abs(E0 - ground_energy_trace(lat, m, hbar)) / E0,
                 "< 1e-10", lambda v: v < 1e-10)
    var = vacuum_variance(lat, m, hbar, exclude_zero_mode=exclude)

    def var_paths():
        if V <= 4096 and not exclude:
            G = ground_kernel(lat, m)
            diag = hbar / (2 * lat.cell) * np.diag(np.linalg.inv(G))
        else:
            diag = correlation_function(lat, m, hbar, exclude)[:1]
        return np.max(np.abs(diag - var)) / var

    report.check("variance_two_paths", var_paths, "< 1e-10", lambda v: v < 1e-10)
    report.columns = ["a", "V", "E0", "E0_density", "var_phi", "zero_mode_excluded"]
    report.rows = [[lat.spacing, V, E0, E0 / lat.physical_volume, var, exclude]]


def correlator(cfg, report: RunReport):
    m = cfg["physics"]["m"]
    if m <= 0:
        raise ConfigError("physics.m: the continuum correlator needs m > 0")
    rs = cfg["numerics"]["r"]
    compare = cfg["numerics"]["lattice_compare"]
    lat = _lattice(cfg) if compare else None
    if compare and lat.ndim != 3:
        raise ConfigError("lattice.dims: lattice comparison needs a 3-axis lattice")
    rows, quad_err, lat_err = [], [], []
    for r in rs:
        q = CorrelatorQuery(m, r)
        closed = continuum_correlator(q)
        quad = correlator_quadrature(q).value
        quad_err.append(abs(quad - closed) / closed)
        if compare:
            lat_mean, shell_mean, _ = shell_correlator(lat, m, r)
            rel = lat_mean / shell_mean - 1
            lat_err.append(abs(rel))
            rows.append([r, lat_mean, closed, quad, shell_mean, rel])
        else:
            rows.append([r, None, closed, quad, None, None])
    report.check("quadrature_vs_closed_form_rel", lambda: max(quad_err), "< 1e-6", lambda v: v < 1e-6)
    if compare:
        report.check("lattice_vs_continuum_rel", lambda: max(lat_err), "< 0.05", lambda v: v < 0.05)
    report.columns = ["r", "lattice", "closed_form", "quadrature", "closed_form_shell", "rel_err"]
    report.rows = rows


def divergence(cfg, report: RunReport):
    num = cfg["numerics"]
    try:
        scan = divergence_scan(num["size"], cfg["physics"]["m"], num["spacings"], hbar_of(cfg))
    except MemoryError as exc:
        raise ScenarioRefused(f"{exc}") from None
    except ValueError as exc:
        raise ConfigError(f"numerics.spacings: {exc}") from None
    vs = [r.var_phi for r in scan.rows]
    report.check("variance_monotone", lambda: float(all(np.diff(vs) > 0)), "== 1", lambda v: v == 1)
    report.check("var_slope", lambda: scan.variance_fit.slope, "in [-2.3, -1.7]",
                 lambda v: -2.3 <= v <= -1.7)
    report.check("E0_density_slope", lambda: scan.energy_fit.slope, "in [-4.3, -3.7]",
                 lambda v: -4.3 <= v <= -3.7)
    report.columns = ["a", "V", "E0", "E0_density", "var_phi", "var_slope", "var_r2",
                      "E0_density_slope", "E0_density_r2"]
    report.rows = [[r.spacing, r.volume, r.E0, r.E0_density, r.var_phi, scan.variance_fit.slope,
                    scan.variance_fit.r2, scan.energy_fit.slope, scan.energy_fit.r2]
                   for r in scan.rows]


def ensemble(cfg, report: RunReport):
    num, phys = cfg["numerics"], cfg["physics"]
    lat = _lattice(cfg)
    n, dt, eta = num["n"], num["dt"], phys["eta"]
    steps = num.get("steps", int(round(num["T"] / dt)))
    drift = num["drift"]
    hbar = hbar_of(cfg)
    m = phys["m"]
    V = lat.volume
    if lat.cell != 1.0:
        raise ConfigError("lattice.spacing: walker kernels use the site basis and need a unit cell")
    every = max(1, steps // max(1, num["checkpoints"]))
    columns = ["t"] + [f"mean_{i}" for i in range(V)] + [f"var_{i}" for i in range(V)] + ["ks"]
    rows = []

    def row(t, values, ks):
        return [t, *values.mean(axis=0), *values.var(axis=0), ks]

    if drift == "grid":
        if V > 2:
            raise ConfigError("lattice.dims: grid drift needs 1 or 2 sites")
        const = _constants(cfg)
        pot = FieldPotential(lat, _potential_spec(cfg))
        grid = AmplitudeGrid.for_lattice(lat, num["L"], num["points"])
        init = gaussian_state(grid, center=num["x0"], hbar=const.hbar,
                              precision=_ground_precision(lat, m, const.hbar))
        res = {}

        def run():
            res["r"] = fokker_planck_consistency(init, pot, const, n, steps * dt, dt, cfg["seed"],
                                                 checkpoints=num["checkpoints"])
            return res["r"].ks

        report.check("ks_final", run, "< 4/sqrt(n) + 0.005", lambda v: v < 4 / np.sqrt(n) + 0.005)
        r = res.get("r")
        if r is not None:
            report.check("frozen_fraction", lambda: r.frozen / n, "<= 0.01", lambda v: v <= 0.01)
            report.columns = ["t", "ks"]
            report.rows = [[float(t), float(k)] for t, k in zip(r.times, r.ks_series)]
        return

    if m <= 0:
        raise ConfigError("physics.m: the Gaussian ground-state start needs m > 0")
    A = lat.cell * ground_kernel(lat, m) / hbar
    cov0 = 0.5 * np.linalg.inv(A)
    ens = init_ensemble(gaussian_sampler(np.zeros(V), cov0), n, cfg["seed"], lat)
    if drift == "none":
        provider = NoDrift()
        oracle_var = lambda t: np.diag(cov0) + eta * t
    else:
        provider = GaussianDrift(lambda t: (A, np.zeros(V), np.zeros(V)), hbar, eta)
        oracle_var = lambda t: np.diag(cov0)

    def ks_now(values, t):
        sd = np.sqrt(oracle_var(t))
        return max(stats.kstest(values[:, i], "norm", args=(0.0, sd[i])).statistic for i in range(V))

    rows.append(row(0.0, ens.values, ks_now(ens.values, 0.0)))
    done = 0
    while done < steps:
        k = min(every, steps - done)
        ens = advance(ens, provider, eta, dt, k)
        done += k
        rows.append(row(ens.time, ens.values, ks_now(ens.values, ens.time)))
    report.check("ks_final", lambda: rows[-1][-1], "< 4/sqrt(n) + 0.005",
                 lambda v: v < 4 / np.sqrt(n) + 0.005)
    report.check("frozen_fraction", lambda: ens.frozen_count / n, "<= 0.01", lambda v: v <= 0.01)
    if drift == "none":
        def var_z():
            t = ens.time
            x = ens.values
            se = np.sqrt(np.var((x - x.mean(0)) ** 2, axis=0) / n)
            return np.max(np.abs(x.var(axis=0) - oracle_var(t)) / se)

        report.check("variance_growth_z", var_z, "< 4", lambda v: v < 4)
    report.columns = columns
    report.rows = rows


RUNNERS = {
    "kernel-check": kernel_check,
    "grid-equivalence": grid_equivalence_scenario,
    "free-field": free_field,
    "correlator": correlator,
    "divergence-scan": divergence,
    "ensemble": ensemble,
}


def new_report(cfg) -> RunReport:
    header = {
        "scenario": cfg["scenario"],
        "version": __version__,
        "seed": cfg["seed"],
        "hbar": hbar_of(cfg),
        "config_sha256": config_hash(cfg),
        "config": provenance_text(cfg),
    }
    return RunReport(cfg["scenario"], header)


def run(cfg) -> RunReport:
    """Run one scenario. ConfigError and ScenarioRefused propagate to the caller."""
    report = new_report(cfg)
    try:
        RUNNERS[cfg["scenario"]](cfg, report)
    except (ConfigError, ScenarioRefused):
        raise
    except Exception as exc:  # noqa: BLE001 - numeric failures become a failed metric
        report.check("scenario", lambda: (_ for _ in ()).throw(exc), "completes", bool)
    return report


def describe() -> str:
    from .config import REQUIRED
    lines = []
    for name in RUNNERS:
        req = ", ".join(REQUIRED[name]) or "(none)"
        lines.append(f"{name}\n  required: {req}\n  reads:    {', '.join(USES[name])}")
    return "\n".join(lines)
