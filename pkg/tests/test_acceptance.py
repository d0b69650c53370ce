"""Acceptance suite: each criterion at its stated tolerance.

Every test records a one-line pass/fail verdict that is printed in the
terminal summary (see ``conftest.py``), then asserts it.
"""

import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from moranfilt.diagnostics import analytic_grid_eigenvalues, contribution_lower_bound
from moranfilt.eigenbase import exact_basis_from_coords, nystrom_moran_eigen
from moranfilt.reesf import Theta, compute_moments, fit_reesf, profile_restricted_loglik
from moranfilt.simgen import SimConfig, presets, run_experiment, simulate_dataset
from moranfilt.spatial_graph import KernelSpec, estimate_range_mst, select_knots

from oracles import dense_reml, dense_reml_argmax
from synth import random_effects_instance

pytestmark = pytest.mark.slow


def verdict(acceptance, k, checks, detail):
    ok = all(checks)
    acceptance[k] = (ok, detail)
    assert ok, detail


def test_criterion_1_nystrom_exactness(acceptance):
    t0 = time.perf_counter()
    worst = 0.0
    for n in (50, 150, 300):
        pts = np.random.default_rng(100 + n).standard_normal((n, 2))
        spec = KernelSpec("exp", estimate_range_mst(pts))
        ny = nystrom_moran_eigen(pts, select_knots(pts, n), spec)
        full = exact_basis_from_coords(pts, spec, positive_only=False)
        ones = np.full(n, 1 / np.sqrt(n))
        keep = np.delete(np.arange(full.L), np.argmax(np.abs(ones @ full.vectors)))
        E = full.vectors[:, keep][:, :ny.L]
        signs = np.sign(np.sum(E * ny.vectors, axis=0))
        worst = max(worst, float(np.abs(E * signs - ny.vectors).max()))
    dt = time.perf_counter() - t0
    verdict(acceptance, 1, [worst < 1e-6, dt < 10],
            f"max |dev| = {worst:.2e} (< 1e-6), {dt:.1f} s (< 10 s)")


def test_criterion_2_moment_fidelity(acceptance):
    t0 = time.perf_counter()
    spread, rel = [], []
    for n in (50, 200):
        X, y, basis, *_ = random_effects_instance(n, 0)
        mo = compute_moments(X, y, basis)
        diffs = [profile_restricted_loglik(mo, basis.values, Theta(a, s))[0]
                 - dense_reml(X, y, basis.vectors, basis.values, a, s)
                 for a in (0.3, 0.7, 1.0, 2.0, 4.0) for s in (0.1, 0.5, 2.0, 5.0, 20.0)]
        spread.append(float(np.ptp(diffs)))
        fit = fit_reesf(X, y, basis)
        a, s = dense_reml_argmax(X, y, basis.vectors, basis.values)
        rel.append(max(abs(fit.theta.alpha / a - 1), abs(fit.theta.sigma_gamma2 / s - 1)))
    dt = time.perf_counter() - t0
    verdict(acceptance, 2, [max(spread) < 1e-6, max(rel) < 0.05, dt < 60],
            f"loglik offset spread {max(spread):.1e} (< 1e-6), theta rel. diff "
            f"{max(rel):.1e} (< 5%), {dt:.1f} s (< 60 s)")


@pytest.fixture(scope="module")
def table3_design():
    cfg = SimConfig(n=5_000, L_gen=200, L_fit=(200,), sigma_gamma=2.0, sigma_gamma_x=0.6,
                    replications=100, base_seed=2024, estimators=("LM", "fRE"),
                    compute_z=False)
    t0 = time.perf_counter()
    table = run_experiment(cfg)
    return {r["estimator"]: r for r in table.records()}, time.perf_counter() - t0


def test_criterion_3_coefficient_recovery(acceptance, table3_design):
    rows, dt = table3_design
    lm, re = rows["LM"], rows["fRE200"]
    verdict(acceptance, 3,
            [lm["rmse"] > 0.20, re["rmse"] < 0.06, abs(re["bias"]) < 0.02, dt <= 1800,
             re["failures"] == 0],
            f"LM rmse {lm['rmse']:.3f} (> 0.20), fRE200 rmse {re['rmse']:.4f} (< 0.06), "
            f"fRE200 bias {re['bias']:+.4f} (|.| < 0.02), failures {re['failures']}, "
            f"{dt:.0f} s (<= 1800 s)")


def test_criterion_4_standard_errors(acceptance, table3_design):
    rows, _ = table3_design
    lm, re = rows["LM"], rows["fRE200"]
    verdict(acceptance, 4, [re["rmspe_se"] < 0.08, lm["rmspe_se"] > 0.10],
            f"fRE200 RMSPE {re['rmspe_se']:.4f} (< 0.08), LM RMSPE {lm['rmspe_se']:.3f} (> 0.10)")


def test_criterion_5_residual_filtering(acceptance):
    cfg = SimConfig(n=5_000, L_gen=200, L_fit=(200,), sigma_gamma=1.0, sigma_gamma_x=0.0,
                    replications=20, base_seed=5, estimators=("LM", "fE", "fRE"))
    rows = {r["estimator"]: r for r in run_experiment(cfg).records()}
    z = {k: rows[k]["mean_z_mc"] for k in ("LM", "fE200", "fRE200")}
    verdict(acceptance, 5, [z["LM"] > 100, z["fE200"] < 10, z["fRE200"] < 10],
            f"mean z[MC]: LM {z['LM']:.1f} (> 100), fE200 {z['fE200']:.2f} (< 10), "
            f"fRE200 {z['fRE200']:.2f} (< 10)")


def test_criterion_6_grid_bound(acceptance):
    t0 = time.perf_counter()
    Ls = (50, 100, 200, 400, 600)
    b = [contribution_lower_bound(500, L=L) for L in Ls]
    n_pos = int((analytic_grid_eigenvalues(500) > 0).sum())
    full = contribution_lower_bound(500, L=n_pos)
    dt = time.perf_counter() - t0
    verdict(acceptance, 6,
            [0.83 <= b[2] <= 0.93, all(np.diff(b) >= 0), abs(full - 1) <= 0.02 and full <= 1 + 1e-12,
             dt < 30],
            f"bound(L=200) {b[2]:.3f} in [0.83, 0.93], L-grid {', '.join(f'{x:.3f}' for x in b)} "
            f"nondecreasing, full basis {full:.4f}, {dt:.1f} s (< 30 s)")


def _fre_fit_seconds(n, seed):
    rep = simulate_dataset(SimConfig(n=n, sigma_gamma=1.0, base_seed=seed), 0)
    spec = KernelSpec("exp", rep.r)
    t0 = time.perf_counter()
    knots = select_knots(rep.coords, 200, rep.knot_seed)
    basis = nystrom_moran_eigen(rep.coords, knots, spec)
    fit_reesf(rep.X, rep.y, basis)
    return time.perf_counter() - t0


def test_criterion_7_scaling(acceptance):
    t10 = min(_fre_fit_seconds(10_000, s) for s in (0, 1))
    t20 = min(_fre_fit_seconds(20_000, s) for s in (0, 1))
    verdict(acceptance, 7, [t10 < 60, t20 / t10 < 2.5],
            f"fRE200 fit n=10k {t10:.2f} s (< 60 s), n=20k {t20:.2f} s, "
            f"ratio {t20 / t10:.2f} (< 2.5)")


def test_criterion_8_kernel_robustness(acceptance):
    out = {}
    for cfg in presets("appendixB", replications=50, base_seed=8):
        row = next(r for r in run_experiment(cfg).records() if r["estimator"] == "fRE200")
        out[cfg.kernel] = row["rmspe_se"]
    verdict(acceptance, 8, [v < 0.10 for v in out.values()],
            "fRE200 RMSPE " + ", ".join(f"{k} {v:.4f}" for k, v in out.items()) + " (each < 0.10)")


def test_criterion_9_property_suites(acceptance):
    here = Path(__file__).parent
    t0 = time.perf_counter()
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
         str(here / "test_properties.py"), "--hypothesis-show-statistics"],
        capture_output=True, text=True, cwd=here.parent,
    )
    dt = time.perf_counter() - t0
    counts = [int(line.split()[1]) for line in proc.stdout.splitlines()
              if "passing examples" in line]
    verdict(acceptance, 9,
            [proc.returncode == 0, len(counts) >= 5, min(counts or [0]) >= 100, dt < 300],
            f"{len(counts)} property suites, min {min(counts or [0])} cases each (>= 100), "
            f"exit {proc.returncode}, {dt:.1f} s (< 300 s)")
