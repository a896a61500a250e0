"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -v -s`.  Expected values tagged as
derived were computed with independent oracles (finite differences, adaptive
quadrature, eigenvalue analysis, brute-force sampling) and are re-derived
here rather than trusted from the implementation under test.
"""

import dataclasses
import math
import time

import numpy as np
import pytest
from scipy.integrate import quad

from vlpalloc import channel, conic, experiments, feasible, fisher, minmax
from vlpalloc.conic import (
    Status,
    minimum_feasible_budget,
    solve_min_power,
    solve_nominal_crlb,
    solve_robust_gamma,
    solve_robust_min_power,
    worst_case_crlb_fixed_p,
)

UNIFORM_400 = np.full(4, 400.0)


def _passed(num, summary):
    print(f"\n[acceptance] criterion {num:02d} PASS - {summary}")


def _sample_perturbations(rng, n, shape, delta):
    """n matrices with spectral norm <= delta (Gaussian direction, uniform radius)."""
    g = rng.standard_normal((n, *shape))
    sigma = np.linalg.svd(g, compute_uv=False)[:, 0]
    radii = delta * (1.0 - rng.random(n))
    return g * (radii / sigma)[:, None, None]


def _bounds_under_perturbations(entries, perturbations, p):
    """Vectorized error bound of the symmetrized information matrix under
    entries - perturbation, +inf where not positive definite."""
    nl = entries.shape[0] // 3
    pert = entries[None, :, :] - perturbations
    j = np.einsum("i,bkil->bkl", p, pert.reshape(-1, 3, nl, 3))
    j = (j + np.swapaxes(j, 1, 2)) / 2
    lam = np.linalg.eigvalsh(j)
    out = np.full(len(j), np.inf)
    ok = lam[:, 0] > 0
    out[ok] = np.sum(1.0 / lam[ok], axis=1)
    return out


def test_criterion_01_gradient_matches_finite_differences(tables, rng):
    started = time.perf_counter()
    rx = tables.receiver
    checked = 0
    while checked < 100:
        led = tables.leds[rng.integers(0, 4)]
        loc = rng.uniform([0.5, 0.5, 0.0], [9.5, 9.5, 3.0])
        polar = rng.uniform(0.0, np.pi / 3)
        azim = rng.uniform(0, 2 * np.pi)
        orient = np.array([np.sin(polar) * np.cos(azim),
                           np.sin(polar) * np.sin(azim), np.cos(polar)])
        if not channel.line_of_sight(led, loc, orient):
            continue
        analytic = channel.gain_gradient(led, loc, orient, rx.detector_area)
        h = 1e-6
        fd = np.array([
            (channel.lambertian_gain(led, loc + h * e, orient, rx.detector_area)
             - channel.lambertian_gain(led, loc - h * e, orient,
                                       rx.detector_area)) / (2 * h)
            for e in np.eye(3)
        ])
        assert np.linalg.norm(analytic - fd) <= 1e-6 * np.linalg.norm(analytic)
        checked += 1
    elapsed = time.perf_counter() - started
    assert elapsed < 1.0
    _passed(1, f"100 analytic gradients within 1e-6 of central differences "
               f"({elapsed:.2f} s)")


def test_criterion_02_signal_energies(tables):
    ts = 1e-6
    for fc in (40e6, 60e6, 80e6, 100e6):
        en = fisher.signal_energies(ts, fc)
        assert abs(en.e2 - ts) <= 1e-9 * ts
        assert abs(en.e3) <= 1e-9 * math.sqrt(en.e1 * en.e2)
        limit = 16 * int(fc * ts)
        e1_quad, _ = quad(lambda t: fisher.base_signal_derivative(t, ts, fc) ** 2,
                          0, ts, limit=limit, epsabs=0.0, epsrel=1e-11)
        assert abs(en.e1 - e1_quad) <= 1e-6 * e1_quad
        norm_quad, _ = quad(lambda t: fisher.base_signal(t, ts, fc) ** 2,
                            0, ts, limit=limit, epsabs=0.0, epsrel=1e-11)
        assert abs(norm_quad / ts - 1.0) <= 1e-9
    _passed(2, "waveform energies match quadrature; unit-power normalization "
               "holds at all four carriers")


def test_criterion_03_bound_is_midpoint_convex(tables, gamma, rng):
    blocks = gamma.blocks()

    def bounds(p_batch):
        j = np.einsum("bi,ikl->bkl", p_batch, blocks)
        lam = np.linalg.eigvalsh((j + np.swapaxes(j, 1, 2)) / 2)
        return np.sum(1.0 / lam, axis=1)

    p1 = rng.uniform(56.25, 900.0, size=(10_000, 4))
    p2 = rng.uniform(56.25, 900.0, size=(10_000, 4))
    mid = bounds((p1 + p2) / 2)
    avg = (bounds(p1) + bounds(p2)) / 2
    violation = np.max((mid - avg) / avg)
    assert violation <= 1e-10
    _passed(3, f"midpoint convexity on 10^4 feasible pairs "
               f"(worst signed violation {violation:.2e})")


def test_criterion_04_center_symmetry_optimality(tables):
    started = time.perf_counter()
    center = dataclasses.replace(
        tables,
        receiver=dataclasses.replace(
            tables.receiver,
            location=np.array([5.0, 5.0, 0.5]),
            orientation=np.array([0.0, 0.0, 1.0]),
        ),
    )
    g = fisher.assemble_gamma(center)
    fs = feasible.build_feasible_set(center, mode="exact")
    outcomes = []
    for per_led in (100.0, 400.0, 800.0):
        res = solve_nominal_crlb(center, g, total_power=4 * per_led)
        p_uni = np.full(4, per_led)
        fs_budget = feasible.FeasibleSet(
            p_lb=fs.p_lb, p_ub=fs.p_ub, total_power=4 * per_led,
            illum=fs.illum, mode="exact")
        uniform_ok = bool(feasible.is_feasible(fs_budget, p_uni))
        if res.status is Status.INFEASIBLE:
            # below the illumination floor both notions of optimal and
            # uniform coincide in infeasibility
            assert not uniform_ok
            outcomes.append(f"{per_led:.0f}W/LED infeasible (both)")
            continue
        uniform_bound = fisher.crlb(fisher.fim(g, p_uni))
        assert uniform_ok
        assert abs(res.objective - uniform_bound) <= 1e-3 * uniform_bound
        outcomes.append(f"{per_led:.0f}W/LED match {res.objective:.3e}")
    elapsed = time.perf_counter() - started
    assert elapsed < 10.0
    _passed(4, "; ".join(outcomes) + f" ({elapsed:.1f} s)")


def test_criterion_05_budget_sweep_dominance_and_cliff(tables, gamma):
    p_min = minimum_feasible_budget(tables)
    grid = [0.95 * p_min, p_min] + list(np.geomspace(1.05 * p_min, 3600.0, 8))
    fs = feasible.build_feasible_set(tables, mode="exact")
    prev = None
    edge_checked = False
    for total in grid:
        res = solve_nominal_crlb(tables, gamma, total_power=total)
        p_uni = feasible.uniform_allocation_for_budget(total, 4)
        fs_budget = feasible.FeasibleSet(
            p_lb=fs.p_lb, p_ub=fs.p_ub, total_power=total, illum=fs.illum,
            mode="exact")
        uniform_ok = bool(feasible.is_feasible(fs_budget, p_uni))
        if total < p_min:
            assert res.status is Status.INFEASIBLE
            assert not uniform_ok
            continue
        assert res.status is Status.OPTIMAL
        assert uniform_ok
        uniform_bound = fisher.crlb(fisher.fim(gamma, p_uni))
        assert res.objective <= uniform_bound * (1 + 1e-6)
        if not edge_checked:
            # smallest feasible budget: optimal and uniform agree within 1%
            assert abs(res.objective - uniform_bound) <= 0.01 * uniform_bound
            edge_checked = True
        if prev is not None:
            assert res.objective <= prev * (1 + 1e-9)
        prev = res.objective
    assert edge_checked
    _passed(5, f"bound cliff at {p_min:.1f} W; optimal never above uniform; "
               "curves meet at the smallest feasible budget")


def test_criterion_06_robust_certificate_soundness(tables, gamma, rng):
    entries = np.asarray(gamma.entries)

    # stated operating point: one tenth of the coefficient-matrix norm
    delta_norm = 0.1 * gamma.spectral_norm()
    res_norm = solve_robust_gamma(tables, gamma, delta_norm)
    if res_norm.status is Status.OPTIMAL:
        pert = _sample_perturbations(rng, 100_000, entries.shape, delta_norm)
        vals = _bounds_under_perturbations(entries, pert, res_norm.p_star)
        assert np.all(vals <= res_norm.objective + 1e-7)
        norm_note = f"certificate {res_norm.objective:.3e} never exceeded"
    else:
        # the ball at this radius can blind the receiver for every feasible
        # power vector, so the certificate is +inf and trivially sound
        assert res_norm.status is Status.INFEASIBLE
        norm_note = ("worst case unbounded at 0.1*|Gamma| "
                     "(certificate +inf, vacuously sound)")

    # non-vacuous soundness at a radius inside the feasible range
    delta = 0.15
    res = solve_robust_gamma(tables, gamma, delta)
    assert res.status is Status.OPTIMAL
    pert = _sample_perturbations(rng, 100_000, entries.shape, delta)
    vals = _bounds_under_perturbations(entries, pert, res.p_star)
    exceed = float(np.max(vals - res.objective))
    assert exceed <= 1e-7

    # degenerate ball reduces to the nominal problem
    nominal = solve_nominal_crlb(tables, gamma, mode="relaxed")
    res0 = solve_robust_gamma(tables, gamma, 0.0)
    assert abs(res0.objective - nominal.objective) <= 1e-6 * nominal.objective

    # certificate grows with the uncertainty radius
    certs = []
    for d in (0.0, 0.06, 0.12, 0.18, 0.24, 0.30):
        r = solve_robust_gamma(tables, gamma, d)
        certs.append(r.objective if r.status is Status.OPTIMAL else math.inf)
    assert all(a <= b + 1e-12 for a, b in zip(certs, certs[1:]))

    _passed(6, f"{norm_note}; 10^5 draws at delta=0.15 stay below t* "
               f"(max exceedance {exceed:.1e}); monotone over 6 radii")


def test_criterion_07_toy_worst_case_brute_force(rng):
    started = time.perf_counter()
    a, p1, delta = 1.0, 2.0, 0.2
    gamma_toy = (a / p1) * np.eye(3)
    t_star = worst_case_crlb_fixed_p(np.array([p1]), gamma_toy, delta)

    # brute force over one million boundary perturbations: eigenvalue grids
    # under random rotations plus raw Gaussian boundary matrices
    best = 0.0
    n_rot, grid_n = 16, 34
    lam_axis = np.linspace(-delta, delta, grid_n)
    lam = np.stack(np.meshgrid(lam_axis, lam_axis, lam_axis,
                               indexing="ij"), -1).reshape(-1, 3)
    for _ in range(n_rot):
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        s = np.einsum("ij,bj,kj->bik", q, lam, q)       # q diag(lam) q^T
        j = a * np.eye(3)[None] - p1 * (s + np.swapaxes(s, 1, 2)) / 2
        ev = np.linalg.eigvalsh(j)
        finite = ev[:, 0] > 0
        if np.any(finite):
            best = max(best, float(np.max(np.sum(1 / ev[finite], axis=1))))
    n_random = 1_000_000 - n_rot * len(lam)
    g = rng.standard_normal((n_random, 3, 3))
    g *= (delta / np.linalg.svd(g, compute_uv=False)[:, 0])[:, None, None]
    j = a * np.eye(3)[None] - p1 * (g + np.swapaxes(g, 1, 2)) / 2
    ev = np.linalg.eigvalsh(j)
    finite = ev[:, 0] > 0
    best = max(best, float(np.max(np.sum(1 / ev[finite], axis=1))))

    elapsed = time.perf_counter() - started
    assert elapsed < 60.0
    assert best <= t_star * (1 + 1e-6)            # soundness
    assert best >= t_star * 0.98                  # tightness within 2%
    assert t_star == pytest.approx(3.0 / (a - p1 * delta), rel=1e-6)
    _passed(7, f"brute force over 10^6 boundary perturbations reaches "
               f"{best / t_star:.4%} of t* ({elapsed:.1f} s)")


@pytest.mark.parametrize("radius", [0.0, 0.1, 0.5, 1.0])
def test_criterion_08_location_minmax(tables, gamma, radius):
    started = time.perf_counter()
    model = minmax.UncertaintyModel.location_ball(radius)
    res = minmax.solve_minmax(tables, model)
    assert res.converged
    assert len(res.trace) <= 200
    assert res.certified_gap <= 1e-3 + 1e-12
    if radius == 0.0:
        nominal = solve_nominal_crlb(tables, gamma)
        assert abs(res.objective - nominal.objective) \
            <= 1e-4 * nominal.objective
        note = f"radius 0 matches nominal ({res.objective:.4e})"
    else:
        p_nominal = solve_nominal_crlb(tables, gamma).p_star
        wc_robust, _ = minmax.worst_case_eval(res.p_star, tables, model)
        wc_nominal, _ = minmax.worst_case_eval(p_nominal, tables, model)
        wc_uniform, _ = minmax.worst_case_eval(UNIFORM_400, tables, model)
        assert wc_robust <= wc_nominal * (1 + 1e-9)
        assert wc_robust <= wc_uniform * (1 + 1e-9)
        note = (f"radius {radius} m: robust {wc_robust:.3e} <= "
                f"non-robust {wc_nominal:.3e}, uniform {wc_uniform:.3e}")
    elapsed = time.perf_counter() - started
    assert elapsed < 300.0
    _passed(8, note + f" ({len(res.trace)} iter, {elapsed:.1f} s)")


@pytest.mark.parametrize("azimuth_deg", [6.0, 12.0])
def test_criterion_09_orientation_minmax(tables, gamma, azimuth_deg):
    p_nominal = solve_nominal_crlb(tables, gamma).p_star
    notes = []
    for polar_deg in (3.0, 9.0):
        model = minmax.UncertaintyModel.orientation_box(
            math.radians(polar_deg), math.radians(azimuth_deg))
        res = minmax.solve_minmax(tables, model)
        assert res.converged
        wc_robust, _ = minmax.worst_case_eval(res.p_star, tables, model)
        wc_nominal, _ = minmax.worst_case_eval(p_nominal, tables, model)
        wc_uniform, _ = minmax.worst_case_eval(UNIFORM_400, tables, model)
        assert wc_robust <= wc_nominal * (1 + 1e-9)
        assert wc_robust <= wc_uniform * (1 + 1e-9)
        notes.append(f"polar {polar_deg:g}deg ok")
    _passed(9, f"azimuth box {azimuth_deg:g} deg: " + ", ".join(notes))


def test_criterion_10_min_power_savings(tables, gamma):
    fs = feasible.build_feasible_set(tables, mode="exact", with_total=False)
    floor = experiments.uniform_feasibility_floor(fs)
    savings = []
    merged = None
    for accuracy in (0.045, 0.05, 0.06, 0.0745, 0.1, 0.15, 0.3):
        eps = accuracy**2
        res = solve_min_power(tables, gamma, eps)
        assert res.status is Status.OPTIMAL
        per_led = max(
            float(feasible.uniform_allocation_for_accuracy(gamma, eps)[0]),
            floor,
        )
        assert per_led <= 900.0
        uniform_total = 4 * per_led
        assert res.objective <= uniform_total * (1 + 1e-6)
        savings.append((accuracy, 1 - res.objective / uniform_total))
        merged = abs(res.objective - uniform_total) / uniform_total
    cm_level = [s for acc, s in savings if acc <= 0.1]
    assert max(cm_level) >= 0.05
    assert merged <= 1e-6  # loosest target: both sit on the illumination floor
    _passed(10, f"max saving {max(cm_level):.1%} at cm-level accuracy; curves "
                f"merge on the illumination floor (gap {merged:.1e})")


def test_criterion_11_robust_min_power_guarantee(tables, gamma):
    eps = 0.1**2
    for delta in (0.1, 0.2):
        report = experiments.run_cdf_experiment(
            tables, eps, delta, n_real=100, seed=42, delta_relative=False,
            workers=4,
        )
        agg = report.aggregates
        assert agg["robust"]["n_feasible" if "n_feasible" in agg["robust"]
                             else "feasibility_rate"] is not None
        assert agg["robust"]["meets_accuracy_fraction"] == 1.0
        assert agg["non_robust"]["meets_accuracy_fraction"] < 1.0
        assert agg["uniform"]["meets_accuracy_fraction"] < 1.0

    totals = []
    for delta in (0.0, 0.05, 0.1, 0.15, 0.2):
        res = solve_robust_min_power(tables, gamma, delta, eps)
        assert res.status is Status.OPTIMAL
        totals.append(res.objective)
    assert all(a <= b + 1e-9 for a, b in zip(totals, totals[1:]))
    _passed(11, "robust designs meet the target in 100/100 realizations at "
                "both radii; non-robust and uniform both violate; power "
                "monotone in the radius")


def test_criterion_12_experiment_determinism(tables):
    kwargs = dict(n_feasible=6, seed=99, delta_relative=False)
    serial = experiments.run_strategy_comparison(tables, 0.12, workers=1,
                                                 **kwargs)
    threaded = experiments.run_strategy_comparison(tables, 0.12, workers=8,
                                                   **kwargs)
    assert serial.to_csv().encode() == threaded.to_csv().encode()

    cdf_serial = experiments.run_cdf_experiment(
        tables, 0.1**2, 0.1, n_real=6, seed=99, delta_relative=False, workers=1)
    cdf_threaded = experiments.run_cdf_experiment(
        tables, 0.1**2, 0.1, n_real=6, seed=99, delta_relative=False, workers=8)
    assert cdf_serial.to_csv().encode() == cdf_threaded.to_csv().encode()
    _passed(12, "comparison and CDF reports byte-identical on 1 and 8 workers")
