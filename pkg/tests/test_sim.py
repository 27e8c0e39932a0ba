import math

import numpy as np
import pytest

from bsmx.model import BlockSparseEstimate, SolverConfig, densify
from bsmx.sim import (
    ScenarioSpec,
    evaluate,
    generate_scenario,
    goodness_of_fit,
    krippendorff_alpha,
    random_instance,
    resample_stability,
    solve_with_method,
)

SMALL = dict(n_sensors=25, n_locations=60, n_times=20, n_trials=12)


def test_scenario_deterministic_bitwise():
    spec = ScenarioSpec(**SMALL, rng_seed=11)
    a = generate_scenario(spec)
    b = generate_scenario(spec)
    assert np.array_equal(a.design.entries, b.design.entries)
    assert np.array_equal(a.trials, b.trials)
    assert np.array_equal(a.m_avg.entries, b.m_avg.entries)
    assert a.true_support == b.true_support
    assert a.snr == b.snr


def test_scenario_noise_free_flag():
    spec = ScenarioSpec(**SMALL, noise_dipole_amplitude=0.0,
                        sensor_noise_std=0.0, rng_seed=1)
    scenario = generate_scenario(spec)
    signal = scenario.design.entries @ densify(scenario.x_true)
    assert np.array_equal(scenario.m_avg.entries, signal)
    assert math.isinf(scenario.snr)
    assert scenario.noise_free


def test_scenario_average_is_trial_mean():
    scenario = generate_scenario(ScenarioSpec(**SMALL, rng_seed=2))
    assert np.allclose(scenario.m_avg.entries, scenario.trials.mean(axis=0),
                       atol=0)
    signal = scenario.design.entries @ densify(scenario.x_true)
    noise = scenario.m_avg.entries - signal
    expected = (signal ** 2).sum() / (noise ** 2).sum()
    assert scenario.snr == pytest.approx(expected, rel=1e-12)


def test_default_scenario_snr_band():
    # reference band around the target signal-to-noise ratio
    for seed in range(5):
        scenario = generate_scenario(ScenarioSpec(rng_seed=seed))
        assert 1.6 < scenario.snr < 3.6


def test_scenario_rejects_unstable_ar():
    with pytest.raises(ValueError, match="unstable AR"):
        ScenarioSpec(**SMALL, ar_coeffs=(1.2, 0.0, 0.0, 0.0, 0.0))


def test_scenario_spec_validation():
    with pytest.raises(ValueError):
        ScenarioSpec(n_true_sources=3)  # amplitude tuple mismatch
    with pytest.raises(ValueError):
        ScenarioSpec(n_locations=5, n_noise_dipoles=10)


def test_evaluate_truth_is_perfect():
    scenario = generate_scenario(ScenarioSpec(**SMALL, rng_seed=3))
    report = evaluate(scenario, scenario.x_true)
    assert report.true_positives == len(scenario.true_support)
    assert report.false_positives == 0
    assert report.active_set_size == len(scenario.true_support)
    assert report.rmse == 0.0
    assert math.isnan(report.rmse_debiased)
    assert 0.0 < report.gof < 1.0


def test_evaluate_empty_estimate():
    scenario = generate_scenario(ScenarioSpec(**SMALL, rng_seed=4))
    empty = BlockSparseEstimate.empty(
        scenario.design.n_locations, scenario.design.n_orient,
        scenario.m_avg.n_times,
    )
    report = evaluate(scenario, empty)
    assert report.true_positives == 0
    assert report.false_positives == 0
    signal_norm = np.linalg.norm(
        scenario.design.entries @ densify(scenario.x_true)
    )
    assert report.rmse == pytest.approx(signal_norm, rel=1e-12)
    assert report.gof == 0.0


def test_gof_monotone_in_residual():
    scenario = generate_scenario(ScenarioSpec(**SMALL, rng_seed=5))
    truth = scenario.x_true
    shrunk = BlockSparseEstimate.from_blocks(
        [(s, 0.2 * b) for s, b in zip(truth.active_set, truth.blocks)],
        truth.n_locations, truth.n_orient, truth.n_times,
    )
    g = scenario.design
    assert goodness_of_fit(scenario.m_avg, g, truth) > goodness_of_fit(
        scenario.m_avg, g, shrunk
    )


def test_krippendorff_perfect_agreement():
    sel = np.zeros((6, 9), dtype=bool)
    sel[:, [1, 4]] = True
    assert krippendorff_alpha(sel) == 1.0


def test_krippendorff_chance_level():
    rng = np.random.default_rng(6)
    sel = rng.random((100, 50)) < 0.5
    assert abs(krippendorff_alpha(sel)) < 0.1


def test_krippendorff_validation():
    with pytest.raises(ValueError, match="coders"):
        krippendorff_alpha(np.zeros((1, 5), dtype=bool))
    with pytest.raises(ValueError, match="2-D"):
        krippendorff_alpha(np.zeros(5, dtype=bool))
    # empty unit set counts as agreement
    assert krippendorff_alpha(np.zeros((4, 0), dtype=bool)) == 1.0
    # constant codings have zero expected disagreement
    assert krippendorff_alpha(np.ones((4, 3), dtype=bool)) == 1.0


def test_krippendorff_coder_duplication():
    # duplicating identical coders preserves perfect agreement exactly;
    # in general the small-sample correction shifts alpha by at most
    # (1 - alpha) / (2m - 1) for m coders
    perfect = np.zeros((5, 8), dtype=bool)
    perfect[:, 2] = True
    assert krippendorff_alpha(np.vstack([perfect, perfect])) == 1.0

    rng = np.random.default_rng(7)
    for _ in range(10):
        m = 40
        sel = rng.random((m, 25)) < 0.4
        alpha = krippendorff_alpha(sel)
        alpha_dup = krippendorff_alpha(np.vstack([sel, sel]))
        assert abs(alpha_dup - alpha) <= (1 - alpha) / (2 * m - 1) + 1e-12


def test_resample_stability_report():
    scenario = generate_scenario(ScenarioSpec(**SMALL, rng_seed=8))
    config = SolverConfig(lam=0.6, lam_is_fraction=True)
    report = resample_stability(scenario, 0.8, 5, config, method="mxne",
                                rng_seed=0)
    assert report.selection_matrix.shape == (5, scenario.design.n_locations)
    assert np.allclose(report.selection_probability,
                       report.selection_matrix.mean(axis=0))
    assert report.krippendorff_alpha <= 1.0


def test_resample_stability_perfect_on_noise_free():
    spec = ScenarioSpec(**SMALL, noise_dipole_amplitude=0.0,
                        sensor_noise_std=0.0, rng_seed=9)
    scenario = generate_scenario(spec)
    config = SolverConfig(lam=0.5, lam_is_fraction=True)
    report = resample_stability(scenario, 0.8, 4, config, method="mxne",
                                rng_seed=1)
    assert report.krippendorff_alpha == 1.0


def test_resample_stability_validation():
    scenario = generate_scenario(ScenarioSpec(**SMALL, rng_seed=10))
    config = SolverConfig(lam=0.5, lam_is_fraction=True)
    with pytest.raises(ValueError, match="fraction"):
        resample_stability(scenario, 1.2, 4, config)
    with pytest.raises(ValueError, match="resamples"):
        resample_stability(scenario, 0.8, 1, config)
    with pytest.raises(ValueError, match="usable subset"):
        resample_stability(scenario, 0.01, 4, config)


def test_solve_with_method_dispatch():
    scenario = generate_scenario(ScenarioSpec(**SMALL, rng_seed=11))
    config = SolverConfig(lam=0.5, lam_is_fraction=True)
    est_mx = solve_with_method(scenario.m_avg, scenario.design, config, "mxne")
    est_ir = solve_with_method(scenario.m_avg, scenario.design, config, "irmxne")
    assert isinstance(est_mx, BlockSparseEstimate)
    assert set(est_ir.active_set) <= set(est_mx.active_set)
    with pytest.raises(ValueError, match="unknown method"):
        solve_with_method(scenario.m_avg, scenario.design, config, "nope")


def test_random_instance_shapes():
    rng = np.random.default_rng(12)
    m, g, truth = random_instance(rng, 10, 20, 3, 7, n_active=4, noise=0.0)
    assert m.entries.shape == (10, 7)
    assert g.entries.shape == (10, 60)
    assert truth.n_active == 4
    assert np.allclose(m.entries, g.entries @ densify(truth))


def test_free_orientation_scenario():
    spec = ScenarioSpec(**SMALL, n_orient=3, rng_seed=13)
    scenario = generate_scenario(spec)
    assert scenario.design.n_orient == 3
    assert scenario.x_true.n_orient == 3
    # each true block is a rank-one orientation times pulse
    for blk in scenario.x_true.blocks:
        assert np.linalg.matrix_rank(blk) == 1
