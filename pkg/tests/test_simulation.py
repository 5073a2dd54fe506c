import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from threshold_sparse import (CoefficientPair, IndicatorDirection, LossSpec,
                              RiskEvaluator, TrueModel, excess_risk,
                              gen_ar1_gaussian, gen_dataset,
                              gen_dataset_from_truth, replication_metrics,
                              run_experiment, summarize)
from threshold_sparse.losses import loss_value, sigmoid
from threshold_sparse.pipeline import FitConfig, TwoStepFit, LassoFit
from threshold_sparse.search import ProfileResult
from threshold_sparse.simulation import (ExperimentConfig, ExperimentError,
                                         check_risk_gaussian, cross_entropy,
                                         read_replications_csv,
                                         write_replications_csv)
from threshold_sparse.solvers import SolverOptions
from threshold_sparse.data import active_set


def quad_check_risk(m, gamma):
    """Quadrature oracle for E rho_gamma(U + m), U ~ N(0, 1)."""
    f = lambda u: float(loss_value(LossSpec.quantile(gamma), u + m, 0.0)) * norm.pdf(u)
    val, err = quad(f, -12, 12, limit=200)
    assert err < 1e-7
    return val


def test_check_risk_matches_quadrature():
    for gamma in (0.5, 0.3):
        for m in (-2.0, -1.0, 0.0, 0.5, 2.0):
            assert check_risk_gaussian(m, gamma) == pytest.approx(
                quad_check_risk(m, gamma), abs=1e-6)


def test_constant_gap_excess_value():
    # frozen from the quadrature oracle: r(1) - r(0) for gamma = 0.5
    frozen = quad_check_risk(1.0, 0.5) - quad_check_risk(0.0, 0.5)
    assert frozen == pytest.approx(0.1843732, abs=2e-7)
    got = check_risk_gaussian(1.0, 0.5) - check_risk_gaussian(0.0, 0.5)
    assert got == pytest.approx(frozen, abs=1e-9)


def test_logistic_excess_hand_value(rng):
    # p0 = 0.5, fitted g = 0.75 everywhere: cross-entropy minus entropy
    t_fit = math.log(3.0)
    r = float(cross_entropy(0.5, t_fit) - cross_entropy(0.5, 0.0))
    assert r == pytest.approx(0.1438410, abs=1e-6)
    # fresh-sample validation of the same number
    y = (rng.uniform(size=1_000_000) < 0.5).astype(float)
    spec = LossSpec.logistic()
    raw = np.mean(loss_value(spec, y, np.full_like(y, t_fit))) \
        - np.mean(loss_value(spec, y, np.zeros_like(y)))
    assert raw == pytest.approx(r, abs=0.002)


def test_ar1_covariance(rng):
    x = gen_ar1_gaussian(100_000, 2, 0.5, rng)
    cov = np.cov(x.T)
    np.testing.assert_allclose(cov, [[1.0, 0.5], [0.5, 1.0]], atol=0.02)
    x0 = gen_ar1_gaussian(100_000, 2, 0.0, rng)
    assert abs(np.cov(x0.T)[0, 1]) < 0.02


def test_ar1_longer_range_decay(rng):
    x = gen_ar1_gaussian(200_000, 5, 0.5, rng)
    cov = np.cov(x.T)
    for lag in (2, 3, 4):
        assert cov[0, lag] == pytest.approx(0.5 ** lag, abs=0.02)


def test_ar1_reproducible():
    a = gen_ar1_gaussian(50, 4, 0.5, np.random.default_rng(7))
    b = gen_ar1_gaussian(50, 4, 0.5, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        gen_ar1_gaussian(10, 2, 1.0)


def test_gen_dataset_requires_p3(rng):
    with pytest.raises(ValueError):
        gen_dataset("median61", 10, 2, rng=rng)
    with pytest.raises(ValueError):
        gen_dataset("nope", 10, 5, rng=rng)


def test_median61_hand_predictor(rng):
    _, truth = gen_dataset("median61", 5, 5, rng=rng)
    x = np.zeros((2, 5))
    x[:, :3] = 1.0
    t = truth.predictor(x, np.array([0.2, 0.9]))
    assert t[0] == pytest.approx(3.0)  # 0.5 + 0 + 0.5 + (0 + 1 + 1)
    assert t[1] == pytest.approx(1.0)
    ds = gen_dataset_from_truth(truth, 50, rng=rng, with_noise=False)
    np.testing.assert_allclose(ds.y, truth.predictor(ds.x, ds.q), atol=1e-12)


def test_logit62_mean_matches_conditional_probability(rng):
    ds, truth = gen_dataset("logit62", 100_000, 5, rng=rng)
    p_cond = sigmoid(truth.predictor(ds.x, ds.q)).mean()
    assert ds.y.mean() == pytest.approx(p_cond, abs=0.01)


def test_excess_zero_at_truth(rng):
    for design in ("median61", "logit62"):
        _, truth = gen_dataset(design, 10, 4, rng=rng)
        r = excess_risk(truth, truth.pair(), truth.tau0, n_val=2000,
                        rng=np.random.default_rng(1))
        assert r == 0.0
        r = excess_risk(truth, truth.pair(), truth.tau0, method="fresh_sample",
                        n_val=2000, rng=np.random.default_rng(1))
        assert abs(r) < 1e-12


def test_closed_form_nonnegative_everywhere(rng):
    _, truth = gen_dataset("median61", 10, 4, rng=rng)
    ev = RiskEvaluator(truth, "closed_form", 2000, rng)
    for _ in range(20):
        pair = CoefficientPair(rng.normal(scale=0.5, size=4), rng.normal(scale=0.5, size=4))
        assert ev.excess(pair, float(rng.uniform(0.2, 0.8))) >= -1e-12


def test_fresh_sample_tracks_closed_form(rng):
    _, truth = gen_dataset("median61", 10, 4, rng=rng)
    pair = CoefficientPair([0.4, 0.1, 0.5, 0.0], [0.0, 0.9, 1.1, 0.0])
    r_cf = excess_risk(truth, pair, 0.52, n_val=400_000, rng=np.random.default_rng(5))
    r_fs = excess_risk(truth, pair, 0.52, method="fresh_sample", n_val=400_000,
                       rng=np.random.default_rng(6))
    assert r_fs == pytest.approx(r_cf, abs=0.004)


def test_evaluator_validation(rng):
    _, truth = gen_dataset("median61", 10, 4, rng=rng)
    with pytest.raises(ValueError):
        RiskEvaluator(truth, "closed_form", 500, rng)
    with pytest.raises(ValueError):
        RiskEvaluator(truth, "nope", 2000, rng)
    odd = TrueModel(truth.beta0, truth.delta0, 0.5, truth.direction,
                    LossSpec.quantile(0.5), "logistic")
    with pytest.raises(ValueError):
        RiskEvaluator(odd, "closed_form", 2000, rng)


def test_direction_conversion_invariance(rng):
    _, truth = gen_dataset("median61", 10, 4, rng=rng)
    fit_pair = CoefficientPair([0.4, 0.0, 0.6, 0.0], [0.0, 0.8, 1.2, 0.0])
    tau = 0.47
    r1 = excess_risk(truth, fit_pair, tau, n_val=50_000, rng=np.random.default_rng(3))
    r2 = excess_risk(truth.flipped(), fit_pair.flipped(), tau, n_val=50_000,
                     rng=np.random.default_rng(3))
    assert r2 == pytest.approx(r1, abs=1e-10)
    # active-set mapping: beta <-> beta + delta, delta <-> -delta
    flipped = fit_pair.flipped()
    np.testing.assert_array_equal(flipped.beta, fit_pair.theta())
    np.testing.assert_array_equal(flipped.delta, -fit_pair.delta)
    assert list(active_set(flipped.delta, 0.0)) == list(active_set(fit_pair.delta, 0.0))


def _fake_fit(pair, tau, direction, active_tol=1e-8):
    prof = ProfileResult(np.array([tau]), pair.as_alpha()[None, :], np.zeros(1),
                         np.ones(1, dtype=bool), np.zeros(1), 0)
    lasso = LassoFit(pair, tau, prof, 0.0)
    return TwoStepFit(lasso=lasso, alpha_tilde=pair, tau_tilde=tau,
                      active_beta=active_set(pair.beta, active_tol),
                      active_delta=active_set(pair.delta, active_tol),
                      scad_weights=np.zeros(pair.p * 2), scad_objective=0.0,
                      scad_kkt_violation=0.0, direction=direction)


def test_replication_metrics_exact_fit(rng):
    _, truth = gen_dataset("median61", 10, 5, rng=rng)
    ev = RiskEvaluator(truth, "closed_form", 2000, rng)
    fit = _fake_fit(truth.pair(), truth.tau0, truth.direction)
    oracle = (truth.pair(), truth.tau0)
    rec = replication_metrics(truth, fit, oracle, oracle, ev, seed=3)
    assert rec.excess_risk == 0.0
    assert rec.l1_total == 0.0 and rec.l1_on_support == 0.0
    assert rec.covers_truth and all([rec.hit1, rec.hit2, rec.hit3, rec.hit4])
    assert rec.tau_hat_abs_err == 0.0 and rec.tau_tilde_abs_err == 0.0
    assert rec.n_active_total == 4


def test_replication_metrics_spurious_and_missing(rng):
    _, truth = gen_dataset("median61", 10, 5, rng=rng)
    ev = RiskEvaluator(truth, "closed_form", 2000, rng)
    oracle = (truth.pair(), truth.tau0)
    spur = truth.pair().as_alpha().copy()
    spur[4] = 0.1  # inactive beta coordinate
    fit = _fake_fit(CoefficientPair.from_alpha(spur), truth.tau0, truth.direction)
    rec = replication_metrics(truth, fit, oracle, oracle, ev, seed=0)
    assert rec.n_active_total == 5
    assert rec.l1_off_support == pytest.approx(0.1)
    assert rec.covers_truth
    missing = truth.pair().as_alpha().copy()
    missing[5 + 2] = 0.0  # delta on x3 (the fourth tracked target)
    fit = _fake_fit(CoefficientPair.from_alpha(missing), truth.tau0, truth.direction)
    rec = replication_metrics(truth, fit, oracle, oracle, ev, seed=0)
    assert not rec.covers_truth
    assert (rec.hit1, rec.hit2, rec.hit3, rec.hit4) == (True, True, True, False)
    assert rec.l1_total == pytest.approx(rec.l1_on_support + rec.l1_off_support, abs=1e-12)


def test_replication_metrics_direction_mismatch(rng):
    _, truth = gen_dataset("median61", 10, 5, rng=rng)
    ev = RiskEvaluator(truth, "closed_form", 2000, rng)
    fit = _fake_fit(truth.pair(), truth.tau0, IndicatorDirection.GREATER)
    with pytest.raises(ValueError):
        replication_metrics(truth, fit, (truth.pair(), 0.5), (truth.pair(), 0.5), ev)


def tiny_experiment(replications=2, seed=11):
    fit = FitConfig(spec=LossSpec.quantile(0.5), lam=0.05, tau_range=(0.2, 0.8),
                    grid_mode="equispaced", grid_size=9,
                    direction=IndicatorDirection.LESS,
                    solver=SolverOptions(tol_primal=1e-4, tol_dual=1e-4))
    return ExperimentConfig(design="median61", n=80, p=4, replications=replications,
                            master_seed=seed, fit=fit, n_val=2000)


def test_run_experiment_deterministic_across_workers():
    import dataclasses

    cfg = tiny_experiment(replications=4)
    rec1, sum1 = run_experiment(cfg, workers=1)
    rec2, sum2 = run_experiment(cfg, workers=2)
    for a, b in zip(rec1, rec2):
        da, db = dataclasses.asdict(a), dataclasses.asdict(b)
        da.pop("runtime_ms"), db.pop("runtime_ms")  # wall time is not data
        assert da == db
    assert sum1 == sum2


def test_run_experiment_single_replication_summary():
    cfg = tiny_experiment(replications=1)
    recs, summary = run_experiment(cfg)
    assert summary.mean_excess == recs[0].excess_risk
    assert summary.median_excess == recs[0].excess_risk
    assert summary.n_replications == 1 and summary.n_failed == 0


def test_run_experiment_failure_threshold(monkeypatch):
    import threshold_sparse.simulation as sim

    def boom(config, r):
        raise RuntimeError("synthetic failure")

    monkeypatch.setattr(sim, "run_replication", boom)
    with pytest.raises(ExperimentError):
        run_experiment(tiny_experiment(replications=3))


def test_experiment_config_validation():
    fit = FitConfig(spec=LossSpec.quantile(0.5), lam=0.05)
    with pytest.raises(ValueError):
        ExperimentConfig(design="median61", n=10, p=4, replications=0,
                         master_seed=0, fit=fit)
    with pytest.raises(ValueError):
        ExperimentConfig(design="custom", n=10, p=4, replications=1,
                         master_seed=0, fit=fit)


def test_replications_csv_roundtrip(tmp_path):
    cfg = tiny_experiment(replications=3)
    recs, summary = run_experiment(cfg)
    path = tmp_path / "replications.csv"
    write_replications_csv(recs, path)
    back = read_replications_csv(path)
    for a, b in zip(recs, back):
        for f in ("seed", "excess_risk", "l1_total", "covers_truth", "tau_hat_abs_err"):
            assert getattr(a, f) == getattr(b, f)
    pooled = summarize(back, label=summary.label)
    assert pooled.mean_excess == pytest.approx(summary.mean_excess, abs=1e-15)
