"""NEES/ANEES statistics, trajectory alignment error and gate scoring."""

import numpy as np
import pytest
from scipy.stats import chi2

from swarmnav.metrics import anees, anees_interval, ate, gate_score, nees

rng = np.random.default_rng(17)


def test_nees_identity_cov():
    e = np.array([1.0, 2.0, 2.0])
    assert np.isclose(nees(e, np.eye(3)), 9.0)
    assert nees(np.zeros(3), np.eye(3)) == 0.0


def test_nees_general_cov():
    A = rng.standard_normal((4, 4))
    P = A @ A.T + np.eye(4)
    e = rng.standard_normal(4)
    assert np.isclose(nees(e, P), e @ np.linalg.solve(P, e))
    with pytest.raises(ValueError):
        nees(np.ones(2), -np.eye(2))


def test_nees_sampling_distribution():
    # Gaussian errors with matching covariance: the mean NEES is the dof.
    A = rng.standard_normal((3, 3))
    P = A @ A.T + np.eye(3)
    L = np.linalg.cholesky(P)
    vals = [nees(L @ rng.standard_normal(3), P) for _ in range(4000)]
    assert abs(np.mean(vals) - 3.0) < 0.15


def test_anees_interval_matches_chi2():
    lo, hi = anees_interval(50, dof=3)
    assert np.isclose(lo, chi2.ppf(0.025, 150) / 50)
    assert np.isclose(hi, chi2.ppf(0.975, 150) / 50)
    # The often-quoted band for 50 runs and 3 dof.
    assert 2.3 < lo < 2.4
    assert 3.6 < hi < 3.8
    with pytest.raises(ValueError):
        anees_interval(0)


def test_anees_aggregation():
    runs = [list(2.0 + 0.5 * rng.standard_normal(100)) for _ in range(20)]
    value, (lo, hi), degenerate = anees(runs)
    assert np.isclose(value, np.mean([np.mean(r) for r in runs]))
    assert not degenerate
    _, _, single = anees(runs[:1])
    assert single
    with pytest.raises(ValueError):
        anees([])


def _circle(n=200):
    th = np.linspace(0, 2 * np.pi, n)
    return np.c_[10 * np.cos(th), 10 * np.sin(th), np.full(n, 5.0)]


def test_ate_zero_for_identical():
    t = np.linspace(0, 10, 200)
    P = _circle()
    rep = ate(t, P, t, P)
    assert rep.rmse < 1e-12


def test_ate_removes_yaw_and_translation():
    t = np.linspace(0, 10, 200)
    Q = _circle()
    yaw = 0.4
    c, s = np.cos(yaw), np.sin(yaw)
    Rz = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
    P = (Rz.T @ (Q - np.array([1.0, -2.0, 0.5])).T).T
    rep = ate(t, P, t, Q)
    assert rep.rmse < 1e-9
    assert np.isclose(rep.yaw, yaw, atol=1e-9)


def test_ate_of_noisy_estimate():
    t = np.linspace(0, 10, 5000)
    th = np.linspace(0, 2 * np.pi, 5000)
    Q = np.c_[10 * np.cos(th), 10 * np.sin(th), np.zeros(5000)]
    P = Q + 0.1 * rng.standard_normal(Q.shape)
    rep = ate(t, P, t, Q)
    assert np.isclose(rep.rmse, 0.1 * np.sqrt(3), rtol=0.05)


def test_ate_nearest_time_association():
    truth_t = np.array([0.0, 1.0, 2.0, 3.0])
    truth_p = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], dtype=float)
    est_t = np.array([0.95, 2.05])
    est_p = np.array([[1, 0, 0], [2, 0, 0]], dtype=float)
    rep = ate(est_t, est_p, truth_t, truth_p)
    assert rep.rmse < 1e-9
    with pytest.raises(ValueError):
        ate([], np.zeros((0, 3)), truth_t, truth_p)


def test_gate_score_confusion():
    accepted = [True, True, False, False, True, False]
    outlier = [False, False, True, True, True, False]
    recall, precision, fpr = gate_score(accepted, outlier)
    assert np.isclose(recall, 2.0 / 3.0)
    assert np.isclose(precision, 2.0 / 3.0)
    assert np.isclose(fpr, 1.0 / 3.0)
    assert gate_score([True], [False]) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        gate_score([True, False], [True])
