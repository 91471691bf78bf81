from __future__ import annotations

import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from dsalab import decomp, spectral
from dsalab.decomp import DecompRecord, NoiseAccumulators
from dsalab.engine import RecorderSpec
from dsalab.errors import EmptyAfterBurnIn, TauNotIncreasing, TooFewPoints, XStarNotConsensus


def _setup(rng, m, d):
    g = spectral.random_gossip(m, rng) if m > 1 else spectral.validate_gossip([[1.0]])
    pi = spectral.stationary_vector(g).pi
    q = spectral.projector(pi).q
    h = rng.standard_normal((d, d))
    a = h @ h.T / d + 0.3 * np.eye(d) + 0.2 * (h - h.T)
    return g.entries, pi, q, a


# --------------------------------------------------------------------------
# decomposition

def test_decompose_at_fixed_point_is_zero():
    x_star = np.tile([1.0, -2.0], (3, 1))
    pi = np.full(3, 1 / 3)
    r = decomp.decompose(x_star, x_star, pi, spectral.projector(pi).q)
    assert r.agreement_norm == r.total_norm == 0.0
    assert r.disagreement_norm == pytest.approx(0.0, abs=1e-14)  # Q x* up to rounding


def test_decompose_consensus_offset():
    pi = np.array([0.2, 0.3, 0.5])
    x_star = np.tile([1.0, 2.0], (3, 1))
    v = np.array([0.3, -0.4])
    r = decomp.decompose(x_star + v, x_star, pi, spectral.projector(pi).q)
    assert r.disagreement_norm == pytest.approx(0.0, abs=1e-15)
    assert r.agreement_norm == pytest.approx(math.sqrt(3) * 0.5, rel=1e-14)


def test_decompose_hand_example():
    pi = np.array([2 / 3, 1 / 3])
    r = decomp.decompose(np.array([[1.0], [0.0]]), np.zeros((2, 1)), pi, spectral.projector(pi).q)
    assert r.agreement_norm == pytest.approx(2 / 3 * math.sqrt(2), rel=1e-14)
    assert r.disagreement_norm == pytest.approx(math.sqrt(5) / 3, rel=1e-14)
    assert r.total_norm == pytest.approx(1.0, rel=1e-14)


def test_decompose_rejects_non_consensus_target():
    pi = np.array([0.5, 0.5])
    with pytest.raises(XStarNotConsensus):
        decomp.decompose(np.zeros((2, 1)), np.array([[0.0], [1.0]]), pi, spectral.projector(pi).q)


def test_operator_norm_matches_singular_value():
    rng = np.random.default_rng(0)
    for _ in range(10):
        x = rng.standard_normal((5, 3))
        assert decomp.operator_norm(x) == pytest.approx(scipy.linalg.svdvals(x)[0], rel=1e-12)
    row = rng.standard_normal(3)
    assert decomp.rank_one_norm(row, 4) == pytest.approx(decomp.operator_norm(np.outer(np.ones(4), row)))


# --------------------------------------------------------------------------
# accumulators

def test_zero_noise_keeps_accumulators_at_zero():
    rng = np.random.default_rng(1)
    w, pi, q, a = _setup(rng, 3, 2)
    acc = NoiseAccumulators.zeros(3, 2)
    for k in range(1, 20):
        acc = decomp.psi_update(acc, np.zeros((3, 2)), pi, a, 1 / k)
        acc = decomp.chi_update(acc, np.zeros((3, 2)), w, q, a, 1 / k)
    assert not acc.psi_row.any() and not acc.chi.any()


def test_one_step_from_zero():
    rng = np.random.default_rng(2)
    w, pi, q, a = _setup(rng, 4, 3)
    mn = rng.standard_normal((4, 3))
    acc = decomp.psi_update(NoiseAccumulators.zeros(4, 3), mn, pi, a, 0.3)
    acc = decomp.chi_update(acc, mn, w, q, a, 0.3)
    np.testing.assert_allclose(acc.psi(4), 0.3 * np.outer(np.ones(4), pi @ mn), atol=1e-15)
    np.testing.assert_allclose(acc.chi, 0.3 * q @ mn, atol=1e-15)


def _direct_sums(w, pi, q, a, alphas, noises):
    """psi_n and chi_n as explicit weighted sums over past noise."""
    n = len(alphas)
    t = np.concatenate([[0.0], np.cumsum(alphas)])
    m = w.shape[0]
    psi = np.zeros((m, a.shape[0]))
    chi = np.zeros_like(psi)
    for k in range(n):
        e = scipy.linalg.expm(-(t[n] - t[k + 1]) * a)
        psi += alphas[k] * np.outer(np.ones(m), pi @ noises[k]) @ e
        chi += alphas[k] * np.linalg.matrix_power(w, n - 1 - k) @ q @ noises[k] @ e
    return psi, chi


@settings(max_examples=20, deadline=None)
@given(m=st.integers(1, 6), d=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
def test_recursions_match_direct_sums(m, d, seed):
    rng = np.random.default_rng(seed)
    w, pi, q, a = _setup(rng, m, d)
    steps = 1000
    alphas = 0.5 / np.arange(1, steps + 1) ** 0.7
    noises = rng.standard_normal((steps, m, d))
    acc = NoiseAccumulators.zeros(m, d)
    audit = {}
    for k in range(steps):
        acc = decomp.psi_update(acc, noises[k], pi, a, alphas[k])
        acc = decomp.chi_update(acc, noises[k], w, q, a, alphas[k])
        if k + 1 in (10, 250, steps):
            audit[k + 1] = (acc.psi(m), acc.chi.copy())
    for n, (psi, chi) in audit.items():
        psi_ref, chi_ref = _direct_sums(w, pi, q, a, alphas[:n], noises[:n])
        assert np.max(np.abs(psi - psi_ref)) <= 1e-9
        assert np.max(np.abs(chi - chi_ref)) <= 1e-9


# --------------------------------------------------------------------------
# lil supremum and slopes

def _records(ratios, start=0):
    return [DecompRecord(n=start + i, agreement_norm=0, disagreement_norm=0, total_norm=0,
                         lil_ratio=r) for i, r in enumerate(ratios)]


def test_lil_sup_examples():
    assert decomp.lil_running_sup(_records([2.0, 2.0, 2.0], 10), 10) == (2.0, 10)
    assert decomp.lil_running_sup(_records([1.0, 3.0, 2.0], 10), 10) == (3.0, 11)
    assert decomp.lil_running_sup(_records([9.0, 1.0, 3.0, 2.0], 10), 11) == (3.0, 12)
    with pytest.raises(EmptyAfterBurnIn):
        decomp.lil_running_sup(_records([1.0]), 5)


def test_running_sup_at_is_monotone():
    rng = np.random.default_rng(4)
    ns = np.arange(1000)
    out = decomp.running_sup_at(ns, rng.random(1000), 100, [200, 400, 800])
    assert np.all(np.diff(out) >= 0)


GRID = RecorderSpec().checkpoints(10**6)[1:]


def test_slope_of_exact_power_law():
    fit = decomp.slope_fit(GRID, GRID.astype(float) ** -0.7, (1e3, 1e6))
    assert fit.slope == pytest.approx(-0.7, abs=1e-9)
    assert fit.r_squared == pytest.approx(1.0)


def test_slope_with_log_factor():
    # independent numpy.polyfit on the same checkpoint grid, frozen
    n = GRID[(GRID >= 1e3) & (GRID <= 1e6)].astype(float)
    y = 5 * n**-0.35 * np.sqrt(np.log(n))
    fit = decomp.slope_fit(n, y, (1e3, 1e6))
    assert -0.45 <= fit.slope <= -0.30
    assert fit.slope == pytest.approx(np.polyfit(np.log(n), np.log(y), 1)[0], abs=1e-12)


def test_slope_of_constant_data():
    fit = decomp.slope_fit(GRID, np.full(len(GRID), 3.0), (1e3, 1e6))
    assert fit.slope == pytest.approx(0.0, abs=1e-12)
    assert 0.0 <= fit.r_squared <= 1.0


def test_slope_fit_needs_points():
    with pytest.raises(TooFewPoints):
        decomp.slope_fit([1, 2, 3], [1, 2, 3], (1, 3))


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(1e-6, 1e6), min_size=12, max_size=40))
def test_r_squared_in_unit_interval(values):
    ns = np.arange(1, len(values) + 1)
    fit = decomp.slope_fit(ns, values, (1, len(values)))
    assert 0.0 <= fit.r_squared <= 1.0


# --------------------------------------------------------------------------
# martingale LIL tester

def test_zero_noise_gives_zero_sup():
    res = decomp.martingale_lil_test(lambda rng, n: np.zeros(n), np.ones(1000), 1000,
                                     np.random.default_rng(0))
    assert res.sup_normalized == 0.0
    assert "beta" in res.notes


def test_zero_bound_rejected():
    w = np.ones(100)
    w[5] = 0.0
    with pytest.raises(TauNotIncreasing):
        decomp.martingale_lil_test(decomp.rademacher, w, 100, np.random.default_rng(0))


def test_gaussian_sigma_two_scales_bound():
    within = 0
    for seed in range(20):
        res = decomp.martingale_lil_test(decomp.gaussian(2.0), np.ones(10**6), 10**6,
                                         np.random.default_rng(seed), window=(10**5, 10**6 - 1))
        within += res.sup_normalized <= 2.6
    assert within >= 19


def test_rademacher_values():
    e = decomp.rademacher(np.random.default_rng(0), 10_000)
    assert set(np.unique(e)) == {-1.0, 1.0}
    assert abs(e.mean()) < 4 / math.sqrt(10_000)
