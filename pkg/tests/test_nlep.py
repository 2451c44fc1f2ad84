import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import eig

from spikelab.grid import RadialGrid
from spikelab.ground_state import solve_ground_state
from spikelab.nlep import (BracketError, NlepProblem, PoleError, asymptotic_seed, b_profile,
                           characteristic_value, count_unstable, dominant_root, find_eigenvalue, find_hopf,
                           invisible_mode_diagnostic, scan_branch)
from spikelab.operators import linearized_operator


def _small_problem(N, n=400, L=16.0):
    gs = solve_ground_state(N, RadialGrid(N, n, L), tol=1e-5, check_residual=False)
    return NlepProblem(N, gs, linearized_operator(gs))


@pytest.fixture(scope="module")
def small():
    return {N: _small_problem(N) for N in (1, 2)}


def dense_nlep_eigenvalues(p: NlepProblem, tau: float) -> np.ndarray:
    """All eigenvalues of the discrete nonlocal problem via a companion linearization.

    Multiplying through by (1 + tau lam) gives the quadratic problem
    tau lam^2 phi + lam B phi + C phi = 0 with
    B = I - tau (L0 - 2 w^3 <w, .>/m2) and C = -(L0 - 3 w^3 <w^2, .>/m3).
    """
    op = p.op
    n = op.grid.n
    L0 = op.matrix.to_dense()
    w = op.w[:n]
    vol = op.weights
    I = np.eye(n)
    B = I - tau * (L0 - 2 * np.outer(w**3, vol * w) / p.m2)
    C = -(L0 - 3 * np.outer(w**3, vol * w * w) / p.m3)
    Z = np.zeros((n, n))
    A = np.block([[Z, I], [-C, -B]])
    M = np.block([[I, Z], [Z, tau * I]])
    ev = eig(A, M, right=False)
    ev = ev[np.isfinite(ev)]
    # drop the spurious roots introduced at the pole -1/tau
    return ev[np.abs(ev + 1.0 / tau) > 1e-6]


@pytest.mark.parametrize("N,tau", [(1, 1.0), (1, 50.0), (2, 0.5), (2, 3.0)])
def test_roots_match_dense_oracle(small, N, tau):
    p = small[N].with_tau(tau)
    ev = dense_nlep_eigenvalues(p, tau)
    # the oscillatory pair closest to the imaginary axis
    cand = ev[(ev.imag > 1e-6) & (ev.real > -2)]
    target = cand[np.argmax(cand.real)]
    lam = find_eigenvalue(p, target + 1e-3 * (1 + 1j))
    assert abs(lam - target) < 1e-7 * (1 + abs(target))
    assert abs(characteristic_value(p, lam)) < 1e-10


@pytest.mark.parametrize("N,tau", [(1, 1.0), (1, 10.0), (2, 0.5), (2, 3.0)])
def test_contour_count_matches_dense_oracle(small, N, tau):
    p = small[N].with_tau(tau)
    rect = (1e-3, 2 * p.spectrum.mu0, -5.0, 5.0)
    ev = dense_nlep_eigenvalues(p, tau)
    inside = np.sum((ev.real > rect[0]) & (ev.real < rect[1]) & (np.abs(ev.imag) < 5))
    assert count_unstable(p, rect)["zeros"] == inside


@settings(max_examples=12, deadline=None)
@given(N=st.sampled_from([1, 2]), tau=st.one_of(st.just(0.0), st.floats(1e-3, 1e4)))
def test_value_at_zero_is_one_half(nlep1, nlep2, N, tau):
    p = (nlep1 if N == 1 else nlep2).with_tau(tau)
    assert characteristic_value(p, 0.0) == pytest.approx(0.5, abs=1e-8)


@settings(max_examples=25, deadline=None)
@given(N=st.sampled_from([1, 2]), tau=st.floats(0.0, 1e3), re=st.floats(-0.9, 4.0), im=st.floats(1e-3, 4.0))
def test_conjugate_symmetry(small, N, tau, re, im):
    p = small[N].with_tau(tau)
    lam = complex(re, im)
    assert characteristic_value(p, lam.conjugate()) == characteristic_value(p, lam).conjugate()


@settings(max_examples=15, deadline=None)
@given(N=st.sampled_from([1, 2]), tau=st.floats(0.1, 100.0), x=st.floats(0.01, 2.0))
def test_real_on_real_axis(small, N, tau, x):
    p = small[N].with_tau(tau)
    assert characteristic_value(p, x).imag == 0.0


def test_pole_at_minus_one_over_tau(small):
    p = small[1].with_tau(4.0)
    with pytest.raises(PoleError):
        characteristic_value(p, -0.25)


def test_zero_tau_has_no_unstable_roots(small):
    for N in (1, 2):
        p = small[N].with_tau(0.0)
        assert count_unstable(p, (1e-3, 2 * p.spectrum.mu0, -5, 5))["zeros"] == 0


def test_scan_branch_validation(small):
    p = small[2]
    with pytest.raises(ValueError):
        scan_branch(p, (0.0, 1.0), 5)
    with pytest.raises(ValueError):
        scan_branch(p, (1.0, 10.0), 0)
    with pytest.raises(ValueError):
        scan_branch(p, (1.0, 10.0), 500)


def test_scan_branch_tracks_oracle(small):
    p = small[2]
    br = scan_branch(p, (100.0, 1.0), 21)
    assert len(br.taus) == 21 and br.taus[-1] == pytest.approx(1.0)
    for tau, lam in zip(br.taus[::5], br.lambdas[::5]):
        ev = dense_nlep_eigenvalues(p.with_tau(tau), tau)
        assert np.min(np.abs(ev - lam)) < 1e-7
    assert len(br.sign_changes()) == 1


def test_one_dimensional_dominant_root_near_asymptotics(nlep1):
    lam = dominant_root(nlep1.with_tau(1e3))
    seed = asymptotic_seed(nlep1, 1e3)
    assert abs(lam - seed) < 0.02 * abs(seed)
    assert b_profile(nlep1.gs) == pytest.approx((math.pi**2 - 24) / 36, abs=1e-7)


def test_one_dimensional_hopf_search_reports_no_crossing(nlep1):
    with pytest.raises(BracketError, match="no crossing found"):
        find_hopf(nlep1)


def test_small_grid_hopf_is_a_genuine_crossing(small):
    hp = find_hopf(small[2], bracket=(0.1, 100.0))
    assert abs(hp.lam.real) < 1e-8 and hp.lam.imag > 1.0
    below = count_unstable(small[2].with_tau(hp.tau / 1.05), (1e-3, 12.0, -5, 5))["zeros"]
    above = count_unstable(small[2].with_tau(hp.tau * 1.05), (1e-3, 12.0, -5, 5))["zeros"]
    assert (below, above) == (0, 2)


def test_invisible_mode_diagnostic(nlep2):
    d = invisible_mode_diagnostic(nlep2)
    assert d["n_positive"] == 1
    assert d["proj_w"] > 0 and d["proj_w2"] > 0


def test_two_dimensional_large_tau_direction(nlep2):
    lam = dominant_root(nlep2.with_tau(1e3))
    assert abs(cmath.phase(lam) - math.pi / 3) < 0.1
