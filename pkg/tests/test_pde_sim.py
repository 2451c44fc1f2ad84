import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spikelab import pde_sim
from spikelab.grid import RadialGrid
from spikelab.pde_sim import (SimConfig, SimState, SimulationError, envelope_fit, linear_window,
                              mass_rate_defect, perturbed, run, step)
from spikelab.steady_state import ModelParams, physical_grid, solve_spike


def _spike_run(N, tau_tilde, alpha0=1.0, T=60.0, dt=0.005, every=4):
    p = ModelParams(alpha0, 1, 1, 0.05, 1e3, N=N).with_tau_tilde(tau_tilde)
    g = physical_grid(p)
    sol = solve_spike(p)
    cfg = SimConfig(p, g, dt=dt, T=T, output_every=every)
    return run(cfg, perturbed(sol.u, sol.v, g, p.eps), (sol.u, sol.v))


@pytest.mark.parametrize("kw", [dict(dt=0.0), dict(T=0.001, dt=0.01), dict(output_every=0)])
def test_config_validation(kw):
    p = ModelParams(1, 1, 1, 0.05, 1e3)
    with pytest.raises(ValueError):
        SimConfig(p, RadialGrid(1, 100, 1.0), **kw)


@pytest.mark.parametrize("N", [1, 2])
def test_constant_state_is_a_fixed_point(N):
    p = ModelParams(1, 1, 1, 0.05, 1e3, tau=3.0, N=N)
    g = physical_grid(p)
    u, v = (np.full(g.n + 1, x) for x in p.constant_state())
    s = SimState(0.0, u, u * u * v)
    cfg = SimConfig(p, g, dt=0.01, T=1.0)
    s1 = step(s, cfg)
    assert np.max(np.abs(s1.u - u)) <= 1e-12 * u[0]
    assert np.max(np.abs(s1.v - v)) <= 1e-12 * v[0]
    assert s1.t == pytest.approx(0.01)


def test_steady_spike_does_not_drift():
    p = ModelParams(1, 1, 1, 0.05, 1e3, N=1).with_tau_tilde(0.01)
    sol = solve_spike(p)
    cfg = SimConfig(p, sol.grid, dt=0.005, T=10.0)
    s = SimState(0.0, sol.u.copy(), sol.u**2 * sol.v)
    cache = {}
    for _ in range(2000):
        s = step(s, cfg, cache)
    assert np.max(np.abs(s.u - sol.u)) < 1e-6
    assert np.max(np.abs(s.v - sol.v)) < 1e-6 * np.max(sol.v)


@pytest.mark.parametrize("N", [1, 2])
def test_discrete_mass_identity(N):
    p = ModelParams(1, 1, 1, 0.05, 1e3, N=N).with_tau_tilde(0.7)
    sol = solve_spike(p)
    s0 = perturbed(sol.u, sol.v, sol.grid, p.eps, size=0.05)
    cfg = SimConfig(p, sol.grid, dt=0.01, T=1.0)
    s1 = step(s0, cfg)
    assert mass_rate_defect(cfg, s0, s1) < 1e-10


def test_perturbation_shape():
    g = RadialGrid(1, 400, 1.0)
    u = np.ones(401)
    s = perturbed(u, 2 * u, g, eps=0.05, size=0.01)
    assert s.u[0] == pytest.approx(1.01)
    assert s.u[-1] == pytest.approx(1.0)
    assert np.allclose(s.v, 2.0)


def test_positivity_loss_triggers_halving(monkeypatch):
    p = ModelParams(1, 1, 1, 0.05, 1e3, tau=1.0)
    g = physical_grid(p)
    u, v = (np.full(g.n + 1, x) for x in p.constant_state())
    cfg = SimConfig(p, g, dt=0.04, T=1.0, max_halvings=3)
    real = pde_sim._advance
    seen = []

    def flaky(state, cfg_, dt, cache):
        seen.append(dt)
        if dt > 0.015:
            raise FloatingPointError("u lost positivity")
        return real(state, cfg_, dt, cache)

    monkeypatch.setattr(pde_sim, "_advance", flaky)
    s1 = step(SimState(0.0, u, u * u * v), cfg)
    assert s1.t == pytest.approx(0.04)
    assert min(seen) == pytest.approx(0.01)
    cfg0 = SimConfig(p, g, dt=0.04, T=1.0, max_halvings=0)
    with pytest.raises(SimulationError):
        step(SimState(0.0, u, u * u * v), cfg0)


def test_run_rejects_nonpositive_initial_state():
    p = ModelParams(1, 1, 1, 0.05, 1e3, tau=1.0)
    g = physical_grid(p)
    u = np.ones(g.n + 1)
    u[3] = 0.0
    with pytest.raises(SimulationError):
        run(SimConfig(p, g, dt=0.01, T=0.1), SimState(0.0, u, np.ones_like(u)))


@settings(max_examples=40, deadline=None)
@given(sigma=st.floats(-0.2, 0.1), omega=st.floats(1.0, 4.0), phase=st.floats(0, 6.28))
def test_envelope_fit_recovers_synthetic_rates(sigma, omega, phase):
    t = np.linspace(0, 60, 6001)
    x = 1.0 + 1e-3 * np.exp(sigma * t) * np.cos(omega * t + phase)
    fit = envelope_fit(t, x, 1.0)
    assert fit["regime"] == "linear"
    assert fit["method"] == "peak_to_peak"
    assert fit["omega"] == pytest.approx(omega, rel=0.01)
    assert fit["sigma"] == pytest.approx(sigma, abs=0.01)
    assert fit["periods"] >= 4


def test_envelope_window_stops_at_escape_and_at_rounding_floor():
    t = np.linspace(0, 40, 4001)
    grow = 1.0 + 1e-3 * np.exp(0.3 * t) * np.cos(2 * t)
    mask, status = linear_window(t, grow, 1.0)
    assert status == "escaped" and t[mask][-1] < 25
    fit = envelope_fit(t, grow, 1.0)
    assert fit["sigma"] == pytest.approx(0.3, abs=0.02)
    decay = 1.0 + 1e-3 * np.exp(-2.0 * t)
    mask, status = linear_window(t, decay, 1.0)
    assert status == "converged"
    assert envelope_fit(t, decay, 1.0)["sigma"] == pytest.approx(-2.0, rel=0.02)


@pytest.mark.slow
def test_one_dimensional_small_tau_decays():
    tr = _spike_run(1, 0.01, T=30.0)
    assert tr.sigma < 0
    assert tr.verdict.startswith("stable")


@pytest.mark.slow
def test_one_dimensional_large_tau_decays_when_background_is_weak():
    # alpha0 = 0.05 keeps the background share of the tau-weighted mass far below |Re lam| tau
    tr = _spike_run(1, 100.0, alpha0=0.05, T=200.0, dt=0.01, every=10)
    assert tr.sigma < 0
    assert tr.omega == pytest.approx(0.1412, rel=0.15)


@pytest.mark.slow
def test_one_dimensional_large_tau_background_instability():
    # with alpha0 = 1 at eps = 0.05 the floor alpha0 eps carries ~12% of the tau-weighted mass,
    # which outweighs the O(1/tau) damping of the large-tau branch
    tr = _spike_run(1, 100.0, alpha0=1.0, T=30.0, dt=0.01, every=10)
    assert tr.fit["regime"] == "escaped"
    assert tr.sigma > 0
