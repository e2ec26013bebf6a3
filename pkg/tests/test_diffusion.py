"""Discretized charge drift-diffusion with absorbing and reflecting edges."""

from __future__ import annotations

import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.linalg import expm

from qfpt.diffusion import (
    ChargeGrid,
    DiffusionState,
    build_drift_superoperator,
    build_fokker_planck_generator,
    evolve,
    peclet_number,
    solve_diffusion_fpt,
)
from qfpt.errors import ConfigError
from qfpt.models import drifted_charge, homodyne_qubit, wiener_charge
from qfpt.operators import build_liouvillian, vectorize

from .oracles import inverse_gaussian_density, wiener_fpt_density


def test_charge_grid_validation():
    with pytest.raises(ConfigError):
        ChargeGrid(0.1, 1.0, 0.1)
    with pytest.raises(ConfigError):
        ChargeGrid(-1.0, 1.0, -0.1)
    # zero must land on a node
    with pytest.raises(ConfigError):
        ChargeGrid(-0.25, 1.0, 0.1)
    grid = ChargeGrid(-1.0, 2.0, 0.5)
    assert grid.nnodes == 7
    assert grid.zero_index == 2
    assert np.allclose(grid.nodes, [-1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0])
    w = grid.weights()
    assert w[0] == pytest.approx(0.25) and w[-1] == pytest.approx(0.25)
    assert w[1:-1] == pytest.approx(0.5)
    assert float(w.sum()) == pytest.approx(3.0)


def test_grid_and_thresholds_are_mutually_exclusive():
    with pytest.raises(ConfigError):
        solve_diffusion_fpt(
            wiener_charge(),
            threshold=1.0,
            grid=ChargeGrid(-1.0, 1.0, 0.1),
            initial=np.eye(1, dtype=complex),
        )


def test_wiener_barrier_matches_level_crossing_density():
    sol = solve_diffusion_fpt(
        wiener_charge(),
        threshold=1.0,
        lower_threshold=-8.0,
        delta=0.01,
        initial=np.eye(1, dtype=complex),
        horizon=6.0,
    )
    expected = wiener_fpt_density(1.0, sol.result.times)
    num = np.sqrt(trapezoid((sol.result.density - expected) ** 2, sol.result.times))
    den = np.sqrt(trapezoid(expected**2, sol.result.times))
    assert num / den < 1e-2


def test_wiener_refinement_is_second_order():
    errors = []
    for delta in (0.04, 0.02, 0.01):
        sol = solve_diffusion_fpt(
            wiener_charge(),
            threshold=1.0,
            delta=delta,
            initial=np.eye(1, dtype=complex),
            horizon=4.0,
            dt=5e-4,
        )
        expected = wiener_fpt_density(1.0, sol.result.times)
        errors.append(
            float(np.sqrt(trapezoid((sol.result.density - expected) ** 2, sol.result.times)))
        )
    assert errors[0] > errors[1] > errors[2]
    for coarse, fine in zip(errors, errors[1:]):
        assert 3.0 < coarse / fine < 5.5


def test_drifted_charge_matches_inverse_gaussian():
    alpha = 0.5
    sol = solve_diffusion_fpt(
        drifted_charge(alpha),
        threshold=1.0,
        lower_threshold=-6.0,
        delta=0.01,
        initial=np.eye(1, dtype=complex),
        horizon=8.0,
    )
    expected = inverse_gaussian_density(1.0, 2.0 * alpha, 1.0, sol.result.times)
    num = np.sqrt(trapezoid((sol.result.density - expected) ** 2, sol.result.times))
    den = np.sqrt(trapezoid(expected**2, sol.result.times))
    assert num / den < 1e-2


def test_wide_grid_reproduces_unconditional_dynamics():
    # summing nodes telescopes the finite differences, so the error floor is
    # set by the edge truncation, not by the spacing
    model = homodyne_qubit(1.0, 1.0)
    grid = ChargeGrid(-8.0, 8.0, 0.0625)
    gen = build_fokker_planck_generator(model, grid)
    rho0 = np.diag([0.4, 0.6]).astype(complex)
    state = DiffusionState.initial(grid, rho0)
    liou = build_liouvillian(model)
    t = 1.5
    marginal = evolve(gen, state, t).total_state()
    reference = np.reshape(expm(liou * t) @ vectorize(rho0), (2, 2), order="F")
    assert np.max(np.abs(marginal - reference)) < 1e-6


def test_reflecting_edges_conserve_weight():
    model = homodyne_qubit(1.0, 1.0)
    grid = ChargeGrid(-5.0, 5.0, 0.05)
    gen = build_fokker_planck_generator(model, grid, reflecting=True)
    rho0 = np.diag([0.5, 0.5]).astype(complex)
    state = DiffusionState.initial(grid, rho0)
    out = evolve(gen, state, 1.0)
    assert out.survival() == pytest.approx(1.0, abs=1e-8)


def test_coarse_grid_warns_on_peclet():
    model = homodyne_qubit(1.0, 1.0)
    drift = build_drift_superoperator(model)
    delta = 2.0
    assert peclet_number(drift, delta) > 2.0
    with pytest.warns(RuntimeWarning, match="cell ratio"):
        build_fokker_planck_generator(model, ChargeGrid(-4.0, 4.0, delta))


def test_conditioned_distribution_is_normalized():
    model = homodyne_qubit(1.0, 1.0)
    sol = solve_diffusion_fpt(model, threshold=1.0, delta=0.02, horizon=3.0)
    nodes, dens = sol.conditioned_final_distribution()
    assert np.all(dens >= 0.0)
    assert trapezoid(dens, nodes) == pytest.approx(1.0, abs=1e-9)
    # the zeroed ghost sits exactly on the threshold, one spacing outside
    assert sol.grid.upper == pytest.approx(1.0 - 0.02)


def test_survival_ledger_closes():
    model = homodyne_qubit(1.0, 1.0)
    sol = solve_diffusion_fpt(model, threshold=1.0, delta=0.02, horizon=4.0)
    t, f, g = sol.result.times, sol.result.density, sol.result.survival
    absorbed = np.concatenate(
        ([0.0], np.cumsum((f[1:] + f[:-1]) * 0.5 * np.diff(t)))
    )
    assert np.max(np.abs(g + absorbed - 1.0)) < 1e-6


def test_dense_and_sparse_methods_agree():
    model = homodyne_qubit(1.0, 1.0)
    kwargs = dict(threshold=1.0, delta=0.05, horizon=2.0, dt=5e-4)
    dense = solve_diffusion_fpt(model, method="dense", **kwargs)
    implicit = solve_diffusion_fpt(model, method="cn", **kwargs)
    assert np.max(np.abs(dense.result.density - implicit.result.density)) < 2e-4
    assert np.max(np.abs(dense.result.survival - implicit.result.survival)) < 1e-5
