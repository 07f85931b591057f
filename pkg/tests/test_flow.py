import numpy as np
import pytest

from harmacs import field as fd
from harmacs.diagnostics import perturbed_structure
from harmacs.flow import FlowConfig, flow_step, projected_gradient_step, run_flow, start
from harmacs.matalg import standard_acs
from harmacs._validation import DivergenceError, DomainError, InvalidInputError

J0 = standard_acs(2)


@pytest.fixture(scope="module")
def torus_field():
    grid = fd.Grid.torus(4, 8, 1 / 8)
    return perturbed_structure(grid, J0, amplitude=0.3, seed=2)


@pytest.fixture(scope="module")
def boxed_field():
    # perturbed data on a Dirichlet cube: the frozen layer keeps the minimum nontrivial
    tor = fd.Grid.torus(4, 8, 1 / 8)
    vals = perturbed_structure(tor, J0, amplitude=0.5, seed=3, even=False).values
    return fd.AcsField(fd.Grid.cube(4, 0.5, 1 / 8), np.array(vals))


def test_config_validation():
    with pytest.raises(InvalidInputError):
        FlowConfig(dt_factor=0.5).validate(4)
    with pytest.raises(InvalidInputError):
        FlowConfig(residual_tol=0).validate(4)
    with pytest.raises(InvalidInputError):
        FlowConfig(method="rk4").validate(4)
    assert FlowConfig().resolved_dt_factor(4) == pytest.approx(0.05)
    FlowConfig(dt_factor=0.5, unchecked=True).validate(4)


def test_constant_field_is_fixed_point():
    grid = fd.Grid.torus(4, 6, 1 / 6)
    state = start(fd.AcsField.constant(grid, J0))
    nxt = flow_step(state, FlowConfig())
    assert np.abs(nxt.field.values - J0).max() <= 1e-12
    done = run_flow(fd.AcsField.constant(grid, J0), FlowConfig())
    assert done.status == "converged" and done.step == 0
    assert done.history[0][3] == 0


def test_heat_flow_decreases_energy(torus_field):
    state = start(torus_field)
    for _ in range(100):
        state = flow_step(state, FlowConfig())
    E = np.array([row[2] for row in state.history])
    assert np.all(np.diff(E) <= 1e-12)
    assert E[-1] < E[0]
    assert max(row[4] for row in state.history) <= 1e-10
    assert state.time == pytest.approx(100 * 0.05 / 64)


def test_divergence_keeps_last_good_state(torus_field):
    cfg = FlowConfig(dt_factor=50.0, unchecked=True, max_steps=50)
    with pytest.raises(DivergenceError) as info:
        run_flow(torus_field, cfg)
    last = info.value.last_state
    assert np.all(np.isfinite(last.field.values))
    assert all(np.isfinite(row[2]) for row in last.history)


def test_unprojectable_start():
    grid = fd.Grid.torus(4, 4, 0.25)
    with pytest.raises(DomainError):
        start(fd.AcsField(grid, np.zeros(grid.extents + (4, 4))))


def test_max_steps_zero(torus_field):
    state = run_flow(torus_field, FlowConfig(max_steps=0))
    assert state.status == "max_steps" and state.step == 0 and len(state.history) == 1


def test_projected_gradient_decreases(torus_field):
    cfg = FlowConfig(method="projected_gradient")
    state = start(torus_field, cfg)
    for _ in range(20):
        state = projected_gradient_step(state, cfg)
        assert state.status == "running"
    E = [row[2] for row in state.history]
    assert all(b <= a for a, b in zip(E, E[1:]))
    assert E[-1] < E[0]
    assert state.field.max_constraint_residual() <= 1e-10


def test_projected_gradient_stationary_at_constant():
    grid = fd.Grid.torus(4, 4, 0.25)
    cfg = FlowConfig(method="projected_gradient")
    state = start(fd.AcsField.constant(grid, J0), cfg)
    nxt = projected_gradient_step(state, cfg)
    assert nxt.status == "stationary"
    assert np.array_equal(nxt.field.values, state.field.values)


def test_dirichlet_layer_frozen(boxed_field):
    state = start(boxed_field)
    for _ in range(5):
        state = flow_step(state, FlowConfig())
    edge = ~boxed_field.grid.interior_mask()
    assert np.array_equal(state.field.values[edge], boxed_field.values[edge])


def test_solvers_agree(boxed_field):
    heat = run_flow(boxed_field, FlowConfig(max_steps=3000))
    pg = run_flow(boxed_field, FlowConfig(max_steps=3000, method="projected_gradient"))
    assert heat.status in ("converged", "stalled")
    assert pg.status in ("converged", "stalled")
    Eh, Ep = heat.history[-1][2], pg.history[-1][2]
    assert abs(Eh - Ep) <= 1e-4 * Eh
    assert Eh < heat.history[0][2]
