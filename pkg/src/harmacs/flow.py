"""Constrained energy minimisation by reprojected heat flow.

Each explicit step moves ``J`` along ``Delta J - J nabla_p J nabla_p J`` and
then maps every point back onto the compatible structures with the
canonical projection.  A projected-gradient variant retracts along the
Cayley chart instead.
"""

from dataclasses import dataclass, field as dc_field, replace
import logging

import numpy as np

from ._validation import DivergenceError, DomainError, InvalidInputError
from .field import AcsField, _assemble, _integrate
from .geometry import euclidean
from .matalg import reproject

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("step", "time", "energy", "sup_residual", "max_constraint_residual")


@dataclass
class FlowConfig:
    """Step control for :func:`run_flow`.

    ``dt = dt_factor * h**2``; ``dt_factor=None`` resolves to ``0.2 / m``.
    Set ``unchecked=True`` to skip the stability range check.
    """

    dt_factor: float = None
    max_steps: int = 10000
    residual_tol: float = 1e-6
    energy_stall_tol: float = 1e-12
    stall_window: int = 50
    reproject_every: int = 1
    metric: object = None
    blowup_factor: float = 10.0
    method: str = "heat"
    unchecked: bool = False

    def validate(self, m=None):
        dtf = self.resolved_dt_factor(m or 2)
        if not self.unchecked and not 0 < dtf <= 0.25:
            raise InvalidInputError(f"dt_factor must lie in (0, 0.25], got {dtf}")
        if not dtf > 0:
            raise InvalidInputError("dt_factor must be positive")
        if self.max_steps < 0:
            raise InvalidInputError("max_steps must be >= 0")
        if not (self.residual_tol > 0 and self.energy_stall_tol > 0):
            raise InvalidInputError("tolerances must be positive")
        if self.reproject_every < 1 or self.stall_window < 1:
            raise InvalidInputError("reproject_every and stall_window must be >= 1")
        if self.method not in ("heat", "projected_gradient"):
            raise InvalidInputError(f"unknown method {self.method!r}")
        return self

    def resolved_dt_factor(self, m):
        return 0.2 / m if self.dt_factor is None else float(self.dt_factor)


@dataclass
class _Eval:
    lap: np.ndarray
    nonlin: np.ndarray
    energy: float
    sup_residual: float


@dataclass
class FlowState:
    field: AcsField
    time: float = 0.0
    step: int = 0
    history: list = dc_field(default_factory=list)
    status: str = "running"
    _eval: object = dc_field(default=None, repr=False)

    @property
    def energy(self):
        return self.history[-1][2] if self.history else None


def _evaluate(J, g):
    parts = _assemble(J, g, ("lap", "nonlin", "edens"))
    mask = J.grid.interior_mask()
    R = parts["lap"] - parts["nonlin"]
    sup = float(np.max(np.abs(R), axis=(-2, -1))[mask].max())
    E = _integrate(parts["edens"], J.grid, g)
    return _Eval(parts["lap"], parts["nonlin"], E, sup)


def _ensure_eval(state, g):
    if state._eval is None:
        state._eval = _evaluate(state.field, g)
    return state._eval


def _record(state, g):
    ev = _ensure_eval(state, g)
    row = (state.step, state.time, ev.energy, ev.sup_residual,
           state.field.max_constraint_residual(g))
    state.history.append(row)
    return row


def start(initial, cfg=None):
    """Project ``initial`` once and wrap it in a fresh :class:`FlowState`."""
    cfg = (cfg or FlowConfig()).validate(initial.m)
    g = cfg.metric or euclidean(initial.m)
    vals = reproject(np.asarray(initial.values, dtype=float))
    vals = _keep_boundary(initial, vals)
    state = FlowState(AcsField(initial.grid, vals))
    if state.field.max_constraint_residual(g) > 1e-8:
        raise DomainError("initial field is not projectable")
    _record(state, g)
    return state


def _keep_boundary(old, new_vals):
    grid = old.grid
    if grid.periodic:
        return new_vals
    mask = grid.interior_mask()
    out = np.array(old.values, dtype=float)
    out[mask] = new_vals[mask]
    return out


def flow_step(state, cfg):
    """One explicit reprojected step; returns a new state with a history row."""
    J = state.field
    m = J.m
    cfg.validate(m)
    g = cfg.metric or euclidean(m)
    ev = _ensure_eval(state, g)
    dt = cfg.resolved_dt_factor(m) * J.grid.h ** 2
    new = np.asarray(J.values) + dt * (ev.lap - ev.nonlin)
    if not np.all(np.isfinite(new)):
        raise DivergenceError("non-finite values after update", state)
    if (state.step + 1) % cfg.reproject_every == 0:
        try:
            new = reproject(new)
        except DomainError as exc:
            raise DivergenceError(f"reprojection failed: {exc}", state) from exc
    new = _keep_boundary(J, new)
    nxt = FlowState(AcsField(J.grid, new), state.time + dt, state.step + 1,
                    state.history, "running")
    E = _ensure_eval(nxt, g).energy
    e0 = state.history[0][2]
    if not np.isfinite(E) or E > cfg.blowup_factor * max(e0, 1e-300):
        raise DivergenceError(f"energy blew up to {E:.3e} at step {nxt.step}", state)
    _record(nxt, g)
    return nxt


def _cayley_retract(J, S):
    eye = np.eye(J.shape[-1])
    return J @ np.linalg.solve(eye - S, eye + S)


def projected_gradient_step(state, cfg, max_halvings=20):
    """Tangent-projected descent step with Cayley retraction and backtracking.

    The heat-flow velocity is projected into the tangent space (the
    projection formula scales tangent vectors by 4, hence the division) and
    the chart coordinate ``S = -dt J V / 2`` moves ``J`` by ``dt V`` to first
    order.  On exhausted backtracking the state comes back unchanged with
    ``status == "step_failure"``.
    """
    J = state.field
    m = J.m
    cfg.validate(m)
    g = cfg.metric or euclidean(m)
    ev = _ensure_eval(state, g)
    V = np.asarray(J.values)
    A = ev.lap - ev.nonlin
    A = A + V @ A @ V
    vel = 0.25 * (A - np.swapaxes(A, -1, -2))  # conformal metric: g-transpose is transpose
    dt = cfg.resolved_dt_factor(m) * J.grid.h ** 2
    base = -0.5 * (V @ vel)
    if not np.any(base):
        return replace(state, status="stationary")
    for _ in range(max_halvings + 1):
        trial = reproject(_cayley_retract(V, dt * base))
        trial = _keep_boundary(J, trial)
        nxt = FlowState(AcsField(J.grid, trial), state.time + dt, state.step + 1,
                        state.history, "running")
        ev_new = _ensure_eval(nxt, g)
        if ev_new.energy <= ev.energy:
            _record(nxt, g)
            return nxt
        dt *= 0.5
    return replace(state, status="step_failure")


def run_flow(initial, cfg=None, callback=None):
    """Iterate until the residual, stall or step criterion triggers.

    ``callback(state)`` is invoked after every step (used for checkpoints).
    """
    m = initial.field.m if isinstance(initial, FlowState) else initial.m
    cfg = (cfg or FlowConfig()).validate(m)
    g = cfg.metric or euclidean(m)
    state = initial if isinstance(initial, FlowState) else start(initial, cfg)
    stepper = flow_step if cfg.method == "heat" else projected_gradient_step
    stall = 0
    while True:
        ev = _ensure_eval(state, g)
        if ev.sup_residual <= cfg.residual_tol:
            state.status = "converged"
            break
        if state.step >= cfg.max_steps:
            state.status = "max_steps"
            break
        prev = ev.energy
        state = stepper(state, cfg)
        if state.status in ("step_failure", "stationary"):
            break
        cur = state.history[-1][2]
        stall = stall + 1 if abs(cur - prev) <= cfg.energy_stall_tol * prev else 0
        if stall >= cfg.stall_window:
            state.status = "stalled"
            break
        if callback is not None:
            callback(state)
    log.info("flow finished after %d steps: %s", state.step, state.status)
    return state
