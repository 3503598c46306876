"""Fixed-step integration of the closed loop and run-level verdicts.

The state is the triple (agent positions, estimator bank, signal
generators).  Integration is classical fourth-order Runge-Kutta with a
constant step, so a run is bitwise reproducible; adaptive stepping would
trade that away for speed this problem does not need.  The generator block
is integrated like everything else rather than sampled from its closed
form; the closed form stays available as a test oracle.

This module only needs duck-typed scenario objects exposing
framework_initial / framework_target / basis / xi0_array, the disturbance
spec, and the mode / kappa / dt / t_end / output_every fields, so it does
not import the scenario machinery.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .disturbance import exosystem_initial_state
from .rigidity import is_infinitesimally_rigid

# A run whose position norm passes this bound is declared divergent and
# aborted with the samples recorded so far.
DIVERGENCE_GUARD = 1e9


@dataclass(frozen=True, eq=False)
class SimState:
    """Closed-loop state: time, positions (n, dim), estimator bank (E, q),
    generator bank (E, q)."""

    t: float
    x: np.ndarray
    xi: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        xi = np.array(self.xi, dtype=float)
        w = np.array(self.w, dtype=float)
        if x.ndim != 2:
            raise ValueError("x must be an (agents, dim) array")
        if xi.ndim != 2 or w.shape != xi.shape:
            raise ValueError("xi and w must be (edges, 2p+1) arrays of one shape")
        for a in (x, xi, w):
            a.setflags(write=False)
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "w", w)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Uniformly sampled run record.

    alpha holds the compensated per-edge errors e + mu - mu_hat (what the
    estimating agent effectively acts on); estimator_gap holds the
    generator state minus the estimator state, per edge and sample.  A
    diverged run keeps the samples recorded before the guard tripped.
    """

    times: np.ndarray
    positions: np.ndarray
    errors: np.ndarray
    speeds: np.ndarray
    mu: np.ndarray
    mu_hat: np.ndarray
    alpha: np.ndarray
    estimator_gap: np.ndarray
    diverged: bool

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        if times.ndim != 1 or times.size == 0:
            raise ValueError("times must be a nonempty vector")
        gaps = np.diff(times)
        if (gaps <= 0).any():
            raise ValueError("sample times must be strictly increasing")
        if gaps.size and not np.allclose(gaps, gaps[0], rtol=1e-9, atol=0.0):
            raise ValueError("sample times must have a uniform stride")
        t_count = times.size
        arrays = {}
        for name, ndim in (("positions", 3), ("errors", 2), ("speeds", 2),
                           ("mu", 2), ("mu_hat", 2), ("alpha", 2), ("estimator_gap", 3)):
            a = np.array(getattr(self, name), dtype=float)
            if a.ndim != ndim or a.shape[0] != t_count:
                raise ValueError(f"{name} must have {ndim} axes with one row per sample")
            arrays[name] = a
        times.setflags(write=False)
        object.__setattr__(self, "times", times)
        for name, a in arrays.items():
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "diverged", bool(self.diverged))

    @property
    def sample_count(self) -> int:
        return self.times.size


@dataclass(frozen=True)
class RunVerdict:
    """End-of-run classification.

    converged: errors and speeds both below tol over the analysis window.
    orbit_detected: every agent holds a nonzero speed with coefficient of
    variation below 1e-3 over the window (the steady collective motion a
    persistent uncompensated disturbance produces); steady_speed is then
    the common speed.  rate and rate_r_squared describe a least-squares
    line through log||e|| over the decaying stretch, absent when the run
    starts trivially or never decays.
    """

    converged: bool
    final_error: float
    rate: float | None
    rate_r_squared: float | None
    steady_speed: float | None
    orbit_detected: bool
    diverged: bool

    def __post_init__(self):
        if self.orbit_detected and not (self.steady_speed and self.steady_speed > 0):
            raise ValueError("an orbit verdict needs a positive steady speed")


def _rk4_step(ys, dt, deriv):
    """One classical Runge-Kutta step over a tuple of state arrays."""
    k1 = deriv(ys)
    k2 = deriv(tuple(y + 0.5 * dt * k for y, k in zip(ys, k1)))
    k3 = deriv(tuple(y + 0.5 * dt * k for y, k in zip(ys, k2)))
    k4 = deriv(tuple(y + dt * k for y, k in zip(ys, k3)))
    sixth = dt / 6.0
    return tuple(
        y + sixth * (a + 2.0 * (b + c) + d)
        for y, a, b, c, d in zip(ys, k1, k2, k3, k4)
    )


def _closed_loop(scenario):
    """Derivative and observation closures over (x, xi, w) tuples.

    Inlines the controller algebra instead of calling into `controller`;
    the closures run four times per integration step, so they avoid
    rebuilding Framework values millions of times per run.
    """
    fw = scenario.framework_initial()
    g = fw.graph
    tails, heads = g.tails, g.heads
    tail_sel, head_sel = g.tail_selector, g.head_selector
    d_sq = fw.target_distances ** 2
    basis = scenario.basis()
    b = basis.vector
    lam_t = np.ascontiguousarray(basis.dynamics_matrix.T)
    kappa = float(scenario.kappa)
    estimator = scenario.mode == "estimator"
    xi_rest = np.zeros((g.edge_count, basis.state_size))
    xi_rest.setflags(write=False)

    def deriv(ys):
        x, xi, w = ys
        z = x[tails] - x[heads]
        e = np.einsum("kd,kd->k", z, z) - d_sq
        residual = e + w @ b
        if estimator:
            residual = residual - xi @ b
            xi_dot = xi @ lam_t + kappa * residual[:, None] * b
        else:
            xi_dot = xi_rest
        u = tail_sel @ (-residual[:, None] * z) + head_sel @ (e[:, None] * z)
        return u, xi_dot, w @ lam_t

    def observe(x, xi, w):
        z = x[tails] - x[heads]
        e = np.einsum("kd,kd->k", z, z) - d_sq
        mu = w @ b
        mu_hat = xi @ b
        alpha = e + mu - mu_hat
        residual = alpha if estimator else e + mu
        u = tail_sel @ (-residual[:, None] * z) + head_sel @ (e[:, None] * z)
        return e, np.linalg.norm(u, axis=1), mu, mu_hat, alpha

    return deriv, observe


def initial_state(scenario) -> SimState:
    """t = 0 state: scenario positions, configured (or zero) estimator bank,
    and the generator state reproducing the scenario's disturbance."""
    fw = scenario.framework_initial()
    w = exosystem_initial_state(scenario.disturbance, scenario.basis()).w
    return SimState(0.0, fw.positions, scenario.xi0_array(), w)


def closed_loop_derivative(state: SimState, scenario):
    """d/dt of (x, xi, w) at a state; rejects non-finite states."""
    x = np.asarray(state.x, dtype=float)
    xi = np.asarray(state.xi, dtype=float)
    w = np.asarray(state.w, dtype=float)
    if not (np.isfinite(x).all() and np.isfinite(xi).all() and np.isfinite(w).all()):
        raise ValueError("state contains non-finite values")
    fw = scenario.framework_initial()
    basis = scenario.basis()
    if x.shape != fw.positions.shape:
        raise ValueError(f"x must have shape {fw.positions.shape}")
    want = (fw.graph.edge_count, basis.state_size)
    if xi.shape != want or w.shape != want:
        raise ValueError(f"xi and w must have shape {want}")
    deriv, _ = _closed_loop(scenario)
    return deriv((x, xi, w))


def integrate(scenario) -> Trajectory:
    """Run the scenario from t = 0 to t_end, sampling every output_every steps.

    Warns when the scenario carries a target embedding that is not
    infinitesimally rigid; such runs are legal but cannot certify anything.
    Aborts with a partial trajectory when the divergence guard trips.
    """
    if scenario.target_positions is not None:
        rigid, _ = is_infinitesimally_rigid(scenario.framework_target())
        if not rigid:
            warnings.warn(
                "target embedding is not infinitesimally rigid",
                RuntimeWarning,
                stacklevel=2,
            )
    deriv, observe = _closed_loop(scenario)
    state0 = initial_state(scenario)
    ys = (state0.x, state0.xi, state0.w)
    dt = float(scenario.dt)
    steps = int(round(scenario.t_end / dt))
    every = int(scenario.output_every)

    times, positions, errors, speeds = [], [], [], []
    mu, mu_hat, alpha, gap = [], [], [], []

    def record(step, ys):
        x, xi, w = ys
        e, spd, m, mh, al = observe(x, xi, w)
        times.append(step * dt)
        positions.append(x)
        errors.append(e)
        speeds.append(spd)
        mu.append(m)
        mu_hat.append(mh)
        alpha.append(al)
        gap.append(w - xi)

    record(0, ys)
    diverged = False
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(1, steps + 1):
            ys = _rk4_step(ys, dt, deriv)
            x, xi, w = ys
            finite = np.isfinite(x).all() and np.isfinite(xi).all() and np.isfinite(w).all()
            if not finite or float(np.linalg.norm(x)) > DIVERGENCE_GUARD:
                diverged = True
                break
            if step % every == 0:
                record(step, ys)

    return Trajectory(
        np.array(times), np.array(positions), np.array(errors), np.array(speeds),
        np.array(mu), np.array(mu_hat), np.array(alpha), np.array(gap), diverged,
    )


def _fit_exponential(times, norms):
    """Least-squares line through log||e|| over the decaying stretch.

    The window starts where ||e|| first drops below a tenth of its initial
    value and ends where it first reaches 1e-8 (or at the last sample).
    Returns (None, None) for trivial starts or windows under 10 points.
    """
    e0 = norms[0]
    if not np.isfinite(e0) or e0 <= 1e-8:
        return None, None
    started = np.nonzero(norms <= e0 / 10.0)[0]
    if started.size == 0:
        return None, None
    floored = np.nonzero(norms <= 1e-8)[0]
    i0 = int(started[0])
    i1 = int(floored[0]) if floored.size else norms.size - 1
    if i1 <= i0:
        return None, None
    t = times[i0:i1 + 1]
    y = norms[i0:i1 + 1]
    keep = y > 0.0
    if int(keep.sum()) < 10:
        return None, None
    t = t[keep]
    y = np.log(y[keep])
    design = np.stack([t, np.ones_like(t)], axis=1)
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    residual = y - design @ coef
    total = y - y.mean()
    ss_tot = float(total @ total)
    if ss_tot == 0.0:
        return None, None
    r_sq = 1.0 - float(residual @ residual) / ss_tot
    return float(coef[0]), r_sq


def run_verdict(traj: Trajectory, window_fraction: float = 0.2, tol: float = 1e-6) -> RunVerdict:
    """Classify a finished run from its tail window (last window_fraction of
    the samples, which must hold at least 50 of them)."""
    if not 0.0 < window_fraction <= 1.0:
        raise ValueError("window_fraction must lie in (0, 1]")
    count = traj.sample_count
    window = math.ceil(window_fraction * count)
    if window < 50:
        raise ValueError(
            f"analysis window holds {window} samples, need at least 50; "
            "run longer or sample more often"
        )
    err_norms = np.linalg.norm(traj.errors, axis=1)
    tail_err = err_norms[-window:]
    tail_speed = traj.speeds[-window:]
    converged = bool(tail_err.max() < tol and tail_speed.max() < tol)
    means = tail_speed.mean(axis=0)
    spreads = tail_speed.std(axis=0)
    orbit = bool((means > 10.0 * tol).all() and (spreads <= 1e-3 * means).all())
    steady = float(means.mean()) if orbit else None
    rate, r_sq = _fit_exponential(traj.times, err_norms)
    return RunVerdict(
        converged=converged,
        final_error=float(err_norms[-1]),
        rate=rate,
        rate_r_squared=r_sq,
        steady_speed=steady,
        orbit_detected=orbit,
        diverged=traj.diverged,
    )


def propagate_exosystem(spec, basis, t_end, dt: float = 1e-3, output_every: int = 10):
    """Integrate the generator bank alone; returns (times, states (T, E, q)).

    Exists as the integration half of the closed-form/integration
    cross-check; the closed loop embeds the same dynamics.
    """
    if dt <= 0 or t_end <= 0:
        raise ValueError("dt and t_end must be positive")
    every = int(output_every)
    if every < 1:
        raise ValueError("output_every must be at least 1")
    lam_t = np.ascontiguousarray(basis.dynamics_matrix.T)

    def deriv(ys):
        return (ys[0] @ lam_t,)

    ys = (exosystem_initial_state(spec, basis).w,)
    steps = int(round(t_end / dt))
    times = [0.0]
    states = [ys[0]]
    for step in range(1, steps + 1):
        ys = _rk4_step(ys, dt, deriv)
        if step % every == 0:
            times.append(step * dt)
            states.append(ys[0])
    return np.array(times), np.array(states)


def write_csv(traj: Trajectory, path) -> None:
    """One row per sample: t, positions (agent-major), errors, speeds, mu,
    mu_hat, alpha; 17 significant digits so values round-trip exactly."""
    t_count, n, m = traj.positions.shape
    e_count = traj.errors.shape[1]
    names = ["t"]
    names += [f"x_{i}_{j}" for i in range(1, n + 1) for j in range(1, m + 1)]
    names += [f"e_{k}" for k in range(1, e_count + 1)]
    names += [f"speed_{i}" for i in range(1, n + 1)]
    names += [f"mu_{k}" for k in range(1, e_count + 1)]
    names += [f"muhat_{k}" for k in range(1, e_count + 1)]
    names += [f"alpha_{k}" for k in range(1, e_count + 1)]
    data = np.column_stack([
        traj.times,
        traj.positions.reshape(t_count, n * m),
        traj.errors,
        traj.speeds,
        traj.mu,
        traj.mu_hat,
        traj.alpha,
    ])
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=",".join(names), comments="")
