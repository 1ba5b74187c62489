"""Fixed-step RK4 integration of prolonged systems and the experiments built on it.

State and variation are advanced together as one 2n-dimensional state so every
recorded quantity lives on the same uniform time grid.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from errors import DiffPassError
from linalg import LinalgError, as_vec
from models import ControlAffineSystem, EvaluationError
from settings import worker_count
from analysis.prolong import ProlongedState, prolonged_rhs
from analysis.storage import QuadraticStorage, eval_storage
from simulation.signals import SignalExpr, check_finite, evaluate_channels

logger = logging.getLogger(__name__)

DEFAULT_DT = 1e-3
DIVERGENCE_BOUND = 1e8
STIFFNESS_LIMIT = 0.5  # largest substep * ||J||_inf
MAX_SUBSTEPS = 4096


class SimulationError(DiffPassError):
    """Base class for exceptions in this module."""
    pass


class Diverged(SimulationError):
    """Raised when the state becomes non-finite or exceeds the divergence bound."""

    def __init__(self, message, time=None, state=None):
        super().__init__(message)
        self.time = time
        self.state = state


@dataclass
class Trajectory:
    """Samples of (x, u, y, dx, du, dy, dS) on a uniform grid."""
    dt: float
    times: np.ndarray
    x: np.ndarray
    u: np.ndarray
    y: np.ndarray
    dx: np.ndarray
    du: np.ndarray
    dy: np.ndarray
    dS: np.ndarray
    truncated: bool = False
    truncation_time: Optional[float] = None
    max_substeps: int = 1

    def __len__(self):
        return len(self.times)

    def header(self):
        names = ['t']
        for prefix, block in (('x', self.x), ('u', self.u), ('y', self.y), ('dx', self.dx),
                              ('du', self.du), ('dy', self.dy)):
            names.extend(f"{prefix}{i + 1}" for i in range(block.shape[1]))
        names.append('dS')
        return names

    def table(self):
        return np.column_stack([self.times, self.x, self.u, self.y, self.dx, self.du, self.dy, self.dS])

    def summary(self):
        return {
            'dt': self.dt,
            'n_samples': len(self),
            'final_time': float(self.times[-1]),
            'truncated': self.truncated,
            'truncation_time': self.truncation_time,
            'max_substeps': self.max_substeps,
            'dissipation_residual': dissipation_residual(self),
        }


@dataclass
class EnsembleResult:
    times: np.ndarray
    states: List[np.ndarray]
    distances: Dict[tuple, np.ndarray]
    spread: np.ndarray
    final_spread: float
    diverged: Dict[int, str] = field(default_factory=dict)
    truncated: Dict[int, float] = field(default_factory=dict)
    member_indices: List[int] = field(default_factory=list)  # position in the x0 list of each entry of states

    def __post_init__(self):
        if not self.member_indices:
            self.member_indices = list(range(len(self.states)))

    def spread_at(self, t):
        index = min(int(round(t / (self.times[1] - self.times[0]))), len(self.spread) - 1)
        return float(self.spread[index])

    def first_time_below(self, level):
        """Earliest grid time after which the spread stays at or below ``level`` (None if never)."""
        above = np.nonzero(self.spread > level)[0]
        if len(above) == 0:
            return float(self.times[0])
        if above[-1] + 1 >= len(self.spread):
            return None
        return float(self.times[above[-1] + 1])

    def summary(self):
        return {
            'members': len(self.states),
            'member_indices': list(self.member_indices),
            'final_spread': self.final_spread,
            'diverged': {str(k): v for k, v in self.diverged.items()},
            'truncated': {str(k): v for k, v in self.truncated.items()},
        }


def _signal_function(signals, m, label):
    if isinstance(signals, SignalExpr):
        signals = [signals]
    elif callable(signals):
        return signals
    signals = list(signals)
    if len(signals) != m:
        raise SimulationError(f"{label} has {len(signals)} channels, the system has {m} inputs")
    return lambda t: evaluate_channels(signals, t)


def _rk4_step(rhs, t, z, dt):
    k1 = rhs(t, z)
    k2 = rhs(t + 0.5 * dt, z + 0.5 * dt * k1)
    k3 = rhs(t + 0.5 * dt, z + 0.5 * dt * k2)
    k4 = rhs(t + dt, z + dt * k3)
    return z + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _substep_count(sys, x, u, dt, limit):
    """Power-of-two number of RK4 substeps with (dt / count) * ||J(x, u)||_inf <= limit."""
    J = sys.jacobian_f(x) + sys.jacobian_gu(x, u)
    stiffness = dt * float(np.abs(J).sum(axis=1).max(initial=0.0))
    if stiffness <= limit:
        return 1
    return min(MAX_SUBSTEPS, 1 << int(np.ceil(np.log2(stiffness / limit))))


class _Stepper:
    """One recorded step of size dt, split into substeps where the system is stiff."""

    def __init__(self, sys, rhs, u_fn, dt, limit):
        self.sys = sys
        self.rhs = rhs
        self.u_fn = u_fn
        self.dt = dt
        self.limit = limit
        self.max_substeps = 1

    def __call__(self, t, z):
        count = _substep_count(self.sys, z[:self.sys.n], self.u_fn(t), self.dt, self.limit)
        self.max_substeps = max(self.max_substeps, count)
        h = self.dt / count
        for i in range(count):
            z = _rk4_step(self.rhs, t + i * h, z, h)
        return z


def _grid(dt, T):
    if dt <= 0.0 or T < dt:
        raise SimulationError(f"Need dt > 0 and T >= dt, got dt={dt}, T={T}")
    steps = int(round(T / dt))
    return np.arange(steps + 1) * dt


def _check_start(sys, x0):
    if sys.domain is not None and not sys.domain.contains(x0):
        raise SimulationError(f"Initial state {x0} lies outside the domain of {sys.name}")


def _advance(step, t, z, n, bound):
    try:
        z_next = step(t, z)
    except (EvaluationError, LinalgError, FloatingPointError) as e:
        raise Diverged(f"Evaluation failed at t={t:.6g}: {e}", time=t, state=z[:n]) from e
    if not np.all(np.isfinite(z_next)) or np.linalg.norm(z_next[:n]) > bound:
        raise Diverged(f"State diverged at t={t:.6g}", time=t, state=z_next[:n])
    return z_next


def integrate_prolonged(sys: ControlAffineSystem, x0, dx0, u_sig, du_sig, st: QuadraticStorage,
                        dt: float = DEFAULT_DT, T: float = 10.0,
                        divergence_bound: float = DIVERGENCE_BOUND,
                        stiffness_limit: float = STIFFNESS_LIMIT) -> Trajectory:
    """Integrates (x, dx) with classical RK4; leaving the domain truncates the trajectory.

    Samples are recorded every ``dt``. A step whose Jacobian makes dt * ||J|| exceed
    ``stiffness_limit`` is taken as 2^k equal RK4 substeps.
    """
    x0, dx0 = as_vec(x0, "x0"), as_vec(dx0, "dx0")
    if x0.size != sys.n or dx0.size != sys.n:
        raise SimulationError(f"x0/dx0 must have dimension {sys.n}")
    _check_start(sys, x0)
    times = _grid(dt, T)
    for signals in (u_sig, du_sig):
        if isinstance(signals, SignalExpr):
            check_finite([signals], times)
        elif not callable(signals):
            check_finite(list(signals), times)
    u_fn = _signal_function(u_sig, sys.m, "u")
    du_fn = _signal_function(du_sig, sys.m, "du")
    n = sys.n

    def rhs(t, z):
        rates = prolonged_rhs(sys, ProlongedState(z[:n], z[n:]), u_fn(t), du_fn(t))
        return np.concatenate([rates.xdot, rates.dxdot])

    def record(t, z):
        x, dx = z[:n], z[n:]
        rows['x'].append(x)
        rows['u'].append(u_fn(t))
        rows['y'].append(sys.output(x))
        rows['dx'].append(dx)
        rows['du'].append(du_fn(t))
        rows['dy'].append(sys.jacobian_h(x) @ dx)
        rows['dS'].append(eval_storage(st, x, dx))

    rows = {key: [] for key in ('x', 'u', 'y', 'dx', 'du', 'dy', 'dS')}
    z = np.concatenate([x0, dx0])
    record(times[0], z)
    truncated, truncation_time = False, None
    step = _Stepper(sys, rhs, u_fn, dt, stiffness_limit)
    for k in range(1, len(times)):
        z = _advance(step, times[k - 1], z, n, divergence_bound)
        if sys.domain is not None and not sys.domain.contains(z[:n]):
            truncated, truncation_time = True, float(times[k])
            logger.warning(f"{sys.name}: trajectory left the domain at t={truncation_time:.6g}, truncating")
            break
        record(times[k], z)

    count = len(rows['dS'])
    logger.info(f"Integrated {sys.name} over {count} samples (dt={dt}, T={times[count - 1]:.6g}, "
                f"up to {step.max_substeps} substeps per sample)")
    return Trajectory(dt=dt, times=times[:count], truncated=truncated, truncation_time=truncation_time,
                      max_substeps=step.max_substeps,
                      **{key: np.array(value) for key, value in rows.items()})


def integrate_base(sys: ControlAffineSystem, x0, u_fn: Callable, dt: float = DEFAULT_DT, T: float = 10.0,
                   divergence_bound: float = DIVERGENCE_BOUND, stiffness_limit: float = STIFFNESS_LIMIT):
    """RK4 on x alone, substepped like integrate_prolonged; returns (times, states, truncation_time or None)."""
    x0 = as_vec(x0, "x0")
    _check_start(sys, x0)
    times = _grid(dt, T)
    states = [x0]
    z = x0
    step = _Stepper(sys, lambda s, w: sys.vector_field(w, u_fn(s)), u_fn, dt, stiffness_limit)
    for k in range(1, len(times)):
        z = _advance(step, times[k - 1], z, sys.n, divergence_bound)
        if sys.domain is not None and not sys.domain.contains(z):
            logger.warning(f"{sys.name}: base trajectory left the domain at t={times[k]:.6g}")
            return times[:k], np.array(states), float(times[k])
        states.append(z)
    return times, np.array(states), None


def dissipation_balance(traj: Trajectory) -> np.ndarray:
    """dS[k] - dS[0] - integral of dy.du over [0, t_k] (trapezoid rule)."""
    supply = np.sum(traj.dy * traj.du, axis=1)
    increments = 0.5 * (supply[1:] + supply[:-1]) * np.diff(traj.times)
    integral = np.concatenate([[0.0], np.cumsum(increments)])
    return traj.dS - traj.dS[0] - integral


def dissipation_residual(traj: Trajectory) -> float:
    """Largest violation of the dissipation inequality along the trajectory (0 at t = 0)."""
    return float(np.max(dissipation_balance(traj)))


def variational_oracle(sys: ControlAffineSystem, x0, direction, u_sig, du_dir, eps: float = 1e-5,
                       dt: float = DEFAULT_DT, T: float = 5.0) -> float:
    """Max relative gap between a central-difference displacement and the integrated dx."""
    x0 = as_vec(x0, "x0")
    direction = as_vec(direction, "direction")
    du_dir = np.asarray(du_dir, dtype=float).reshape(sys.m)
    u_fn = _signal_function(u_sig, sys.m, "u")

    plus = integrate_base(sys, x0 + 0.5 * eps * direction, lambda t: u_fn(t) + 0.5 * eps * du_dir, dt, T)
    minus = integrate_base(sys, x0 - 0.5 * eps * direction, lambda t: u_fn(t) - 0.5 * eps * du_dir, dt, T)
    traj = integrate_prolonged(sys, x0, direction, u_fn, lambda t: du_dir, _null_storage(sys.n), dt, T)

    count = min(len(plus[1]), len(minus[1]), len(traj))
    quotient = (plus[1][:count] - minus[1][:count]) / eps
    variation = traj.dx[:count]
    errors = np.linalg.norm(quotient - variation, axis=1) / (np.linalg.norm(variation, axis=1) + 1e-12)
    error = float(np.max(errors))
    logger.info(f"{sys.name}: variational oracle error {error:.3e} over {count} samples (eps={eps}, dt={dt})")
    return error


def _null_storage(n):
    return QuadraticStorage(n, lambda x: np.zeros((n, n)), lambda x: np.zeros((n, n, n)),
                            "positive-semidefinite", "custom", "none")


def _member_distance(a, b, metric):
    delta = a - b
    if metric is None:
        return np.linalg.norm(delta, axis=1)
    midpoints = 0.5 * (a + b)
    return np.array([np.sqrt(max(d @ metric.matrix(x) @ d, 0.0)) for d, x in zip(delta, midpoints)])


def pairwise_distances(states, metric: Optional[QuadraticStorage] = None, labels: Optional[Sequence[int]] = None):
    """Distance curves for every member pair and their pointwise maximum, on the common time range.

    Pairs are keyed by ``labels`` (default: positions in ``states``).
    """
    labels = list(range(len(states))) if labels is None else list(labels)
    count = min(len(xs) for xs in states)
    distances = {}
    for i in range(len(states)):
        for j in range(i + 1, len(states)):
            distances[(labels[i], labels[j])] = _member_distance(states[i][:count], states[j][:count], metric)
    return distances, np.max(np.array(list(distances.values())), axis=0)


def ensemble_contraction(sys: ControlAffineSystem, x0_list: Sequence, u_sig, dt: float = DEFAULT_DT,
                         T: float = 10.0, metric: Optional[QuadraticStorage] = None,
                         threads: Optional[int] = None) -> EnsembleResult:
    """Integrates every initial condition under the shared input and tracks pairwise distances."""
    if len(x0_list) < 2:
        raise SimulationError("An ensemble needs at least two initial conditions")
    u_fn = _signal_function(u_sig, sys.m, "u")

    def run(x0):
        try:
            return integrate_base(sys, x0, u_fn, dt, T), None
        except Diverged as e:
            return None, str(e)

    threads = worker_count() if threads is None else max(1, threads)
    with ThreadPoolExecutor(max_workers=min(threads, len(x0_list))) as executor:
        results = list(executor.map(run, x0_list))

    full_times = _grid(dt, T)
    states, survivors, diverged, truncated = [], [], {}, {}
    for index, (result, error) in enumerate(results):
        if error is not None:
            logger.warning(f"Ensemble member {index} diverged: {error}")
            diverged[index] = error
            continue
        times, xs, exit_time = result
        if exit_time is not None:
            truncated[index] = exit_time
        states.append(xs)
        survivors.append(index)

    if len(states) < 2:
        raise SimulationError(f"Fewer than two ensemble members survived ({len(diverged)} diverged)")
    count = min(len(xs) for xs in states)
    distances, spread = pairwise_distances(states, metric, survivors)
    final = float(spread[-1])
    logger.info(f"Ensemble of {len(states)} members on {sys.name}: final spread {final:.3e}")
    return EnsembleResult(full_times[:count], states, distances, spread, final, diverged, truncated, survivors)
