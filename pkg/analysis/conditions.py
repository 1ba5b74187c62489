"""Pointwise differential-passivity checkers, region scans and their reports.

Every checker returns a signed scalar. Whether that value has to stay below zero
("upper"), above zero ("lower") or vanish ("equality") is carried by the
:class:`Checker` wrapping it, and :func:`scan_region` turns the sampled values into a
:class:`ConditionReport` with a pass / fail / boundary verdict.

Conditions that depend on u are only checked on a finite set of input samples; a
pass is a statement about those samples, not a proof over the whole input space.
"""
import itertools
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from errors import DiffPassError
from linalg import LinalgError, as_mat, as_vec, solve_linear, sym, sym_eig_bounds
from models import BraytonMoserSystem, ControlAffineSystem, Domain, GradientSystem, ModelError, \
    brayton_to_gradient
from settings import worker_count
from analysis.prolong import gamma_matrix, omega_term
from analysis.storage import QuadraticStorage, StorageBounds, StorageError, _check_weight

logger = logging.getLogger(__name__)

UPPER = "upper"
LOWER = "lower"
EQUALITY = "equality"

PASS = "pass"
FAIL = "fail"
BOUNDARY = "boundary"

EIGEN_TOLERANCE = 1e-9
EQUALITY_TOLERANCE = 1e-8


class ConditionError(DiffPassError):
    """Base class for exceptions in this module."""
    pass


class ReportInvalid(ConditionError):
    """Raised when too many grid points could not be evaluated."""

    def __init__(self, message, failures=None):
        super().__init__(message)
        self.failures = failures or []


# --- pointwise checkers ---------------------------------------------------

def check_metric_contraction(sys: ControlAffineSystem, st: QuadraticStorage, x) -> float:
    """lambda_max of M df/dx + df/dx^T M + sum_i dM_i f_i."""
    M = st.matrix(x)
    J = sys.jacobian_f(x)
    lhs = M @ J + J.T @ M + np.tensordot(sys.drift(x), st.derivatives(x), axes=1)
    return sym_eig_bounds(lhs).lambda_max


def _standard_basis(m):
    return list(np.eye(m))


def check_killing(sys: ControlAffineSystem, st: QuadraticStorage, x, u_basis=None) -> List[float]:
    """Frobenius residual of the Killing equation for every input direction."""
    M = st.matrix(x)
    dM = st.derivatives(x)
    g = sys.input_matrix(x)
    residuals = []
    for e in (_standard_basis(sys.m) if u_basis is None else u_basis):
        e = np.asarray(e, dtype=float).reshape(sys.m)
        J = sys.jacobian_gu(x, e)
        lhs = M @ J + J.T @ M + np.tensordot(g @ e, dM, axes=1)
        residuals.append(float(np.linalg.norm(lhs)))
    return residuals


def check_output_match(sys: ControlAffineSystem, st: QuadraticStorage, x) -> float:
    """||dh/dx^T - M(x) g(x)||_F."""
    return float(np.linalg.norm(sys.jacobian_h(x).T - st.matrix(x) @ sys.input_matrix(x)))


def natural_condition_matrix(gs: GradientSystem, x, u):
    """Symmetric matrix of the quadratic form of dS' at du = 0 for the storage M = Q."""
    gamma = gamma_matrix(gs, x, u)
    return -sym(gs.hessian(x)) + sym(gamma) + 0.5 * omega_term(gs, x, u)


def check_gradient_natural(gs: GradientSystem, x, u) -> float:
    return sym_eig_bounds(natural_condition_matrix(gs, x, u)).lambda_max


def check_theorem_qpq(gs: GradientSystem, P, x, C=None):
    """(lambda_min of hess_V^T P Q + Q P hess_V, ||C^T - P B||_F)."""
    P, _ = _check_weight(P, gs.n)
    Q = gs.metric(x)
    H = gs.hessian(x)
    margin = sym_eig_bounds(H.T @ P @ Q + Q @ P @ H).lambda_min
    if C is None:
        return margin, 0.0
    C = as_mat(C, "C")
    return margin, float(np.linalg.norm(C.T - P @ gs.B))


def rigid_body_coupling(omega):
    """Hessian of p(omega) = omega_1 omega_2 omega_3."""
    w1, w2, w3 = np.asarray(omega, dtype=float).reshape(3)
    return np.array([[0.0, w3, w2], [w3, 0.0, w1], [w2, w1, 0.0]])


def check_rigid_body(gs_closed: GradientSystem, r, x) -> float:
    """lambda_max of Q^-1 d2p + d2p Q^-1 - 2 diag(r)."""
    r = as_vec(r, "r")
    Q_inv = solve_linear(gs_closed.metric(x), np.eye(3)).x
    H = rigid_body_coupling(x)
    return sym_eig_bounds(Q_inv @ H + H @ Q_inv - 2.0 * np.diag(r)).lambda_max


def check_brayton_moser(bm: BraytonMoserSystem, z, gs: Optional[GradientSystem] = None) -> float:
    """lambda_max of Q d2p + d2p Q; the mixed-potential form of the QPQ condition with P = I."""
    gs = brayton_to_gradient(bm) if gs is None else gs
    Q = gs.metric(z)
    hess_p = np.asarray(bm.hess_p(z), dtype=float).reshape(bm.n, bm.n)
    return sym_eig_bounds(Q @ hess_p + hess_p @ Q).lambda_max


# --- checkers as scan targets ---------------------------------------------

@dataclass(frozen=True, eq=False)
class Checker:
    """A pointwise condition ready for scanning: value(x, u) plus the sense it must satisfy."""
    condition_id: str
    sense: str
    evaluate: Callable
    n: int
    m: int = 0
    uses_input: bool = False
    domain: Optional[Domain] = None
    tolerance: float = EIGEN_TOLERANCE


def contraction_checker(sys, st):
    return Checker("metric-contraction", UPPER, lambda x, u: check_metric_contraction(sys, st, x),
                   sys.n, sys.m, domain=sys.domain)


def killing_checker(sys, st, u_basis=None):
    return Checker("killing", EQUALITY, lambda x, u: max(check_killing(sys, st, x, u_basis), default=0.0),
                   sys.n, sys.m, domain=sys.domain, tolerance=EQUALITY_TOLERANCE)


def output_checker(sys, st):
    return Checker("output-match", EQUALITY, lambda x, u: check_output_match(sys, st, x),
                   sys.n, sys.m, domain=sys.domain, tolerance=EQUALITY_TOLERANCE)


def natural_checker(gs):
    return Checker("gradient-natural", UPPER, lambda x, u: check_gradient_natural(gs, x, u),
                   gs.n, gs.m, uses_input=True, domain=gs.domain)


def qpq_checker(gs, P):
    return Checker("theorem-qpq", LOWER, lambda x, u: check_theorem_qpq(gs, P, x)[0],
                   gs.n, gs.m, domain=gs.domain)


def qpq_output_checker(gs, P, C):
    return Checker("qpq-output", EQUALITY, lambda x, u: check_theorem_qpq(gs, P, x, C)[1],
                   gs.n, gs.m, domain=gs.domain, tolerance=EQUALITY_TOLERANCE)


def rigid_body_checker(gs_closed, r):
    return Checker("rigid-body", UPPER, lambda x, u: check_rigid_body(gs_closed, r, x),
                   3, gs_closed.m, domain=gs_closed.domain)


def brayton_moser_checker(bm):
    gs = brayton_to_gradient(bm)
    return Checker("brayton-moser", UPPER, lambda z, u: check_brayton_moser(bm, z, gs),
                   bm.n, gs.m, domain=bm.domain)


# --- grids and reports ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class SampleGrid:
    lower: np.ndarray
    upper: np.ndarray
    counts: tuple
    u_samples: tuple = ()

    def __post_init__(self):
        lower = as_vec(self.lower, "grid lower bound")
        upper = as_vec(self.upper, "grid upper bound")
        counts = tuple(int(c) for c in np.atleast_1d(self.counts))
        if len(counts) == 1 and lower.size > 1:
            counts = counts * lower.size
        if lower.shape != upper.shape or len(counts) != lower.size:
            raise ConditionError(f"Grid bounds and counts disagree: {lower}, {upper}, {counts}")
        if np.any(lower >= upper):
            raise ConditionError(f"Grid needs lower < upper componentwise: {lower} / {upper}")
        if min(counts) < 2:
            raise ConditionError(f"Grid needs at least 2 samples per axis, got {counts}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "u_samples", tuple(as_vec(u, "u sample") for u in self.u_samples))

    @classmethod
    def parse(cls, text, u_samples=()):
        """Parses ``lo:hi:count`` per axis, comma-separated."""
        lower, upper, counts = [], [], []
        for axis in text.split(","):
            parts = axis.strip().split(":")
            if len(parts) != 3:
                raise ConditionError(f"Grid axis '{axis}' is not of the form lo:hi:count")
            try:
                lower.append(float(parts[0]))
                upper.append(float(parts[1]))
                counts.append(int(parts[2]))
            except ValueError as e:
                raise ConditionError(f"Grid axis '{axis}': {e}") from e
        return cls(np.array(lower), np.array(upper), tuple(counts), tuple(u_samples))

    @classmethod
    def over(cls, domain: Domain, count=101, u_samples=()):
        return cls(domain.lower, domain.upper, (count,) * domain.dimension, tuple(u_samples))

    @property
    def dimension(self):
        return self.lower.size

    def points(self):
        axes = [np.linspace(lo, hi, c) for lo, hi, c in zip(self.lower, self.upper, self.counts)]
        return [np.array(point) for point in itertools.product(*axes)]

    def describe(self):
        return ",".join(f"{lo:.17g}:{hi:.17g}:{c}" for lo, hi, c in zip(self.lower, self.upper, self.counts))

    def to_dict(self):
        return {
            'lower': self.lower.tolist(),
            'upper': self.upper.tolist(),
            'counts': list(self.counts),
            'u_samples': [u.tolist() for u in self.u_samples],
        }


def default_input_samples(m):
    """0 and the +/- unit basis vectors."""
    samples = [np.zeros(m)]
    for e in np.eye(m):
        samples.extend([e, -e])
    return samples


def _verdict(sense, values, tol):
    if sense == UPPER:
        worst = max(values)
        return PASS if worst <= -tol else BOUNDARY if worst <= tol else FAIL
    if sense == LOWER:
        worst = min(values)
        return PASS if worst >= tol else BOUNDARY if worst >= -tol else FAIL
    return PASS if max(values) <= tol else FAIL


@dataclass
class ConditionReport:
    condition_id: str
    sense: str
    tolerance: float
    sample_points: List[np.ndarray] = field(default_factory=list)
    sample_inputs: List[Optional[np.ndarray]] = field(default_factory=list)
    margins: List[float] = field(default_factory=list)
    residuals: List[float] = field(default_factory=list)
    worst_point: Optional[np.ndarray] = None
    worst_input: Optional[np.ndarray] = None
    verdict: str = FAIL
    grid: Optional[SampleGrid] = None
    failures: list = field(default_factory=list)

    @property
    def values(self):
        return self.residuals if self.sense == EQUALITY else self.margins

    @property
    def n_points(self):
        return len(self.values)

    @property
    def max_margin(self):
        return max(self.values)

    @property
    def min_margin(self):
        return min(self.values)

    def to_dict(self, include_points=False):
        data = {
            'condition_id': self.condition_id,
            'sense': self.sense,
            'tolerance': self.tolerance,
            'grid': self.grid.describe() if self.grid is not None else None,
            'n_points': self.n_points,
            'max_margin': self.max_margin,
            'min_margin': self.min_margin,
            'worst_point': self.worst_point.tolist() if self.worst_point is not None else None,
            'worst_input': self.worst_input.tolist() if self.worst_input is not None else None,
            'verdict': self.verdict,
            'failures': [{'index': i, 'point': p.tolist(), 'message': msg} for i, p, msg in self.failures],
        }
        if include_points:
            data['points'] = [p.tolist() for p in self.sample_points]
            data['values'] = list(self.values)
        return data

    def to_json(self, include_points=False):
        return json.dumps(self.to_dict(include_points), indent=2)

    def table(self):
        """Per-point rows (x..., u..., value) for a CSV sidecar."""
        rows = []
        for x, u, value in zip(self.sample_points, self.sample_inputs, self.values):
            u = np.zeros(0) if u is None else u
            rows.append(np.concatenate([x, u, [value]]))
        return np.array(rows)


def _evaluate_chunk(checker, chunk):
    results = []
    for index, x, u in chunk:
        try:
            results.append((index, x, u, float(checker.evaluate(x, u)), None))
        except (ModelError, LinalgError, StorageError, FloatingPointError) as e:
            results.append((index, x, u, None, str(e)))
    return results


def scan_region(checker: Checker, grid: SampleGrid, tol: Optional[float] = None, threads: Optional[int] = None,
                chunk_size: int = 256, max_failure_fraction: float = 0.01) -> ConditionReport:
    """Evaluates a checker on every grid point (and input sample) and aggregates a verdict."""
    tol = checker.tolerance if tol is None else tol
    if grid.dimension != checker.n:
        raise ConditionError(f"Grid of dimension {grid.dimension} for a condition on n = {checker.n}")
    if checker.domain is not None and not (checker.domain.contains(grid.lower) and checker.domain.contains(grid.upper)):
        logger.warning(f"Grid {grid.describe()} extends outside the declared domain "
                       f"{checker.domain.lower.tolist()}..{checker.domain.upper.tolist()} of {checker.condition_id}")

    if checker.uses_input:
        inputs = list(grid.u_samples) or default_input_samples(checker.m)
    else:
        inputs = [None]
    samples = [(x, u) for x in grid.points() for u in inputs]
    tasks = [(index, x, u) for index, (x, u) in enumerate(samples)]
    chunks = [tasks[i:i + chunk_size] for i in range(0, len(tasks), chunk_size)]

    threads = worker_count() if threads is None else max(1, threads)
    logger.debug(f"Scanning {checker.condition_id}: {len(tasks)} samples in {len(chunks)} chunks on {threads} workers")
    if threads == 1 or len(chunks) == 1:
        chunk_results = [_evaluate_chunk(checker, chunk) for chunk in chunks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as executor:
            chunk_results = list(executor.map(lambda chunk: _evaluate_chunk(checker, chunk), chunks))

    report = ConditionReport(checker.condition_id, checker.sense, tol, grid=grid)
    values = report.residuals if checker.sense == EQUALITY else report.margins
    for results in chunk_results:
        for index, x, u, value, error in results:
            if error is not None:
                logger.warning(f"{checker.condition_id}: evaluation failed at x={x}: {error}")
                report.failures.append((index, x, error))
                continue
            report.sample_points.append(x)
            report.sample_inputs.append(u)
            values.append(value)

    if len(report.failures) > max_failure_fraction * len(tasks) or not values:
        raise ReportInvalid(f"{checker.condition_id}: {len(report.failures)} of {len(tasks)} samples failed",
                            failures=report.failures)

    worst = int(np.argmin(values)) if checker.sense == LOWER else int(np.argmax(values))
    report.worst_point = report.sample_points[worst]
    report.worst_input = report.sample_inputs[worst]
    report.verdict = _verdict(checker.sense, values, tol)
    logger.info(f"{checker.condition_id}: {report.verdict} on {len(values)} samples "
                f"(max {max(values):.6g}, min {min(values):.6g}, worst x={report.worst_point.tolist()})")
    return report


def combine_verdicts(reports: Sequence[ConditionReport]) -> str:
    verdicts = {report.verdict for report in reports}
    if FAIL in verdicts:
        return FAIL
    if BOUNDARY in verdicts:
        return BOUNDARY
    return PASS


def contraction_rate(report: ConditionReport, bounds: StorageBounds) -> float:
    """Exponential decay rate of dS at du = 0 implied by a strictly passing contraction scan."""
    if report.sense != UPPER or report.verdict != PASS or bounds.c2 <= 0.0:
        return 0.0
    return -report.max_margin / (2.0 * bounds.c2)
