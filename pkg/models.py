import logging
import threading
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from errors import DiffPassError
from linalg import (LinalgError, SingularMatrix, as_mat, as_vec, finite_diff_jacobian,
                    solve_linear)

logger = logging.getLogger(__name__)

ANALYTIC = "analytic"
FINITE_DIFFERENCE = "finite-difference"


class ModelError(DiffPassError):
    """Base class for exceptions in this module."""
    pass


class EvaluationError(ModelError):
    """Raised when a user evaluator fails; carries the state it was evaluated at."""

    def __init__(self, message, x=None, cause=None):
        super().__init__(message)
        self.x = x
        self.cause = cause


def _evaluate(label, fn, shape, x, *args):
    """Calls an evaluator and coerces the result to ``shape``, attaching x on failure."""
    try:
        value = np.asarray(fn(x, *args), dtype=float)
    except DiffPassError:
        raise
    except Exception as e:
        raise EvaluationError(f"{label} failed at x={x}: {e}", x=x, cause=e) from e
    try:
        value = value.reshape(shape)
    except ValueError as e:
        raise ModelError(f"{label} returned shape {value.shape}, expected {shape}") from e
    if not np.all(np.isfinite(value)):
        raise EvaluationError(f"{label} returned NaN/Inf at x={x}", x=x)
    return value


@dataclass(frozen=True, eq=False)
class Domain:
    """Closed box of the Euclidean chart a system is analysed on."""
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = as_vec(self.lower, "domain lower bound")
        upper = as_vec(self.upper, "domain upper bound")
        if lower.shape != upper.shape or np.any(lower >= upper):
            raise ModelError(f"Domain bounds must satisfy lower < upper componentwise: {lower} / {upper}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dimension(self):
        return self.lower.size

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def midpoint(self):
        return 0.5 * (self.lower + self.upper)

    def to_dict(self):
        return {'lower': self.lower.tolist(), 'upper': self.upper.tolist()}


@dataclass(frozen=True, eq=False)
class ControlAffineSystem:
    """x' = f(x) + g(x)u, y = h(x), with optional analytic Jacobians.

    Missing Jacobians (or ``jacobian_mode = "finite-difference"``) fall back to central
    differences so users never have to hand-derive them.
    """
    n: int
    m: int
    p: int
    f: Callable
    g: Callable
    h: Callable
    jac_f: Optional[Callable] = None
    jac_gu: Optional[Callable] = None
    jac_h: Optional[Callable] = None
    jacobian_mode: str = ANALYTIC
    domain: Optional[Domain] = None
    name: str = "system"
    fd_step: float = 1e-5

    def __post_init__(self):
        if self.jacobian_mode not in (ANALYTIC, FINITE_DIFFERENCE):
            raise ModelError(f"Unknown jacobian_mode '{self.jacobian_mode}'")
        if min(self.n, self.m, self.p) < 0:
            raise ModelError(f"Negative dimension in (n, m, p) = {(self.n, self.m, self.p)}")
        if self.domain is not None and self.domain.dimension != self.n:
            raise ModelError(f"Domain of dimension {self.domain.dimension} for a system with n = {self.n}")

    # --- evaluators -------------------------------------------------------

    def drift(self, x):
        return _evaluate(f"{self.name}.f", self.f, (self.n,), x)

    def input_matrix(self, x):
        return _evaluate(f"{self.name}.g", self.g, (self.n, self.m), x)

    def output(self, x):
        return _evaluate(f"{self.name}.h", self.h, (self.p,), x)

    def vector_field(self, x, u):
        return self.drift(x) + self.input_matrix(x) @ u

    def _analytic(self, jac):
        return jac is not None and self.jacobian_mode == ANALYTIC

    def jacobian_f(self, x):
        if self._analytic(self.jac_f):
            return _evaluate(f"{self.name}.jac_f", self.jac_f, (self.n, self.n), x)
        return self.fd_jacobian_f(x)

    def jacobian_gu(self, x, u):
        if self._analytic(self.jac_gu):
            return _evaluate(f"{self.name}.jac_gu", self.jac_gu, (self.n, self.n), x, u)
        return self.fd_jacobian_gu(x, u)

    def jacobian_h(self, x):
        if self._analytic(self.jac_h):
            return _evaluate(f"{self.name}.jac_h", self.jac_h, (self.p, self.n), x)
        return self.fd_jacobian_h(x)

    def fd_jacobian_f(self, x):
        return finite_diff_jacobian(self.drift, x, self.fd_step).reshape(self.n, self.n)

    def fd_jacobian_gu(self, x, u):
        u = np.asarray(u, dtype=float).reshape(self.m)
        return finite_diff_jacobian(lambda z: self.input_matrix(z) @ u, x, self.fd_step).reshape(self.n, self.n)

    def fd_jacobian_h(self, x):
        return finite_diff_jacobian(self.output, x, self.fd_step).reshape(self.p, self.n)

    def with_output(self, h, jac_h=None, p=None):
        """Same dynamics with a different output map."""
        return replace(self, h=h, jac_h=jac_h, p=self.p if p is None else p)

    def to_dict(self):
        return {
            'name': self.name,
            'n': self.n,
            'm': self.m,
            'p': self.p,
            'jacobian_mode': self.jacobian_mode,
            'domain': self.domain.to_dict() if self.domain else None,
        }


@dataclass(frozen=True, eq=False)
class GradientSystem:
    """Q(x) x' = -grad_V(x) + B u.

    For a general field Q(x) x' = A(x) + B u (``potential = False``) the constructor
    :meth:`from_field` stores grad_V = -A and hess_V = -dA/dx, so every consumer works
    with the single sign convention above. Q may be indefinite but must be invertible.
    """
    n: int
    m: int
    Q: Callable
    dQ: Callable
    grad_V: Callable
    hess_V: Callable
    B: np.ndarray
    potential: bool = True
    grad_q: Optional[Callable] = None
    domain: Optional[Domain] = None
    name: str = "gradient-system"

    def __post_init__(self):
        B = as_mat(self.B, "B")
        if B.shape != (self.n, self.m):
            raise ModelError(f"B has shape {B.shape}, expected {(self.n, self.m)}")
        object.__setattr__(self, "B", B)
        if self.domain is not None and self.domain.dimension != self.n:
            raise ModelError(f"Domain of dimension {self.domain.dimension} for a system with n = {self.n}")

    @classmethod
    def from_field(cls, n, m, Q, dQ, A, jac_A, B, **kwargs):
        """Builds Q(x) x' = A(x) + B u for a field A not derived from a potential."""
        return cls(n=n, m=m, Q=Q, dQ=dQ,
                   grad_V=lambda x: -np.asarray(A(x), dtype=float),
                   hess_V=lambda x: -np.asarray(jac_A(x), dtype=float),
                   B=B, potential=False, **kwargs)

    def metric(self, x):
        return _evaluate(f"{self.name}.Q", self.Q, (self.n, self.n), x)

    def metric_derivatives(self, x):
        """Stack of n matrices; entry i is dQ/dx_i."""
        return _evaluate(f"{self.name}.dQ", self.dQ, (self.n, self.n, self.n), x)

    def gradient(self, x):
        return _evaluate(f"{self.name}.grad_V", self.grad_V, (self.n,), x)

    def hessian(self, x):
        """Jacobian of grad_V (row j = d grad_V_j / dx)."""
        return _evaluate(f"{self.name}.hess_V", self.hess_V, (self.n, self.n), x)

    def q_gradient(self, x):
        if self.grad_q is None:
            raise ModelError(f"{self.name} has no grad_q; the QPQ output needs it")
        return _evaluate(f"{self.name}.grad_q", self.grad_q, (self.n,), x)

    def force(self, x, u):
        """Right-hand side -grad_V(x) + B u."""
        return -self.gradient(x) + self.B @ np.asarray(u, dtype=float).reshape(self.m)

    def velocity(self, x, u):
        """x' = Q(x)^-1 (-grad_V(x) + B u)."""
        return _solve_metric(self, x, self.force(x, u))

    def to_dict(self):
        return {
            'name': self.name,
            'n': self.n,
            'm': self.m,
            'potential': self.potential,
            'B': self.B.tolist(),
            'domain': self.domain.to_dict() if self.domain else None,
        }


@dataclass(frozen=True, eq=False)
class BraytonMoserSystem:
    """Mixed-potential model Q(z) z' = dp/dz + B u on z = (flows, efforts).

    Q(z) = blockdiag(-d2H*_f/df2, d2H*_e/de2). The third-derivative evaluators are
    optional; without them dQ is obtained by differencing the block Hessians.
    """
    nf: int
    ne: int
    hess_Hf: Callable
    hess_He: Callable
    grad_Hstar: Callable
    grad_p: Callable
    hess_p: Callable
    B: np.ndarray
    d_hess_Hf: Optional[Callable] = None
    d_hess_He: Optional[Callable] = None
    potential: bool = True
    domain: Optional[Domain] = None
    name: str = "brayton-moser"
    fd_step: float = 1e-5

    @property
    def n(self):
        return self.nf + self.ne

    def flow_block(self, z):
        return _evaluate(f"{self.name}.hess_Hf", self.hess_Hf, (self.nf, self.nf), np.asarray(z)[:self.nf])

    def effort_block(self, z):
        return _evaluate(f"{self.name}.hess_He", self.hess_He, (self.ne, self.ne), np.asarray(z)[self.nf:])

    def flow_block_derivatives(self, z):
        f = np.asarray(z, dtype=float)[:self.nf]
        if self.d_hess_Hf is not None:
            return _evaluate(f"{self.name}.d_hess_Hf", self.d_hess_Hf, (self.nf, self.nf, self.nf), f)
        return _block_derivatives(lambda w: self.flow_block(np.concatenate([w, np.zeros(self.ne)])),
                                  f, self.nf, self.fd_step)

    def effort_block_derivatives(self, z):
        e = np.asarray(z, dtype=float)[self.nf:]
        if self.d_hess_He is not None:
            return _evaluate(f"{self.name}.d_hess_He", self.d_hess_He, (self.ne, self.ne, self.ne), e)
        return _block_derivatives(lambda w: self.effort_block(np.concatenate([np.zeros(self.nf), w])),
                                  e, self.ne, self.fd_step)


def _block_derivatives(block, w, size, h_scale):
    flat = finite_diff_jacobian(lambda v: block(v).ravel(), w, h_scale)
    return np.stack([flat[:, i].reshape(size, size) for i in range(size)]) if size else np.zeros((0, 0, 0))


def _solve_metric(gs, x, rhs):
    try:
        return solve_linear(gs.metric(x), rhs).x
    except SingularMatrix as e:
        raise SingularMatrix(f"Q(x) is singular at x={x}: {e}", pivot=e.pivot, point=np.array(x)) from e


class _InverseMetric:
    """Q(x)^-1 and dQ(x) at the most recently requested state, memoized per thread.

    One RK4 stage asks for f, g and both Jacobians at the same x; they share a single
    factorization of Q(x).
    """

    def __init__(self, gs):
        self.gs = gs
        self._local = threading.local()

    def _entry(self, x):
        x = np.asarray(x, dtype=float)
        key = x.tobytes()
        local = self._local
        if getattr(local, 'key', None) != key:
            local.inverse = _solve_metric(self.gs, x, np.eye(self.gs.n))
            local.dQ = None
            local.key = key
        return local

    def inverse(self, x):
        return self._entry(x).inverse

    def derivatives(self, x):
        local = self._entry(x)
        if local.dQ is None:
            local.dQ = self.gs.metric_derivatives(x)
        return local.dQ


def gradient_to_affine(gs: GradientSystem, h=None, jac_h=None, p=None) -> ControlAffineSystem:
    """f(x) = -Q(x)^-1 grad_V(x), g(x) = Q(x)^-1 B, with analytic Jacobians.

    d(Q^-1)/dx_i = -Q^-1 dQ_i Q^-1 gives
        df/dx_i      = -Q^-1 (hess_V e_i + dQ_i f)
        d[g u]/dx_i  = -Q^-1 dQ_i g u
    The output defaults to y = B^T x. A custom ``h`` without ``jac_h`` gets a
    finite-difference output Jacobian; f and g keep their analytic ones.
    """
    metric = _InverseMetric(gs)

    def f(x):
        return metric.inverse(x) @ -gs.gradient(x)

    def g(x):
        return metric.inverse(x) @ gs.B

    def jac_f(x):
        Q_inv = metric.inverse(x)
        drift = Q_inv @ -gs.gradient(x)
        coupling = (metric.derivatives(x) @ drift).T
        return Q_inv @ (-gs.hessian(x) - coupling)

    def jac_gu(x, u):
        Q_inv = metric.inverse(x)
        gu = Q_inv @ (gs.B @ np.asarray(u, dtype=float).reshape(gs.m))
        return -Q_inv @ (metric.derivatives(x) @ gu).T

    if h is None:
        h = lambda x: gs.B.T @ np.asarray(x, dtype=float)
        jac_h = lambda x: gs.B.T
        p = gs.m
    elif jac_h is None:
        logger.debug(f"{gs.name}: no jac_h for the custom output, using central differences for it")

    logger.debug(f"Converted gradient system '{gs.name}' to control-affine form")
    return ControlAffineSystem(n=gs.n, m=gs.m, p=gs.m if p is None else p, f=f, g=g, h=h,
                               jac_f=jac_f, jac_gu=jac_gu, jac_h=jac_h,
                               domain=gs.domain, name=gs.name)


def brayton_to_gradient(bm: BraytonMoserSystem) -> GradientSystem:
    """Q(z) = blockdiag(-H*_f'', H*_e''), grad_V = -grad_p so that Q z' = dp/dz + B u."""
    n, nf = bm.n, bm.nf
    B = as_mat(bm.B, "B")
    if B.shape[0] != n:
        raise ModelError(f"B has {B.shape[0]} rows but the state has {n} = {bm.nf} + {bm.ne} components")

    sample = bm.domain.midpoint() if bm.domain is not None else np.zeros(n)
    for label, fn, shape in (("grad_p", bm.grad_p, (n,)), ("hess_p", bm.hess_p, (n, n))):
        value = np.asarray(fn(sample), dtype=float)
        if value.size != int(np.prod(shape)):
            raise ModelError(f"{bm.name}.{label} returned {value.size} entries, expected shape {shape}")

    def Q(z):
        block = np.zeros((n, n))
        block[:nf, :nf] = -bm.flow_block(z)
        block[nf:, nf:] = bm.effort_block(z)
        return block

    def dQ(z):
        stack = np.zeros((n, n, n))
        if nf:
            stack[:nf, :nf, :nf] = -bm.flow_block_derivatives(z)
        if bm.ne:
            stack[nf:, nf:, nf:] = bm.effort_block_derivatives(z)
        return stack

    def grad_q(z):
        # q = -H*_f + H*_e, so Q is its Hessian
        grad = np.asarray(bm.grad_Hstar(z), dtype=float).reshape(n).copy()
        grad[:nf] = -grad[:nf]
        return grad

    return GradientSystem(n=n, m=B.shape[1], Q=Q, dQ=dQ,
                          grad_V=lambda z: -np.asarray(bm.grad_p(z), dtype=float),
                          hess_V=lambda z: -np.asarray(bm.hess_p(z), dtype=float),
                          B=B, potential=bm.potential, grad_q=grad_q,
                          domain=bm.domain, name=bm.name)


def brayton_output(bm: BraytonMoserSystem) -> ControlAffineSystem:
    """Affine form with the passivating output y = B^T dq/dz, q = -H*_f + H*_e (dy = B^T Q dz)."""
    gs = brayton_to_gradient(bm)
    return gradient_to_affine(gs, h=lambda z: gs.B.T @ gs.q_gradient(z),
                              jac_h=lambda z: gs.B.T @ gs.metric(z), p=gs.m)


@dataclass
class ValidationReport:
    """Analytic-vs-finite-difference Jacobian comparison over sample points."""
    system: str
    tolerance: float
    max_mismatch: dict = field(default_factory=lambda: {'jac_f': 0.0, 'jac_gu': 0.0, 'jac_h': 0.0})
    worst_points: dict = field(default_factory=dict)
    failures: List[Tuple[int, str]] = field(default_factory=list)
    n_points: int = 0
    vacuous: bool = False

    @property
    def passed(self):
        return all(value <= self.tolerance for value in self.max_mismatch.values())

    def to_dict(self):
        return {
            'system': self.system,
            'tolerance': self.tolerance,
            'n_points': self.n_points,
            'max_mismatch': dict(self.max_mismatch),
            'worst_points': {k: np.asarray(v).tolist() for k, v in self.worst_points.items()},
            'failures': [{'index': i, 'message': msg} for i, msg in self.failures],
            'vacuous': self.vacuous,
            'passed': self.passed,
        }


def _relative_mismatch(analytic, numeric):
    return float(np.max(np.abs(analytic - numeric), initial=0.0) / max(1.0, np.max(np.abs(numeric), initial=0.0)))


def validate_model(sys: ControlAffineSystem, sample_points: Sequence[Tuple[np.ndarray, np.ndarray]],
                   tolerance: float = 1e-4) -> ValidationReport:
    """Compares analytic jac_f, jac_gu, jac_h against central differences at (x, u) samples."""
    report = ValidationReport(system=sys.name, tolerance=tolerance, n_points=len(sample_points))
    if sys.jacobian_mode == FINITE_DIFFERENCE:
        report.vacuous = True
        logger.info(f"{sys.name}: finite-difference Jacobians, validation is a self-comparison")
        return report

    for index, (x, u) in enumerate(sample_points):
        x = as_vec(x, "x")
        u = np.asarray(u, dtype=float).reshape(sys.m)
        try:
            pairs = {
                'jac_f': (sys.jacobian_f(x), sys.fd_jacobian_f(x)),
                'jac_gu': (sys.jacobian_gu(x, u), sys.fd_jacobian_gu(x, u)),
                'jac_h': (sys.jacobian_h(x), sys.fd_jacobian_h(x)),
            }
        except (ModelError, LinalgError) as e:
            logger.warning(f"{sys.name}: evaluator failure at sample {index} (x={x}): {e}")
            report.failures.append((index, str(e)))
            continue
        for key, (analytic, numeric) in pairs.items():
            mismatch = _relative_mismatch(analytic, numeric)
            if mismatch > report.max_mismatch[key]:
                report.max_mismatch[key] = mismatch
                report.worst_points[key] = x

    level = logging.INFO if report.passed else logging.WARNING
    logger.log(level, f"Validated {sys.name} on {len(sample_points)} points: {report.max_mismatch}")
    return report


@dataclass
class GradientValidation:
    """Structural checks of a GradientSystem at sample points."""
    max_asymmetry_Q: float = 0.0
    max_asymmetry_hess: float = 0.0
    max_condition_Q: float = 0.0
    max_dQ_mismatch: float = 0.0
    failures: List[Tuple[int, str]] = field(default_factory=list)

    def passed(self, symmetry_tol=1e-10, hess_tol=1e-8, dq_tol=1e-5):
        return (self.max_asymmetry_Q <= symmetry_tol and self.max_asymmetry_hess <= hess_tol
                and self.max_dQ_mismatch <= dq_tol and not self.failures)


def validate_gradient_system(gs: GradientSystem, points, h_scale: float = 1e-5) -> GradientValidation:
    """Q symmetric and invertible, hess_V symmetric (potential case), dQ consistent with Q."""
    result = GradientValidation()
    for index, x in enumerate(points):
        x = as_vec(x, "x")
        try:
            Q = gs.metric(x)
            result.max_asymmetry_Q = max(result.max_asymmetry_Q, float(np.max(np.abs(Q - Q.T))))
            condition = solve_linear(Q, np.zeros(gs.n), estimate_condition=True).condition
            result.max_condition_Q = max(result.max_condition_Q, condition)
            if gs.potential:
                H = gs.hessian(x)
                result.max_asymmetry_hess = max(result.max_asymmetry_hess, float(np.max(np.abs(H - H.T))))
            declared = gs.metric_derivatives(x)
            flat = finite_diff_jacobian(lambda z: gs.metric(z).ravel(), x, h_scale)
            for i in range(gs.n):
                numeric = flat[:, i].reshape(gs.n, gs.n)
                result.max_dQ_mismatch = max(result.max_dQ_mismatch,
                                             _relative_mismatch(declared[i], numeric))
        except (ModelError, LinalgError) as e:
            logger.warning(f"{gs.name}: structural check failed at sample {index} (x={x}): {e}")
            result.failures.append((index, str(e)))
    return result
