"""Quadratic differential storages dS = 1/2 dx^T M(x) dx.

The factor 1/2 is used everywhere. Storages that some derivations write without it
differ by a uniform rescaling, which changes no sign condition.
"""
import itertools
import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from errors import DiffPassError
from linalg import as_mat, as_vec, sym_eig_bounds
from models import ControlAffineSystem, Domain, GradientSystem, gradient_to_affine
from analysis.prolong import variational_rhs

logger = logging.getLogger(__name__)

POSITIVE_DEFINITE = "positive-definite"
POSITIVE_SEMIDEFINITE = "positive-semidefinite"

CONSTANT_P = "constant-P"
NATURAL_Q = "natural-Q"
QPQ = "QPQ"
CUSTOM = "custom"

SYMMETRY_TOLERANCE = 1e-10


class StorageError(DiffPassError):
    """Base class for exceptions in this module."""
    pass


class InvalidP(StorageError):
    """Raised when the constant weight P is asymmetric or indefinite."""
    pass


class NotAMetric(StorageError):
    """Raised when Q(x) is not positive-definite at a sampled point."""

    def __init__(self, message, x=None, lambda_min=None):
        super().__init__(message)
        self.x = x
        self.lambda_min = lambda_min


@dataclass(frozen=True, eq=False)
class QuadraticStorage:
    n: int
    M: Callable
    dM: Callable
    definiteness: str = POSITIVE_DEFINITE
    provenance: str = CUSTOM
    name: str = "storage"

    def matrix(self, x):
        value = np.asarray(self.M(x), dtype=float).reshape(self.n, self.n)
        if not np.all(np.isfinite(value)):
            raise StorageError(f"{self.name}: M(x) is not finite at x={x}")
        return value

    def derivatives(self, x):
        """Stack of n matrices; entry i is dM/dx_i."""
        return np.asarray(self.dM(x), dtype=float).reshape(self.n, self.n, self.n)

    def scaled(self, c):
        return QuadraticStorage(self.n, lambda x: c * self.matrix(x), lambda x: c * self.derivatives(x),
                                self.definiteness, self.provenance, f"{c}*{self.name}")

    def to_dict(self):
        return {
            'name': self.name,
            'n': self.n,
            'definiteness': self.definiteness,
            'provenance': self.provenance,
            'normalization': 'dS = 1/2 dx^T M(x) dx',
        }


class StorageBounds(NamedTuple):
    c1: float
    c2: float


def eval_storage(st: QuadraticStorage, x, dx) -> float:
    dx = np.asarray(dx, dtype=float).reshape(st.n)
    value = 0.5 * float(dx @ st.matrix(x) @ dx)
    if not np.isfinite(value):
        raise StorageError(f"{st.name}: storage evaluated to {value} at x={x}")
    return value


def storage_rate(st: QuadraticStorage, sys: ControlAffineSystem, x, u, dx, du) -> float:
    """d/dt dS along the prolonged flow."""
    dx = np.asarray(dx, dtype=float).reshape(st.n)
    u = np.asarray(u, dtype=float).reshape(sys.m)
    xdot = sys.vector_field(x, u)
    metric_rate = np.tensordot(xdot, st.derivatives(x), axes=1)
    return float(dx @ st.matrix(x) @ variational_rhs(sys, x, u, dx, du) + 0.5 * dx @ metric_rate @ dx)


def _check_weight(P, n):
    try:
        P = as_mat(P, "P")
    except DiffPassError as e:
        raise InvalidP(str(e)) from e
    if P.shape != (n, n):
        raise InvalidP(f"P has shape {P.shape}, expected {(n, n)}")
    bounds = sym_eig_bounds(P)
    if bounds.asymmetry > SYMMETRY_TOLERANCE:
        raise InvalidP(f"P is not symmetric (||P - P^T|| = {bounds.asymmetry:.3e})")
    if bounds.lambda_min < -SYMMETRY_TOLERANCE:
        raise InvalidP(f"P is indefinite (lambda_min = {bounds.lambda_min:.3e})")
    return P, bounds


def constant_storage(P, name="constant-P") -> QuadraticStorage:
    P, bounds = _check_weight(P, as_mat(P).shape[0])
    n = P.shape[0]
    definiteness = POSITIVE_DEFINITE if bounds.lambda_min > SYMMETRY_TOLERANCE else POSITIVE_SEMIDEFINITE
    return QuadraticStorage(n, lambda x: P, lambda x: np.zeros((n, n, n)), definiteness, CONSTANT_P, name)


def make_qpq_storage(gs: GradientSystem, P) -> QuadraticStorage:
    """M(x) = Q(x) P Q(x); positive-definite when P is, because Q is invertible."""
    P, bounds = _check_weight(P, gs.n)

    def M(x):
        Q = gs.metric(x)
        return Q @ P @ Q

    def dM(x):
        Q = gs.metric(x)
        dQ = gs.metric_derivatives(x)
        return np.stack([dQ[i] @ P @ Q + Q @ P @ dQ[i] for i in range(gs.n)])

    definiteness = POSITIVE_DEFINITE if bounds.lambda_min > SYMMETRY_TOLERANCE else POSITIVE_SEMIDEFINITE
    return QuadraticStorage(gs.n, M, dM, definiteness, QPQ, f"qpq({gs.name})")


def domain_samples(domain: Optional[Domain], n, per_axis=11, limit=4096):
    """Tensor grid over the domain (the origin when no domain is declared)."""
    if domain is None:
        return [np.zeros(n)]
    per_axis = max(2, min(per_axis, int(limit ** (1.0 / n))))
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in zip(domain.lower, domain.upper)]
    return [np.array(point) for point in itertools.product(*axes)]


def natural_storage(gs: GradientSystem, points=None) -> QuadraticStorage:
    """M = Q; only valid where Q is a true Riemannian metric."""
    points = domain_samples(gs.domain, gs.n) if points is None else points
    for x in points:
        lambda_min = sym_eig_bounds(gs.metric(x)).lambda_min
        if lambda_min <= 0.0:
            raise NotAMetric(f"Q is not positive-definite at x={x} (lambda_min = {lambda_min:.3e})",
                             x=np.asarray(x), lambda_min=lambda_min)
    logger.debug(f"Q of {gs.name} positive-definite on {len(points)} sample points")
    return QuadraticStorage(gs.n, gs.metric, gs.metric_derivatives, POSITIVE_DEFINITE, NATURAL_Q,
                            f"natural({gs.name})")


def storage_bounds(st: QuadraticStorage, points) -> StorageBounds:
    """c1 |dx|^2 <= dS <= c2 |dx|^2 over the sampled points."""
    lows, highs = [], []
    for x in points:
        bounds = sym_eig_bounds(st.matrix(x))
        lows.append(bounds.lambda_min)
        highs.append(bounds.lambda_max)
    c1, c2 = 0.5 * min(lows), 0.5 * max(highs)
    if st.definiteness == POSITIVE_DEFINITE and c1 <= 0.0:
        logger.warning(f"{st.name} is declared positive-definite but lambda_min = {2 * c1:.3e}")
    return StorageBounds(c1, c2)


def qpq_output(gs: GradientSystem, P, C=None) -> ControlAffineSystem:
    """Affine form with y = C grad_q(x), C defaulting to (P B)^T, so dy = C Q(x) dx."""
    P, _ = _check_weight(P, gs.n)
    C = (P @ gs.B).T if C is None else as_mat(C, "C")
    if C.shape[1] != gs.n:
        raise StorageError(f"C has {C.shape[1]} columns, expected {gs.n}")
    return gradient_to_affine(gs, h=lambda x: C @ gs.q_gradient(x),
                              jac_h=lambda x: C @ gs.metric(x), p=C.shape[0])


def natural_output(gs: GradientSystem) -> ControlAffineSystem:
    """Affine form with y = B^T x."""
    return gradient_to_affine(gs)


def spot_check(st: QuadraticStorage, points):
    """Smallest eigenvalue and largest asymmetry of M over the points."""
    lambda_min, asymmetry = np.inf, 0.0
    for x in points:
        x = as_vec(x, "x")
        bounds = sym_eig_bounds(st.matrix(x))
        lambda_min = min(lambda_min, bounds.lambda_min)
        asymmetry = max(asymmetry, bounds.asymmetry)
    return lambda_min, asymmetry
