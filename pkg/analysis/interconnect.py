"""Negative-feedback interconnection u1 = -y2 + v1, u2 = y1 + v2 and its summed storage."""
import logging

import numpy as np

from errors import DiffPassError
from models import ANALYTIC, ControlAffineSystem, Domain
from analysis.storage import CUSTOM, POSITIVE_DEFINITE, POSITIVE_SEMIDEFINITE, QuadraticStorage

logger = logging.getLogger(__name__)


class InterconnectError(DiffPassError):
    """Raised when the subsystems' input and output dimensions do not match."""
    pass


def _block_diag(a, b):
    out = np.zeros((a.shape[0] + b.shape[0], a.shape[1] + b.shape[1]))
    out[:a.shape[0], :a.shape[1]] = a
    out[a.shape[0]:, a.shape[1]:] = b
    return out


def feedback(sys1: ControlAffineSystem, sys2: ControlAffineSystem) -> ControlAffineSystem:
    """Composite system on (x1, x2) with input v = (v1, v2) and output y = (y1, y2)."""
    if sys1.m != sys2.p or sys2.m != sys1.p:
        raise InterconnectError(f"Cannot interconnect {sys1.name} (m={sys1.m}, p={sys1.p}) "
                                f"with {sys2.name} (m={sys2.m}, p={sys2.p})")
    n1, n2 = sys1.n, sys2.n

    def split(x):
        x = np.asarray(x, dtype=float)
        return x[:n1], x[n1:]

    def f(x):
        x1, x2 = split(x)
        return np.concatenate([sys1.drift(x1) - sys1.input_matrix(x1) @ sys2.output(x2),
                               sys2.drift(x2) + sys2.input_matrix(x2) @ sys1.output(x1)])

    def g(x):
        x1, x2 = split(x)
        return _block_diag(sys1.input_matrix(x1), sys2.input_matrix(x2))

    def h(x):
        x1, x2 = split(x)
        return np.concatenate([sys1.output(x1), sys2.output(x2)])

    def jac_f(x):
        x1, x2 = split(x)
        y1, y2 = sys1.output(x1), sys2.output(x2)
        J = np.zeros((n1 + n2, n1 + n2))
        J[:n1, :n1] = sys1.jacobian_f(x1) - sys1.jacobian_gu(x1, y2)
        J[:n1, n1:] = -sys1.input_matrix(x1) @ sys2.jacobian_h(x2)
        J[n1:, :n1] = sys2.input_matrix(x2) @ sys1.jacobian_h(x1)
        J[n1:, n1:] = sys2.jacobian_f(x2) + sys2.jacobian_gu(x2, y1)
        return J

    def jac_gu(x, v):
        x1, x2 = split(x)
        v = np.asarray(v, dtype=float)
        return _block_diag(sys1.jacobian_gu(x1, v[:sys1.m]), sys2.jacobian_gu(x2, v[sys1.m:]))

    def jac_h(x):
        x1, x2 = split(x)
        return _block_diag(sys1.jacobian_h(x1), sys2.jacobian_h(x2))

    domain = None
    if sys1.domain is not None and sys2.domain is not None:
        domain = Domain(np.concatenate([sys1.domain.lower, sys2.domain.lower]),
                        np.concatenate([sys1.domain.upper, sys2.domain.upper]))

    logger.debug(f"Interconnected {sys1.name} and {sys2.name} in negative feedback")
    return ControlAffineSystem(n=n1 + n2, m=sys1.m + sys2.m, p=sys1.p + sys2.p, f=f, g=g, h=h,
                               jac_f=jac_f, jac_gu=jac_gu, jac_h=jac_h, jacobian_mode=ANALYTIC,
                               domain=domain, name=f"feedback({sys1.name},{sys2.name})")


def sum_storage(st1: QuadraticStorage, st2: QuadraticStorage) -> QuadraticStorage:
    """dS = dS1 + dS2, i.e. M = blockdiag(M1(x1), M2(x2))."""
    n1, n2 = st1.n, st2.n
    n = n1 + n2

    def M(x):
        x = np.asarray(x, dtype=float)
        return _block_diag(st1.matrix(x[:n1]), st2.matrix(x[n1:]))

    def dM(x):
        x = np.asarray(x, dtype=float)
        stack = np.zeros((n, n, n))
        stack[:n1, :n1, :n1] = st1.derivatives(x[:n1])
        stack[n1:, n1:, n1:] = st2.derivatives(x[n1:])
        return stack

    both_definite = st1.definiteness == st2.definiteness == POSITIVE_DEFINITE
    definiteness = POSITIVE_DEFINITE if both_definite else POSITIVE_SEMIDEFINITE
    provenance = st1.provenance if st1.provenance == st2.provenance else CUSTOM
    return QuadraticStorage(n, M, dM, definiteness, provenance, f"{st1.name}+{st2.name}")


def supply_cancellation(dy, dv, p1):
    """Max pointwise gap between the subsystem supplies dy1.du1 + dy2.du2 and dy1.dv1 + dy2.dv2.

    ``dy`` and ``dv`` are (samples, p1 + p2) arrays from a composite trajectory whose
    subsystems have as many outputs as inputs.
    """
    dy = np.atleast_2d(np.asarray(dy, dtype=float))
    dv = np.atleast_2d(np.asarray(dv, dtype=float))
    dy1, dy2 = dy[:, :p1], dy[:, p1:]
    dv1, dv2 = dv[:, :dy2.shape[1]], dv[:, dy2.shape[1]:]
    du1 = -dy2 + dv1
    du2 = dy1 + dv2
    internal = np.sum(dy1 * du1, axis=1) + np.sum(dy2 * du2, axis=1)
    external = np.sum(dy1 * dv1, axis=1) + np.sum(dy2 * dv2, axis=1)
    return float(np.max(np.abs(internal - external), initial=0.0))
