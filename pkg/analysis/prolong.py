"""Variational dynamics, the prolonged system and the gradient-system correction terms."""
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from linalg import ShapeError, as_vec
from models import ControlAffineSystem, GradientSystem

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ProlongedState:
    """Base state x together with its variation dx."""
    x: np.ndarray
    dx: np.ndarray

    def __post_init__(self):
        x = as_vec(self.x, "x")
        dx = as_vec(self.dx, "dx")
        if x.shape != dx.shape:
            raise ShapeError(f"x has dimension {x.size} but dx has dimension {dx.size}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "dx", dx)

    def stacked(self):
        return np.concatenate([self.x, self.dx])

    @classmethod
    def from_stacked(cls, z):
        half = len(z) // 2
        return cls(z[:half], z[half:])


class ProlongedRates(NamedTuple):
    xdot: np.ndarray
    dxdot: np.ndarray
    y: np.ndarray
    dy: np.ndarray


def _inputs(sys, u, du):
    return (np.asarray(u, dtype=float).reshape(sys.m),
            np.asarray(du, dtype=float).reshape(sys.m))


def variational_rhs(sys: ControlAffineSystem, x, u, dx, du):
    """dx' = (df/dx + d[g u]/dx) dx + g(x) du."""
    u, du = _inputs(sys, u, du)
    dx = np.asarray(dx, dtype=float).reshape(sys.n)
    return (sys.jacobian_f(x) + sys.jacobian_gu(x, u)) @ dx + sys.input_matrix(x) @ du


def prolonged_rhs(sys: ControlAffineSystem, ps: ProlongedState, u, du) -> ProlongedRates:
    u, du = _inputs(sys, u, du)
    x, dx = ps.x, ps.dx
    g = sys.input_matrix(x)
    xdot = sys.drift(x) + g @ u
    dxdot = (sys.jacobian_f(x) + sys.jacobian_gu(x, u)) @ dx + g @ du
    return ProlongedRates(xdot, dxdot, sys.output(x), sys.jacobian_h(x) @ dx)


def gamma_matrix(gs: GradientSystem, x, u):
    """Linear map dx -> Gamma dx; column j is -dQ_j(x) x'."""
    xdot = gs.velocity(x, u)
    dQ = gs.metric_derivatives(x)
    return -np.column_stack([dQ[j] @ xdot for j in range(gs.n)])


def gamma_term(gs: GradientSystem, x, u, dx):
    """-[sum_i dQ_i(x) dx_i] x', homogeneous of degree one in dx."""
    xdot = gs.velocity(x, u)
    dQ = gs.metric_derivatives(x)
    dx = np.asarray(dx, dtype=float).reshape(gs.n)
    return -np.tensordot(dx, dQ, axes=1) @ xdot


def omega_term(gs: GradientSystem, x, u):
    """sum_i dQ_i(x) x'_i, the rate of change of Q along the flow."""
    xdot = gs.velocity(x, u)
    return np.tensordot(xdot, gs.metric_derivatives(x), axes=1)
