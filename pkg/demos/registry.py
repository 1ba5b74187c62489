"""Bundled example systems and the name registry the CLI exposes."""
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional

import numpy as np

from errors import DiffPassError
from linalg import as_mat, as_vec, sym_eig_bounds
from models import ANALYTIC, BraytonMoserSystem, ControlAffineSystem, Domain, GradientSystem
from analysis.conditions import SampleGrid, rigid_body_checker, scan_region, PASS
from analysis.storage import (QuadraticStorage, constant_storage, make_qpq_storage, qpq_output,
                              POSITIVE_DEFINITE, CUSTOM)
from simulation.signals import Const, SignalExpr, add, multiply

logger = logging.getLogger(__name__)

EDGE = 0.01


class ExampleError(DiffPassError):
    """Base class for exceptions in this module."""
    pass


class InvalidInertia(ExampleError):
    """Raised when the principal inertias are not strictly ordered I1 > I2 > I3."""
    pass


class InvalidFixture(ExampleError):
    """Raised when a linear fixture violates A^T P + P A <= 0."""
    pass


class UnknownSystem(ExampleError):
    """Raised for a name that is not in the registry."""
    pass


class OscillatorModel(NamedTuple):
    system: ControlAffineSystem
    storage: QuadraticStorage
    output: Callable
    domain: Domain
    gradient: Optional[GradientSystem] = None


# --- oscillators on the circle chart --------------------------------------

def _oscillator_a():
    domain = Domain([-np.pi / 2 + EDGE], [np.pi / 2 - EDGE])
    output = lambda x: np.asarray(x, dtype=float)
    system = ControlAffineSystem(
        n=1, m=1, p=1,
        f=lambda x: -np.sin(x),
        g=lambda x: np.ones((1, 1)),
        h=output,
        jac_f=lambda x: -np.cos(x),
        jac_gu=lambda x, u: np.zeros((1, 1)),
        jac_h=lambda x: np.ones((1, 1)),
        domain=domain, name="osc-a")
    storage = constant_storage(np.ones((1, 1)), name="unit")
    return OscillatorModel(system, storage, output, domain)


def oscillator_b_output(x):
    """Integral of cos(z/2)/(1+cos z) from 0 to x, i.e. 2 artanh(tan(x/4))."""
    return 2.0 * np.arctanh(np.tan(np.asarray(x, dtype=float) / 4.0))


def _oscillator_b(unit_input=False):
    domain = Domain([-np.pi + EDGE], [np.pi - EDGE])
    if unit_input:
        g = lambda x: np.ones((1, 1))
        jac_gu = lambda x, u: np.zeros((1, 1))
    else:
        g = lambda x: np.cos(np.asarray(x) / 2.0).reshape(1, 1)
        jac_gu = lambda x, u: (-0.5 * np.sin(np.asarray(x) / 2.0) * u).reshape(1, 1)
    system = ControlAffineSystem(
        n=1, m=1, p=1,
        f=lambda x: -np.sin(x),
        g=g,
        h=oscillator_b_output,
        jac_f=lambda x: -np.cos(x),
        jac_gu=jac_gu,
        jac_h=lambda x: (0.5 / np.cos(np.asarray(x) / 2.0)).reshape(1, 1),
        domain=domain, name="osc-b-unit-input" if unit_input else "osc-b")
    storage = QuadraticStorage(
        1,
        # 1 + cos x = 2 cos^2(x/2), evaluated in the half-angle form
        M=lambda x: (0.5 / np.cos(np.asarray(x) / 2.0) ** 2).reshape(1, 1),
        dM=lambda x: (0.25 * np.sin(x) / np.cos(np.asarray(x) / 2.0) ** 4).reshape(1, 1, 1),
        definiteness=POSITIVE_DEFINITE, provenance=CUSTOM, name="custom-mB")
    return OscillatorModel(system, storage, oscillator_b_output, domain)


def oscillator_c_gradient():
    """Q(x) = 1/cos(x/2), V(x) = -4 cos(x/2), B = 1."""
    domain = Domain([-np.pi + EDGE], [np.pi - EDGE])
    return GradientSystem(
        n=1, m=1,
        Q=lambda x: (1.0 / np.cos(np.asarray(x) / 2.0)).reshape(1, 1),
        dQ=lambda x: (0.5 * np.tan(np.asarray(x) / 2.0) / np.cos(np.asarray(x) / 2.0)).reshape(1, 1, 1),
        grad_V=lambda x: 2.0 * np.sin(np.asarray(x) / 2.0),
        hess_V=lambda x: np.cos(np.asarray(x) / 2.0).reshape(1, 1),
        B=np.ones((1, 1)),
        grad_q=lambda x: 4.0 * np.arctanh(np.tan(np.asarray(x) / 4.0)),
        domain=domain, name="osc-c")


def _oscillator_c():
    gs = oscillator_c_gradient()
    system = qpq_output(gs, np.ones((1, 1)))
    storage = make_qpq_storage(gs, np.ones((1, 1)))
    return OscillatorModel(system, storage, system.h, gs.domain, gs)


def oscillator(variant: str, unit_input: bool = False) -> OscillatorModel:
    """Pendulum-like dynamics x' = -sin x + g(x) u in three passivating set-ups.

    A: constant metric, g = 1, y = x; differentially passive only where cos x >= 0.
    B: metric 1/(1 + cos x) with g = cos(x/2) (``unit_input`` keeps g = 1, which breaks
       the Killing condition).
    C: the gradient form 1/cos(x/2) x' = -2 sin(x/2) + u with the QPQ storage, P = 1.
    """
    variant = variant.upper()
    if variant == 'A':
        return _oscillator_a()
    if variant == 'B':
        return _oscillator_b(unit_input)
    if variant == 'C':
        return _oscillator_c()
    raise UnknownSystem(f"Unknown oscillator variant '{variant}'")


# --- nonlinear RC circuit ---------------------------------------------------

class CircuitModel(NamedTuple):
    gradient: GradientSystem
    storage: QuadraticStorage
    output: ControlAffineSystem


def rc_circuit() -> CircuitModel:
    """Q(v) v' = -R(v) + i with R(v) = v^5 and capacitance 1/(1+v), for v in [0, 10]."""
    domain = Domain([0.0], [10.0])
    gs = GradientSystem.from_field(
        n=1, m=1,
        Q=lambda v: (1.0 / (1.0 + np.asarray(v))).reshape(1, 1),
        dQ=lambda v: (-1.0 / (1.0 + np.asarray(v)) ** 2).reshape(1, 1, 1),
        A=lambda v: -np.asarray(v) ** 5,
        jac_A=lambda v: (-5.0 * np.asarray(v) ** 4).reshape(1, 1),
        B=np.ones((1, 1)),
        grad_q=lambda v: np.log1p(np.asarray(v, dtype=float)),
        domain=domain, name="rc")
    storage = make_qpq_storage(gs, np.ones((1, 1)))
    return CircuitModel(gs, storage, qpq_output(gs, np.ones((1, 1))))


def rc_brayton_moser() -> BraytonMoserSystem:
    """The same circuit as a mixed-potential model with p(v) = -v^6/6 and no inductors."""
    return BraytonMoserSystem(
        nf=0, ne=1,
        hess_Hf=lambda f: np.zeros((0, 0)),
        hess_He=lambda e: (1.0 / (1.0 + np.asarray(e))).reshape(1, 1),
        grad_Hstar=lambda z: np.log1p(np.asarray(z, dtype=float)),
        grad_p=lambda z: -np.asarray(z, dtype=float) ** 5,
        hess_p=lambda z: (-5.0 * np.asarray(z, dtype=float) ** 4).reshape(1, 1),
        B=np.ones((1, 1)),
        d_hess_He=lambda e: (-1.0 / (1.0 + np.asarray(e)) ** 2).reshape(1, 1, 1),
        domain=Domain([0.0], [10.0]), name="rc-brayton-moser")


# --- rigid body ------------------------------------------------------------

class TrackingSetup(NamedTuple):
    system: ControlAffineSystem
    storage: QuadraticStorage
    signal: list


@dataclass
class RigidBodyModel:
    open_loop: GradientSystem
    closed_loop: GradientSystem
    storage: QuadraticStorage
    inertia: np.ndarray
    r: np.ndarray
    G: np.ndarray
    P: np.ndarray
    closed_loop_system: ControlAffineSystem = field(repr=False, default=None)

    def tracking_input(self, d: SignalExpr, variant: str = "base", gain: float = 0.5) -> TrackingSetup:
        """Reference input for omega_1 to follow d(t).

        ``base``:     v = r1 d + d'
        ``feedback``: v = -gain y + (r1 + gain) d + d', realized by folding -gain y into the loop.
        """
        r1 = float(self.r[0])
        if variant == "base":
            signal = add(multiply(Const(r1), d), d.derivative())
            return TrackingSetup(self.closed_loop_system, self.storage, [signal])
        if variant == "feedback":
            signal = add(multiply(Const(r1 + gain), d), d.derivative())
            gs = _rigid_body_closed_loop(self.inertia, self.r, self.G, output_gain=gain)
            return TrackingSetup(qpq_output(gs, self.P), self.storage, [signal])
        raise ExampleError(f"Unknown tracking variant '{variant}'")


RIGID_BODY_DOMAIN = Domain([-5.0, -0.25, -0.25], [5.0, 0.25, 0.25])


def _rigid_body_metric(inertia):
    I1, I2, I3 = inertia
    return np.diag([I1 / (I2 - I3), I2 / (I3 - I1), I3 / (I1 - I2)])


def _momentum_gradient(omega):
    w1, w2, w3 = np.asarray(omega, dtype=float)
    return np.array([w2 * w3, w1 * w3, w1 * w2])


def _momentum_hessian(omega):
    w1, w2, w3 = np.asarray(omega, dtype=float)
    return np.array([[0.0, w3, w2], [w3, 0.0, w1], [w2, w1, 0.0]])


def _check_inertia(inertia):
    inertia = as_vec(inertia, "inertia")
    if inertia.size != 3 or not (inertia[0] > inertia[1] > inertia[2] > 0.0):
        raise InvalidInertia(f"Principal inertias must satisfy I1 > I2 > I3 > 0, got {inertia.tolist()}")
    return inertia


def _rigid_body_closed_loop(inertia, r, G, output_gain=0.0):
    Q = _rigid_body_metric(inertia)
    damping = np.diag(r) + output_gain * (G @ G.T)
    return GradientSystem.from_field(
        n=3, m=G.shape[1],
        Q=lambda w: Q,
        dQ=lambda w: np.zeros((3, 3, 3)),
        A=lambda w: _momentum_gradient(w) - Q @ damping @ np.asarray(w, dtype=float),
        jac_A=lambda w: _momentum_hessian(w) - Q @ damping,
        B=Q @ G,
        grad_q=lambda w: Q @ np.asarray(w, dtype=float),
        domain=RIGID_BODY_DOMAIN, name="rigid-body" if output_gain == 0.0 else "rigid-body-feedback")


def rigid_body(inertia=(3.0, 2.0, 1.0), r=(0.2, 0.2, 0.2), G=None) -> RigidBodyModel:
    """Euler equations in gradient form Q w' = dp/dw + Qt^-1 u with p = w1 w2 w3.

    The feedback u = I(-r w + G v) gives Q w' = dp/dw - Q r w + Q G v. With P = Q^-2 the
    QPQ storage is the identity metric and the passivating output is y = G^T w.
    """
    inertia = _check_inertia(inertia)
    r = as_vec(r, "r")
    G = np.array([[1.0], [0.0], [0.0]]) if G is None else as_mat(G, "G").reshape(3, -1)
    I1, I2, I3 = inertia
    Q = _rigid_body_metric(inertia)
    Q_tilde_inv = np.diag([1.0 / (I2 - I3), 1.0 / (I3 - I1), 1.0 / (I1 - I2)])

    open_loop = GradientSystem(
        n=3, m=3,
        Q=lambda w: Q,
        dQ=lambda w: np.zeros((3, 3, 3)),
        grad_V=lambda w: -_momentum_gradient(w),
        hess_V=lambda w: -_momentum_hessian(w),
        B=Q_tilde_inv,
        grad_q=lambda w: Q @ np.asarray(w, dtype=float),
        name="rigid-body-open-loop")
    closed_loop = _rigid_body_closed_loop(inertia, r, G)
    P = np.diag(1.0 / np.diag(Q) ** 2)
    storage = make_qpq_storage(closed_loop, P)
    return RigidBodyModel(open_loop, closed_loop, storage, inertia, r, G, P, qpq_output(closed_loop, P))


def certify_rigid_body(r=(0.2, 0.2, 0.2), half_widths=(0.1, 0.2, 0.25, 0.3, 0.5, 1.0, 2.0, 3.0),
                       count=9, inertia=(3.0, 2.0, 1.0), threads=1):
    """Largest cube |w_i| <= h from ``half_widths`` on which the rigid-body condition scans as a pass."""
    model = rigid_body(inertia, r)
    certified = 0.0
    for h in sorted(half_widths):
        grid = SampleGrid(-h * np.ones(3), h * np.ones(3), (count,) * 3)
        checker = replace(rigid_body_checker(model.closed_loop, model.r), domain=None)
        report = scan_region(checker, grid, threads=threads)
        if report.verdict != PASS:
            break
        certified = h
    logger.info(f"Rigid body with r={list(r)} certified on the cube of half-width {certified}")
    return certified


# --- linear fixtures ---------------------------------------------------------

def linear_passive_fixture(A=None, B=None, C=None, P=None, tol: float = 1e-10):
    """Linear x' = Ax + Bu, y = Cx with the constant storage M = P.

    Defaults to A = [[0, 1], [-1, -1]], B = (0, 1)^T, C = (0, 1), P = I.
    """
    A = np.array([[0.0, 1.0], [-1.0, -1.0]]) if A is None else as_mat(A, "A")
    n = A.shape[0]
    B = np.array([[0.0], [1.0]]) if B is None else as_mat(B, "B").reshape(n, -1)
    C = np.array([[0.0, 1.0]]) if C is None else as_mat(C, "C").reshape(-1, n)
    P = np.eye(n) if P is None else as_mat(P, "P")

    dissipation = sym_eig_bounds(A.T @ P + P @ A).lambda_max
    if dissipation > tol:
        raise InvalidFixture(f"A^T P + P A is not negative semidefinite (lambda_max = {dissipation:.3e})")
    storage = constant_storage(P, name="constant-P")
    m = B.shape[1]
    system = ControlAffineSystem(
        n=n, m=m, p=C.shape[0],
        f=lambda x: A @ x,
        g=lambda x: B,
        h=lambda x: C @ x,
        jac_f=lambda x: A,
        jac_gu=lambda x, u: np.zeros((n, n)),
        jac_h=lambda x: C,
        jacobian_mode=ANALYTIC, name="linear-fixture")
    return system, storage


def lossless_fixture():
    """Harmonic oscillator: A skew, so A^T P + P A = 0 with P = I."""
    return linear_passive_fixture(A=np.array([[0.0, 1.0], [-1.0, 0.0]]))


# --- registry ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Example:
    """A registry entry: the system with its passivating output and bundled storage."""
    name: str
    description: str
    system: ControlAffineSystem
    storage: QuadraticStorage
    gradient: Optional[GradientSystem] = None
    P: Optional[np.ndarray] = None
    rigid_body: Optional[RigidBodyModel] = None

    @property
    def domain(self):
        return self.system.domain

    def to_dict(self):
        return {
            'name': self.name,
            'description': self.description,
            'n': self.system.n,
            'm': self.system.m,
            'p': self.system.p,
            'bundled_storage': self.storage.name,
            'gradient_form': self.gradient is not None,
            'domain': self.domain.to_dict() if self.domain is not None else None,
        }


def _osc_example(variant, description):
    model = oscillator(variant)
    P = np.ones((1, 1)) if model.gradient is not None else None
    return Example(f"osc-{variant.lower()}", description, model.system, model.storage, model.gradient, P)


def _rc_example():
    model = rc_circuit()
    return Example("rc", "Nonlinear RC circuit Q(v) v' = -v^5 + i", model.output, model.storage,
                   model.gradient, np.ones((1, 1)))


def _rigid_body_example():
    model = rigid_body()
    return Example("rigid-body", "Rigid body under damping feedback, y = G^T w", model.closed_loop_system,
                   model.storage, model.closed_loop, model.P, model)


def _linear_example():
    system, storage = linear_passive_fixture()
    return Example("linear-fixture", "Passive linear system with constant storage P = I", system, storage)


REGISTRY = {
    'osc-a': lambda: _osc_example('A', "x' = -sin x + u, constant metric"),
    'osc-b': lambda: _osc_example('B', "x' = -sin x + cos(x/2) u, metric 1/(1 + cos x)"),
    'osc-c': lambda: _osc_example('C', "Gradient form 1/cos(x/2) x' = -2 sin(x/2) + u, QPQ storage"),
    'rc': _rc_example,
    'rigid-body': _rigid_body_example,
    'linear-fixture': _linear_example,
}


def get_example(name: str) -> Example:
    builder = REGISTRY.get(name)
    if builder is None:
        raise UnknownSystem(f"Unknown system '{name}'. Available: {', '.join(sorted(REGISTRY))}")
    logger.debug(f"Building bundled example '{name}'")
    return builder()


def list_examples():
    return [get_example(name).to_dict() for name in REGISTRY]
