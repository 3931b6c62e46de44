"""Model definition for the controlled-load population game.

Single source of truth for the physical and cost parameters, the feasibility
box, the two-state microscopic dynamics, and the LQ matrices used by the
solvers downstream.
"""

from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Optional

import numpy as np


class ParameterError(ValueError):
    """A model parameter violates its constraint."""


class AgentState(NamedTuple):
    """Temperature and on-probability of one load."""

    x: float
    y: float


class ControlInput(NamedTuple):
    """Switch-on / switch-off rates.

    Rates are nominally nonnegative; the LQ relaxation admits signed values
    and the dynamics only see the difference u_on - u_off.
    """

    u_on: float
    u_off: float


@dataclass(frozen=True)
class ModelParams:
    """All scalars defining the game.

    ``phi`` is the terminal quadratic weight (symmetric PSD 2x2).  ``None``
    means "use the stabilizing algebraic-Riccati solution", which makes
    finite-horizon trajectories stationary away from the horizon end.
    """

    alpha: float = 1.0            # cooling rate, > 0
    beta: float = 1.0             # heating rate, > 0
    x_on: float = -10.0           # low temperature bound
    x_off: float = 10.0           # high temperature bound
    q: float = 1.0                # temperature penalty weight, >= 0
    r_on: float = 10.0            # switch-on rate penalty, > 0
    r_off: float = 10.0           # switch-off rate penalty, > 0
    S: float = 1.0                # frequency-error price weight, >= 0
    W: float = 0.5                # power consumption penalty, >= 0
    gamma: float = 10.0           # disturbance attenuation level, > 0
    sigma11: float = 0.0          # noise amplitude on x, >= 0
    sigma22: float = 0.0          # noise amplitude on y, >= 0
    d11: float = 1.0              # disturbance channel gains
    d12: float = 0.0
    d21: float = 0.0
    d22: float = 1.0
    m_on_bar: float = 0.5         # nominal on-fraction, in [0, 1]
    phi: Optional[tuple] = None   # 2x2 nested tuple; None = use the ARE fix

    def with_phi(self, phi):
        phi = np.asarray(phi, dtype=float)
        return replace(self, phi=tuple(map(tuple, phi)))

    def disturbance_matrix(self):
        return np.array([[self.d11, self.d12], [self.d21, self.d22]])


def validate(params: ModelParams) -> ModelParams:
    """Return ``params`` unchanged iff every invariant holds.

    Raises ParameterError naming the first failed invariant.
    """
    p = params
    if not p.alpha > 0:
        raise ParameterError("alpha must be positive, got %r" % (p.alpha,))
    if not p.beta > 0:
        raise ParameterError("beta must be positive, got %r" % (p.beta,))
    if not p.x_on < p.x_off:
        raise ParameterError(
            "x_on < x_off violated: x_on=%r, x_off=%r" % (p.x_on, p.x_off))
    if p.q < 0:
        raise ParameterError("q must be nonnegative, got %r" % (p.q,))
    if not p.r_on > 0:
        raise ParameterError("r_on must be positive, got %r" % (p.r_on,))
    if not p.r_off > 0:
        raise ParameterError("r_off must be positive, got %r" % (p.r_off,))
    if p.S < 0:
        raise ParameterError("S must be nonnegative, got %r" % (p.S,))
    if p.W < 0:
        raise ParameterError("W must be nonnegative, got %r" % (p.W,))
    if not p.gamma > 0:
        raise ParameterError("gamma must be positive, got %r" % (p.gamma,))
    if p.sigma11 < 0 or p.sigma22 < 0:
        raise ParameterError("noise amplitudes must be nonnegative, got "
                             "sigma11=%r, sigma22=%r" % (p.sigma11, p.sigma22))
    if not 0.0 <= p.m_on_bar <= 1.0:
        raise ParameterError(
            "m_on_bar must lie in [0, 1], got %r" % (p.m_on_bar,))
    if p.phi is not None:
        phi = np.asarray(p.phi, dtype=float)
        if phi.shape != (2, 2):
            raise ParameterError("phi must be 2x2, got shape %r" % (phi.shape,))
        if not np.allclose(phi, phi.T, atol=1e-12):
            raise ParameterError("phi must be symmetric")
        if np.linalg.eigvalsh(phi).min() < -1e-12:
            raise ParameterError("phi must be positive semidefinite")
    return params


def k_coefficient(params: ModelParams, x: float) -> float:
    """Temperature coupling coefficient of the affine drift form."""
    return x * (params.beta - params.alpha) + (
        params.alpha * params.x_on - params.beta * params.x_off)


def temperature_drift(params: ModelParams, x: float, y: float) -> float:
    """Mode-mixed temperature drift: on/off branches blended by y."""
    on = -params.alpha * (x - params.x_on)
    off = -params.beta * (x - params.x_off)
    return y * on + (1.0 - y) * off


def temperature_drift_affine(params: ModelParams, x: float, y: float) -> float:
    """Same drift written as -beta*x + k(x)*y + beta*x_off.

    Must agree with ``temperature_drift`` to rounding; the equality is an
    internal consistency check.
    """
    return -params.beta * x + k_coefficient(params, x) * y \
        + params.beta * params.x_off


def mode_rate(u: ControlInput) -> float:
    """Net switching rate driving the on-probability."""
    return u.u_on - u.u_off


def mode_pair_rates(u: ControlInput):
    """Rates of the (on, off) probability pair; they sum to zero."""
    return u.u_on - u.u_off, u.u_off - u.u_on


def drift(params: ModelParams, s: AgentState, u: ControlInput) -> np.ndarray:
    """Deterministic drift (f, g) of one agent."""
    return np.array([temperature_drift(params, s.x, s.y), mode_rate(u)])


def running_cost(params: ModelParams, s: AgentState, u: ControlInput,
                 e: float) -> float:
    """Instantaneous cost: quadratic state/control terms plus the
    on-mode price y*(S*e + W)."""
    quad = 0.5 * (params.q * s.x ** 2
                  + params.r_on * u.u_on ** 2
                  + params.r_off * u.u_off ** 2)
    return quad + s.y * (params.S * e + params.W)


def clamp_state(params: ModelParams, X: np.ndarray) -> np.ndarray:
    """Project states onto the feasible box [x_on, x_off] x [0, 1]."""
    X = np.asarray(X, dtype=float)
    out = X.copy()
    out[..., 0] = np.clip(out[..., 0], params.x_on, params.x_off)
    out[..., 1] = np.clip(out[..., 1], 0.0, 1.0)
    return out


@dataclass(frozen=True)
class SystemMatrices:
    """LQ data assembled from ModelParams.

    ``A`` is a function of the temperature (through k(x)); everything else
    is constant.  ``G`` caches B R^-1 B^T.
    """

    Q: np.ndarray
    R: np.ndarray
    R_inv: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    G: np.ndarray
    sigma11: float
    sigma22: float
    S: float
    W: float
    A: Callable[[float], np.ndarray]
    k: Callable[[float], float]

    def L(self, e: float) -> np.ndarray:
        """Linear cost coefficient (0, S*e + W)."""
        return np.array([0.0, self.S * e + self.W])

    def sigma_matrix(self, X, state_dependent: bool) -> np.ndarray:
        """Diffusion matrix; diag(s11*x, s22*y) when state dependent."""
        if state_dependent:
            return np.diag([self.sigma11 * X[0], self.sigma22 * X[1]])
        return np.diag([self.sigma11, self.sigma22])


def assemble(params: ModelParams) -> SystemMatrices:
    """Build the LQ matrices; validates the parameters first."""
    validate(params)
    Q = np.array([[params.q, 0.0], [0.0, 0.0]])
    R = np.diag([params.r_on, params.r_off])
    R_inv = np.diag([1.0 / params.r_on, 1.0 / params.r_off])
    B = np.array([[0.0, 0.0], [1.0, -1.0]])
    C = np.array([params.beta * params.x_off, 0.0])
    D = params.disturbance_matrix()
    G = B @ R_inv @ B.T

    def A(x: float) -> np.ndarray:
        return np.array([[-params.beta, k_coefficient(params, x)],
                         [0.0, 0.0]])

    return SystemMatrices(Q=Q, R=R, R_inv=R_inv, B=B, C=C, D=D, G=G,
                          sigma11=params.sigma11, sigma22=params.sigma22,
                          S=params.S, W=params.W,
                          A=A, k=lambda x: k_coefficient(params, x))
