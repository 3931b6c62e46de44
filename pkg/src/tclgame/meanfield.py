"""Population coupling: macroscopic dynamics and the equilibrium fixed point.

The individual optimal control depends on the population through the error
signal e(t); the population mean follows the closed-loop affine dynamics.
The equilibrium e(.) is found by damped Picard iteration on that loop.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import model, riccati


class FixedPointError(RuntimeError):
    """Picard iteration exceeded max_iter; carries the gap history."""

    def __init__(self, gap_history):
        super().__init__("mean-field fixed point did not converge in %d "
                         "iterations (last gap %.3g); retry with smaller "
                         "damping" % (len(gap_history), gap_history[-1]))
        self.gap_history = list(gap_history)


@dataclass(frozen=True)
class ErrorTrajectory:
    """Sampled frequency-error signal e(t) = m_on(t) - m_on_bar."""

    grid: np.ndarray
    e: np.ndarray

    def validate(self, m_on_bar: float) -> "ErrorTrajectory":
        lo, hi = -m_on_bar, 1.0 - m_on_bar
        if self.e.min() < lo - 1e-12 or self.e.max() > hi + 1e-12:
            raise ValueError("error trajectory leaves [%g, %g]" % (lo, hi))
        return self


@dataclass(frozen=True)
class EquilibriumSolution:
    """Converged mean-field fixed point.

    ``xbar[:, 1]`` is the macroscopic on-fraction m_on(t) by construction.
    ``final_gap`` is the sup-norm change of e over the last damped update;
    ``residual`` is the sup-norm move of one extra undamped sweep from the
    returned e (self-consistency measure).
    """

    e_traj: ErrorTrajectory
    riccati: riccati.RiccatiTrajectory
    xbar: np.ndarray
    iterations: int
    final_gap: float
    residual: float
    gap_history: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        from ._csv import write_csv
        traj = self.riccati
        cols = [traj.grid, self.e_traj.e, self.xbar[:, 0], self.xbar[:, 1],
                traj.P[:, 0, 0], traj.P[:, 0, 1], traj.P[:, 1, 1],
                traj.Psi[:, 0], traj.Psi[:, 1], traj.chi]
        write_csv(path, ["t", "e", "xbar", "ybar", "P11", "P12", "P22",
                         "Psi1", "Psi2", "chi"], cols)


def empirical_m_on(pop) -> float:
    """Population on-fraction: mean of the agents' mode coordinate."""
    X = np.asarray(pop.X if hasattr(pop, "X") else pop, dtype=float)
    if X.size == 0:
        raise ValueError("empty population")
    return float(X[:, 1].mean())


def propagate_macroscopic(traj: riccati.RiccatiTrajectory,
                          params: model.ModelParams, xbar0,
                          variant: riccati.Variant) -> np.ndarray:
    """Forward-Euler path of the population mean under the closed loop.

    Uses the same explicit-Euler discretization as the agent simulator so
    that, clamping aside, the mean of simulated agents reproduces this path
    exactly.  The robust variant applies the effective gain matrix in both
    the linear and the affine term.
    """
    mats = model.assemble(params)
    A = mats.A(traj.x_lin)
    M = riccati.effective_gain_matrix(params, variant)
    K = len(traj.grid) - 1
    dt = traj.dt
    path = np.empty((K + 1, 2))
    path[0] = np.asarray(xbar0, dtype=float)
    for k in range(K):
        gain = A + M @ traj.P[k]
        affine = M @ traj.Psi[k] + mats.C
        path[k + 1] = path[k] + dt * (gain @ path[k] + affine)
    return path


def stationary_affine_coefficient(P: np.ndarray, params: model.ModelParams,
                                  e: float, variant: riccati.Variant,
                                  x_lin: float = 0.0) -> np.ndarray:
    """Steady-state affine coefficient: solves A^T Psi + P C + P M Psi + L = 0.

    This is the backward equation's equilibrium for frozen e, used by the
    infinite-horizon gain mode.
    """
    mats = model.assemble(params)
    A = mats.A(x_lin)
    M = riccati.effective_gain_matrix(params, variant)
    return np.linalg.solve(-(A.T + P @ M), P @ mats.C + mats.L(e))


def _stationary_sweep(params, variant, e_arr, grid, P0, x_lin):
    """Riccati trajectory with constant P and quasi-static Psi(e(t))."""
    K = len(grid) - 1
    dt = grid[1] - grid[0]
    mats = model.assemble(params)
    M = riccati.effective_gain_matrix(params, variant)
    P = np.broadcast_to(P0, (K + 1, 2, 2)).copy()
    Psi = np.empty((K + 1, 2))
    for k in range(K + 1):
        Psi[k] = stationary_affine_coefficient(P0, params, e_arr[k], variant,
                                               x_lin)
    chi = np.zeros(K + 1)
    noise_term = 0.0
    if variant is riccati.Variant.STOCHASTIC_CONST:
        noise_term = 0.5 * (params.sigma11 ** 2 * P0[0, 0]
                            + params.sigma22 ** 2 * P0[1, 1])
    for k in range(K - 1, -1, -1):
        f = Psi[k + 1]
        rate = f @ mats.C + 0.5 * f @ M @ f + noise_term
        chi[k] = chi[k + 1] + dt * rate
    return riccati.RiccatiTrajectory(grid=grid, P=P, Psi=Psi, chi=chi,
                                     variant=variant, e=e_arr.copy(),
                                     x_lin=x_lin)


def fixed_point(params: model.ModelParams, variant: riccati.Variant,
                m0_mean, T: float, K: int, damping: float = 0.5,
                tol: float = 1e-8, max_iter: int = 200,
                x_lin: float = 0.0, eps_y: float = 1e-6,
                phi: Optional[np.ndarray] = None, method: str = "rk4",
                stationary: bool = False) -> EquilibriumSolution:
    """Damped Picard iteration for the equilibrium error signal.

    One sweep maps e -> (backward affine solve) -> (forward mean path) ->
    m_on - m_on_bar.  Updates are damped, e <- (1-damping)e + damping*map(e),
    and iteration stops when the damped update moves e by less than tol in
    sup norm.  With S = 0 the map does not depend on e at all, so its first
    output is already the fixed point and the solve returns after one sweep.

    ``stationary=True`` replaces the backward solve by the quasi-static
    affine coefficient (constant ARE P), the infinite-horizon limit.
    """
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1], got %r" % (damping,))
    model.validate(params)
    grid = np.linspace(0.0, T, K + 1)
    xbar0 = np.asarray(m0_mean, dtype=float)
    if phi is not None:
        P0 = np.asarray(phi, dtype=float)
    elif params.phi is not None:
        P0 = np.asarray(params.phi, dtype=float)
    else:
        P0 = riccati.solve_are(params, x_lin=x_lin, eps_y=eps_y)

    def sweep(e_arr):
        if stationary:
            traj = _stationary_sweep(params, variant, e_arr, grid, P0, x_lin)
        else:
            traj = riccati.solve_backward(params, variant, e_arr, T, K,
                                          x_lin=x_lin, phi=P0, method=method,
                                          eps_y=eps_y)
        xbar = propagate_macroscopic(traj, params, xbar0, variant)
        m_on = np.clip(xbar[:, 1], 0.0, 1.0)
        return traj, xbar, m_on - params.m_on_bar

    e = np.zeros(K + 1)
    gap_history = []

    if params.S == 0.0:
        # decoupled limit: the map is constant in e, one sweep is exact
        traj, xbar, e_hat = sweep(e)
        return EquilibriumSolution(
            e_traj=ErrorTrajectory(grid, e_hat).validate(params.m_on_bar),
            riccati=traj, xbar=xbar, iterations=1, final_gap=0.0,
            residual=0.0, gap_history=[0.0])

    for it in range(1, max_iter + 1):
        _, _, e_hat = sweep(e)
        e_next = (1.0 - damping) * e + damping * e_hat
        gap = float(np.abs(e_next - e).max())
        gap_history.append(gap)
        e = e_next
        if gap < tol:
            traj, xbar, e_check = sweep(e)
            residual = float(np.abs(e_check - e).max())
            return EquilibriumSolution(
                e_traj=ErrorTrajectory(grid, e).validate(params.m_on_bar),
                riccati=traj, xbar=xbar, iterations=it, final_gap=gap,
                residual=residual, gap_history=gap_history)
    raise FixedPointError(gap_history)
