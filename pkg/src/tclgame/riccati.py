"""Backward value-function solvers and feedback laws.

Solves the coupled (P, Psi, chi) system backward in time for the four model
variants, provides an algebraic-Riccati solver via Hamiltonian spectral
splitting with Newton refinement, and verifies trajectories against the full
quadratic identity they are supposed to satisfy.
"""

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels, model


class Variant(enum.Enum):
    """Which uncertainty structure the solve targets."""

    DETERMINISTIC = "deterministic"
    STOCHASTIC_STATE_DEP = "stochastic_statedep"
    STOCHASTIC_CONST = "stochastic_const"
    ROBUST = "robust"

    @classmethod
    def parse(cls, token: str) -> "Variant":
        token = token.strip().lower()
        for v in cls:
            if v.value == token:
                return v
        raise ValueError("unknown variant %r (expected one of %s)"
                         % (token, ", ".join(v.value for v in cls)))


class RiccatiBlowUpError(RuntimeError):
    """Backward integration left the overflow guard: finite-time blow-up."""

    def __init__(self, blow_up_time: float, variant: Variant):
        super().__init__("finite-time blow-up at t=%.6g (variant %s)"
                         % (blow_up_time, variant.value))
        self.blow_up_time = blow_up_time


class AREError(RuntimeError):
    """No stabilizing algebraic-Riccati solution could be computed."""


@dataclass(frozen=True)
class RiccatiTrajectory:
    """Time-sampled (P, Psi, chi) triple on a uniform grid over [0, T].

    ``e`` is the error signal the affine equation was solved against and
    ``x_lin`` the temperature at which the drift matrix was frozen.
    """

    grid: np.ndarray           # (K+1,)
    P: np.ndarray              # (K+1, 2, 2), symmetric
    Psi: np.ndarray            # (K+1, 2)
    chi: np.ndarray            # (K+1,)
    variant: Variant
    e: np.ndarray              # (K+1,)
    x_lin: float

    @property
    def dt(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def segment(self, t: float) -> int:
        """Index k with grid[k] <= t <= grid[k+1] (clipped at the ends)."""
        k = int(np.floor((t - self.grid[0]) / self.dt))
        return min(max(k, 0), len(self.grid) - 2)

    def interpolate(self, t: float):
        """Linear interpolation of (P, Psi, chi, e) at time t."""
        k = self.segment(t)
        w = (t - self.grid[k]) / self.dt
        return ((1 - w) * self.P[k] + w * self.P[k + 1],
                (1 - w) * self.Psi[k] + w * self.Psi[k + 1],
                (1 - w) * self.chi[k] + w * self.chi[k + 1],
                (1 - w) * self.e[k] + w * self.e[k + 1])

    def to_csv(self, path) -> None:
        from ._csv import write_csv
        cols = [self.grid,
                self.P[:, 0, 0], self.P[:, 0, 1], self.P[:, 1, 1],
                self.Psi[:, 0], self.Psi[:, 1], self.chi]
        write_csv(path, ["t", "P11", "P12", "P22", "Psi1", "Psi2", "chi"],
                  cols)


def effective_gain_matrix(params: model.ModelParams,
                          variant: Variant) -> np.ndarray:
    """Symmetric gain matrix entering the quadratic terms.

    -B R^-1 B^T for the nominal variants; the robust variant adds the
    adversarial channel gamma^-2 D D^T.
    """
    mats = model.assemble(params)
    M = -mats.G
    if variant is Variant.ROBUST:
        D = mats.D
        M = M + (D @ D.T) / params.gamma ** 2
    return M


def control_law(P: np.ndarray, Psi: np.ndarray, R: np.ndarray,
                B: np.ndarray, X) -> model.ControlInput:
    """Optimal feedback u = -R^-1 B^T (P X + Psi)."""
    X = np.asarray(X, dtype=float)
    u = -np.linalg.solve(R, B.T @ (P @ X + Psi))
    return model.ControlInput(float(u[0]), float(u[1]))


def worst_case_disturbance(P: np.ndarray, Psi: np.ndarray, D: np.ndarray,
                           gamma: float, X) -> np.ndarray:
    """Maximizing disturbance w = gamma^-2 D^T (P X + Psi)."""
    X = np.asarray(X, dtype=float)
    return (D.T @ (P @ X + Psi)) / gamma ** 2


def _stage_error_samples(e_traj, T: float, K: int) -> np.ndarray:
    """Error signal on the half-step grid (2K+1 samples).

    A callable is sampled exactly; an array of K+1 grid values is read as
    piecewise linear (midpoints averaged); None means identically zero.
    """
    if e_traj is None:
        return np.zeros(2 * K + 1)
    if callable(e_traj):
        t_half = np.linspace(0.0, T, 2 * K + 1)
        return np.asarray([float(e_traj(t)) for t in t_half])
    e = np.asarray(e_traj, dtype=float)
    if e.shape != (K + 1,):
        raise ValueError("e_traj must have K+1 samples, got shape %r"
                         % (e.shape,))
    stage = np.empty(2 * K + 1)
    stage[0::2] = e
    stage[1::2] = 0.5 * (e[:-1] + e[1:])
    return stage


def _variant_flags(params: model.ModelParams, variant: Variant):
    s11sq = params.sigma11 ** 2
    s22sq = params.sigma22 ** 2
    statedep_p = 1 if variant is Variant.STOCHASTIC_STATE_DEP else 0
    const_chi = 1 if variant is Variant.STOCHASTIC_CONST else 0
    return s11sq, s22sq, statedep_p, const_chi


def solve_backward(params: model.ModelParams, variant: Variant, e_traj,
                   T: float, K: int, x_lin: float = 0.0,
                   phi: Optional[np.ndarray] = None, method: str = "rk4",
                   eps_y: float = 1e-6,
                   guard: float = 1e12) -> RiccatiTrajectory:
    """Integrate the (P, Psi, chi) system backward from its terminal values.

    The drift matrix is frozen at A(x_lin).  ``phi`` defaults to the
    stabilizing algebraic-Riccati solution (params.phi if set).  ``e_traj``
    may be None (zero), a callable of t, or an array on the K+1 grid.
    Raises RiccatiBlowUpError when the overflow guard trips, which happens
    for the robust variant at small gamma.
    """
    if K < 2:
        raise ValueError("K must be at least 2, got %r" % (K,))
    if method not in ("rk4", "euler"):
        raise ValueError("method must be 'rk4' or 'euler', got %r" % (method,))
    mats = model.assemble(params)
    A = mats.A(x_lin)
    M = effective_gain_matrix(params, variant)
    if phi is None:
        phi = params.phi
    if phi is None:
        phi = solve_are(params, x_lin=x_lin, eps_y=eps_y)
    phi = np.asarray(phi, dtype=float)

    grid = np.linspace(0.0, T, K + 1)
    dt = T / K
    e_stage = _stage_error_samples(e_traj, T, K)
    out = np.zeros((K + 1, 6))
    out[K, 0] = phi[0, 0]
    out[K, 1] = 0.5 * (phi[0, 1] + phi[1, 0])
    out[K, 2] = phi[1, 1]

    s11sq, s22sq, statedep_p, const_chi = _variant_flags(params, variant)
    blow = _kernels.riccati_sweep(
        out, e_stage, dt,
        A[0, 0], A[0, 1], A[1, 0], A[1, 1],
        M[0, 0], M[0, 1], M[1, 1],
        mats.C[0], mats.C[1],
        mats.Q[0, 0], mats.Q[0, 1], mats.Q[1, 1],
        params.W, params.S, s11sq, s22sq,
        statedep_p, const_chi, 1 if method == "rk4" else 0, guard)
    if blow >= 0:
        raise RiccatiBlowUpError(float(grid[blow]), variant)

    P = np.empty((K + 1, 2, 2))
    P[:, 0, 0] = out[:, 0]
    P[:, 0, 1] = out[:, 1]
    P[:, 1, 0] = out[:, 1]
    P[:, 1, 1] = out[:, 2]
    return RiccatiTrajectory(grid=grid, P=P, Psi=out[:, 3:5].copy(),
                             chi=out[:, 5].copy(), variant=variant,
                             e=e_stage[0::2].copy(), x_lin=x_lin)


def solve_are_matrices(A: np.ndarray, B: np.ndarray, Q: np.ndarray,
                       R: np.ndarray, newton_tol: float = 1e-12,
                       max_newton: int = 25) -> np.ndarray:
    """Stabilizing solution of A^T P + P A - P B R^-1 B^T P + Q = 0.

    Spectral splitting of the Hamiltonian matrix followed by
    Newton-Kleinman refinement; verifies the closed loop is Hurwitz
    before returning.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    G = B @ np.linalg.solve(R, B.T)
    H = np.block([[A, -G], [-Q, -A.T]])
    eigvals, eigvecs = np.linalg.eig(H)
    stable = np.where(eigvals.real < 0)[0]
    if len(stable) != n:
        raise AREError("no stabilizing solution: Hamiltonian spectrum has "
                       "%d stable eigenvalues, expected %d"
                       % (len(stable), n))
    basis = eigvecs[:, stable]
    # real orthonormal basis of the stable invariant subspace; conjugate
    # pairs contribute their span twice, SVD collapses the redundancy
    raw = np.hstack([basis.real, basis.imag])
    left, sing, _ = np.linalg.svd(raw, full_matrices=False)
    rank = int(np.sum(sing > 1e-10 * sing[0]))
    if rank != n:
        raise AREError("no stabilizing solution: stable subspace has rank "
                       "%d, expected %d" % (rank, n))
    U = left[:, :n]
    U1, U2 = U[:n], U[n:]
    if np.linalg.cond(U1) > 1e12:
        raise AREError("no stabilizing solution: invariant subspace has no "
                       "graph representation")
    P = U2 @ np.linalg.inv(U1)
    P = 0.5 * (P + P.T)

    # Newton-Kleinman refinement: solve the Lyapunov step via Kronecker form
    eye = np.eye(n)
    for _ in range(max_newton):
        res = A.T @ P + P @ A - P @ G @ P + Q
        if np.abs(res).max() < newton_tol:
            break
        Ac = A - G @ P
        lhs = np.kron(eye, Ac.T) + np.kron(Ac.T, eye)
        delta = np.linalg.solve(lhs, -res.reshape(-1)).reshape(n, n)
        P = P + delta
        P = 0.5 * (P + P.T)

    res = A.T @ P + P @ A - P @ G @ P + Q
    if np.abs(res).max() >= 1e-9:
        raise AREError("no stabilizing solution: Newton refinement stalled "
                       "at residual %.3g" % np.abs(res).max())
    closed = np.linalg.eigvals(A - G @ P)
    if closed.real.max() >= 0:
        raise AREError("no stabilizing solution: closed loop is not Hurwitz "
                       "(max Re eig = %.3g)" % closed.real.max())
    return P


def solve_are(params: model.ModelParams, x_lin: float = 0.0,
              eps_y: float = 1e-6) -> np.ndarray:
    """Stabilizing ARE solution for the model frozen at A(x_lin).

    The mode coordinate is unobserved by Q = diag(q, 0) and carries a zero
    drift eigenvalue, so Q is regularized to Q + diag(0, eps_y) to keep the
    stabilizing solution well defined.
    """
    mats = model.assemble(params)
    Qp = mats.Q + np.diag([0.0, eps_y])
    return solve_are_matrices(mats.A(x_lin), mats.B, Qp, mats.R)


def hamiltonian(params: model.ModelParams, P: np.ndarray, Psi: np.ndarray,
                X, u: model.ControlInput, e: float, w=None,
                x_lin: float = 0.0) -> float:
    """Value of the (Isaacs) Hamiltonian at state X, control u, disturbance w.

    grad_v^T (A X + B u + C + D w) + 1/2 (X^T Q X + u^T R u - gamma^2 |w|^2)
    + L(e)^T X.  Pass w=None for the nominal variants.
    """
    mats = model.assemble(params)
    X = np.asarray(X, dtype=float)
    uv = np.asarray(u, dtype=float)
    grad = P @ X + Psi
    vel = mats.A(x_lin) @ X + mats.B @ uv + mats.C
    quad = 0.5 * (X @ mats.Q @ X + uv @ mats.R @ uv)
    if w is not None:
        w = np.asarray(w, dtype=float)
        vel = vel + mats.D @ w
        quad = quad - 0.5 * params.gamma ** 2 * (w @ w)
    return float(grad @ vel + quad + mats.L(e) @ X)


def hjb_residual(traj: RiccatiTrajectory, params: model.ModelParams,
                 samples) -> float:
    """Max magnitude of the quadratic-identity left-hand side over samples.

    ``samples`` is an iterable of (X, t).  Time derivatives are taken as
    segment slopes of the stored trajectory and all coefficients are
    evaluated at the segment midpoint, so the residual measures the
    self-consistency of the trajectory rather than of the exact solution.
    Includes the variant's second-order term.
    """
    mats = model.assemble(params)
    A = mats.A(traj.x_lin)
    variant = traj.variant
    dt = traj.dt
    worst = 0.0
    for X, t in samples:
        X = np.asarray(X, dtype=float)
        k = traj.segment(t)
        Pm = 0.5 * (traj.P[k] + traj.P[k + 1])
        Fm = 0.5 * (traj.Psi[k] + traj.Psi[k + 1])
        em = 0.5 * (traj.e[k] + traj.e[k + 1])
        Pdot = (traj.P[k + 1] - traj.P[k]) / dt
        Fdot = (traj.Psi[k + 1] - traj.Psi[k]) / dt
        cdot = (traj.chi[k + 1] - traj.chi[k]) / dt

        grad = Pm @ X + Fm
        u = -mats.R_inv @ (mats.B.T @ grad)
        vel = A @ X + mats.B @ u + mats.C
        quad = 0.5 * (X @ mats.Q @ X + u @ mats.R @ u)
        if variant is Variant.ROBUST:
            w = (mats.D.T @ grad) / params.gamma ** 2
            vel = vel + mats.D @ w
            quad = quad - 0.5 * params.gamma ** 2 * (w @ w)

        second = 0.0
        if variant is Variant.STOCHASTIC_STATE_DEP:
            second = 0.5 * (params.sigma11 ** 2 * X[0] ** 2 * Pm[0, 0]
                            + params.sigma22 ** 2 * X[1] ** 2 * Pm[1, 1])
        elif variant is Variant.STOCHASTIC_CONST:
            second = 0.5 * (params.sigma11 ** 2 * Pm[0, 0]
                            + params.sigma22 ** 2 * Pm[1, 1])

        lhs = (0.5 * X @ Pdot @ X + Fdot @ X + cdot
               + grad @ vel + quad + mats.L(em) @ X + second)
        worst = max(worst, abs(float(lhs)))
    return worst


def robust_psi_equation_residuals(traj: RiccatiTrajectory,
                                  params: model.ModelParams):
    """Residuals of the robust affine equation under both candidate forms.

    The affine equation is integrated with the gain applied as P M Psi,
    which reduces to the nominal variants as gamma grows.  The alternative
    form applies M Psi without the left P factor.  Returns the max residual
    of each form along the trajectory (implemented form first); the gap
    between them documents that the two forms genuinely differ.
    """
    if traj.variant is not Variant.ROBUST:
        raise ValueError("residual comparison applies to robust trajectories")
    mats = model.assemble(params)
    A = mats.A(traj.x_lin)
    M = effective_gain_matrix(params, Variant.ROBUST)
    dt = traj.dt
    res_impl = 0.0
    res_alt = 0.0
    for k in range(len(traj.grid) - 1):
        Pm = 0.5 * (traj.P[k] + traj.P[k + 1])
        Fm = 0.5 * (traj.Psi[k] + traj.Psi[k + 1])
        em = 0.5 * (traj.e[k] + traj.e[k + 1])
        Fdot = (traj.Psi[k + 1] - traj.Psi[k]) / dt
        L = mats.L(em)
        base = Fdot + A.T @ Fm + Pm @ mats.C + L
        res_impl = max(res_impl, np.abs(base + Pm @ (M @ Fm)).max())
        res_alt = max(res_alt, np.abs(base + M @ Fm).max())
    return res_impl, res_alt
