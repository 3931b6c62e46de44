"""Numerical certification of the closed-loop drift conditions.

Computes equilibrium sets of the affine closed loop and spot-checks the
Lyapunov-type drift inequalities along trajectories and state samples.  The
conditions are sufficient for stability, never necessary, so reports state
satisfaction fractions and never claim instability from violations.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import riccati

DISCLAIMER = ("drift conditions are sufficient, not necessary: "
              "violations do not establish instability")


@dataclass(frozen=True)
class EquilibriumSet:
    """Fixed points of an affine closed loop M X + b = 0.

    kind 'point': the unique solution X_star.  kind 'line': all X_star +
    s * direction (singular M, consistent b).  kind 'empty': singular M,
    inconsistent b, no equilibrium.
    """

    kind: str
    X_star: Optional[np.ndarray]
    direction: Optional[np.ndarray] = None

    def project(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.kind == "point":
            return np.broadcast_to(self.X_star, X.shape).copy()
        if self.kind == "line":
            rel = X - self.X_star
            s = rel @ self.direction
            return self.X_star + np.outer(s, self.direction) \
                if X.ndim == 2 else self.X_star + s * self.direction
        raise ValueError("empty equilibrium set has no projection")

    def distance(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.linalg.norm(X - self.project(X), axis=-1)


def equilibrium_point(M, b) -> EquilibriumSet:
    """Solve M X = -b; singular M yields a subspace descriptor, not an error."""
    M = np.asarray(M, dtype=float)
    b = np.asarray(b, dtype=float)
    u, s, vt = np.linalg.svd(M)
    tol = max(M.shape) * np.finfo(float).eps * (s[0] if s[0] > 0 else 1.0)
    rank = int(np.sum(s > tol))
    if rank == M.shape[0]:
        return EquilibriumSet(kind="point", X_star=np.linalg.solve(M, -b))
    # least-squares particular solution; consistent iff it actually solves
    X0 = np.linalg.lstsq(M, -b, rcond=None)[0]
    if np.linalg.norm(M @ X0 + b) > 1e-9 * max(1.0, np.linalg.norm(b)):
        return EquilibriumSet(kind="empty", X_star=None)
    direction = vt[rank:][0]
    return EquilibriumSet(kind="line", X_star=X0,
                          direction=direction / np.linalg.norm(direction))


@dataclass(frozen=True)
class DriftReport:
    """Sampled drift-condition evaluations plus summary statistics.

    satisfied[i] holds iff lhs[i] < rhs[i].  worst_margin is the minimum of
    rhs - lhs over included samples (negative when violated).  Samples
    within the exclusion radius of the equilibrium set are skipped and
    counted in excluded_count.
    """

    X: np.ndarray
    t: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    satisfied: np.ndarray
    fraction_satisfied: float
    worst_margin: float
    excluded_count: int
    note: str
    empirical: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        from ._csv import write_csv
        write_csv(path, ["t", "x", "y", "lhs", "rhs", "satisfied"],
                  [self.t, self.X[:, 0], self.X[:, 1], self.lhs, self.rhs,
                   self.satisfied])

    def summary(self) -> str:
        return ("fraction_satisfied=%.6g worst_margin=%.6g "
                "excluded_count=%d; %s"
                % (self.fraction_satisfied, self.worst_margin,
                   self.excluded_count, self.note))


def closed_loop_drift(M, b) -> Callable:
    """Affine drift function X, t -> M X + b."""
    M = np.asarray(M, dtype=float)
    b = np.asarray(b, dtype=float)
    return lambda X, t: M @ np.asarray(X, dtype=float) + b


def _empty_report(note: str, excluded: int = 0) -> DriftReport:
    z = np.empty((0,))
    return DriftReport(X=np.empty((0, 2)), t=z, lhs=z, rhs=z,
                       satisfied=np.empty(0, dtype=bool),
                       fraction_satisfied=float("nan"),
                       worst_margin=float("nan"), excluded_count=excluded,
                       note=note)


def _evaluate_drift(states, times, eq: EquilibriumSet, drift_fn,
                    rhs_fn, delta: float) -> DriftReport:
    states = np.atleast_2d(np.asarray(states, dtype=float))
    times = np.asarray(times, dtype=float)
    proj = eq.project(states)
    dist = np.linalg.norm(states - proj, axis=1)
    keep = dist > delta
    excluded = int(np.sum(~keep))
    if not np.any(keep):
        return _empty_report(
            "all samples within the exclusion radius; " + DISCLAIMER,
            excluded)
    Xs = states[keep]
    ts = times[keep]
    ds = dist[keep]
    grad = (Xs - proj[keep]) / ds[:, None]
    lhs = np.array([grad[i] @ drift_fn(Xs[i], ts[i]) for i in range(len(Xs))])
    rhs = np.array([rhs_fn(Xs[i], ds[i]) for i in range(len(Xs))])
    sat = lhs < rhs
    return DriftReport(X=Xs, t=ts, lhs=lhs, rhs=rhs, satisfied=sat,
                       fraction_satisfied=float(sat.mean()),
                       worst_margin=float((rhs - lhs).min()),
                       excluded_count=excluded, note=DISCLAIMER)


def check_asymptotic(states, times, eq: EquilibriumSet, drift_fn,
                     delta: float = 2e-5) -> DriftReport:
    """Pointwise check of grad V . drift < -dist^2 with V = dist(X, eq).

    The gradient of V is the unit vector away from the projection; samples
    within ``delta`` of the set are excluded (V is not differentiable
    there).
    """
    return _evaluate_drift(states, times, eq, drift_fn,
                           lambda X, d: -d * d, delta)


def check_worst_case(states, times, eq: EquilibriumSet, drift_fn_robust,
                     delta: float = 2e-5) -> DriftReport:
    """Same drift check against the disturbance-attenuating closed loop.

    The trajectory is expected to come from the robust gain, i.e. with the
    maximizing disturbance folded into the dynamics.
    """
    return _evaluate_drift(states, times, eq, drift_fn_robust,
                           lambda X, d: -d * d, delta)


def _dist_second_derivs(eq: EquilibriumSet, X, h: float):
    """Central finite differences of V = dist(X, eq) along each axis."""
    def V(pt):
        return float(eq.distance(pt[None, :])[0])
    ex = np.array([h, 0.0])
    ey = np.array([0.0, h])
    v0 = V(X)
    vxx = (V(X + ex) - 2.0 * v0 + V(X - ex)) / h ** 2
    vyy = (V(X + ey) - 2.0 * v0 + V(X - ey)) / h ** 2
    return vxx, vyy


def check_second_moment(runs, bound_region, variant: riccati.Variant,
                        params, drift_fn, eq: EquilibriumSet,
                        h: float = 1e-4, sample_stride: int = 10,
                        max_samples: int = 2000) -> DriftReport:
    """Drift condition for bounded second moments, plus the empirical moment.

    Analytic side: at recorded states outside the box ``bound_region``
    (((x_lo, x_hi), (y_lo, y_hi))), checks
    grad V . drift < -1/2 (s11(x)^2 Vxx + s22(y)^2 Vyy) with second
    derivatives of V by central differences of step ``h``.  Empirical side:
    the ensemble second moment about the equilibrium per time sample and
    the slope of its log over the final half-horizon (with a standard error
    across runs).

    All runs must share a scenario (seed aside); a box covering every
    recorded state yields a vacuous report.
    """
    if len(runs) == 0:
        raise ValueError("need at least one run")
    ref = runs[0].scenario
    for r in runs[1:]:
        a = r.scenario
        same = (a.variant == ref.variant and a.n_agents == ref.n_agents
                and a.dt == ref.dt and a.steps == ref.steps
                and a.closure == ref.closure)
        if not same:
            raise ValueError("runs have mismatched scenario configs")
    if variant not in (riccati.Variant.STOCHASTIC_CONST,
                       riccati.Variant.STOCHASTIC_STATE_DEP):
        raise ValueError("second-moment check applies to stochastic variants")

    (x_lo, x_hi), (y_lo, y_hi) = bound_region
    state_dep = variant is riccati.Variant.STOCHASTIC_STATE_DEP

    Xs, ts = [], []
    for r in runs:
        sub = r.states[::sample_stride]
        tt = r.times[::sample_stride]
        for k in range(sub.shape[0]):
            for i in range(sub.shape[1]):
                X = sub[k, i]
                if x_lo <= X[0] <= x_hi and y_lo <= X[1] <= y_hi:
                    continue
                Xs.append(X.copy())
                ts.append(tt[k])
                if len(Xs) >= max_samples:
                    break
            if len(Xs) >= max_samples:
                break
        if len(Xs) >= max_samples:
            break

    empirical = _empirical_moment(runs, eq)
    if len(Xs) == 0:
        report = _empty_report(
            "vacuous: bound region covers every recorded state; "
            + DISCLAIMER)
        return DriftReport(**{**report.__dict__, "empirical": empirical})

    def rhs_fn(X, d):
        vxx, vyy = _dist_second_derivs(eq, X, h)
        s1 = params.sigma11 * X[0] if state_dep else params.sigma11
        s2 = params.sigma22 * X[1] if state_dep else params.sigma22
        return -0.5 * (s1 ** 2 * vxx + s2 ** 2 * vyy)

    report = _evaluate_drift(np.asarray(Xs), np.asarray(ts), eq, drift_fn,
                             rhs_fn, delta=h * 10)
    return DriftReport(**{**report.__dict__, "empirical": empirical})


def _empirical_moment(runs, eq: EquilibriumSet) -> dict:
    """Ensemble second moment about the equilibrium and its trend."""
    times = runs[0].times
    per_run = np.empty((len(runs), len(times)))
    for j, r in enumerate(runs):
        rel = r.states - eq.project(r.states.reshape(-1, 2)).reshape(
            r.states.shape)
        per_run[j] = (rel ** 2).sum(axis=2).mean(axis=1)
    moment = per_run.mean(axis=0)
    half = len(times) // 2
    tt = times[half:]
    slopes = np.empty(len(runs))
    for j in range(len(runs)):
        slopes[j] = np.polyfit(tt, np.log(per_run[j, half:] + 1e-300), 1)[0]
    slope = float(np.polyfit(tt, np.log(moment[half:] + 1e-300), 1)[0])
    se = float(slopes.std(ddof=1) / np.sqrt(len(runs))) if len(runs) > 1 \
        else float("inf")
    return {"times": times, "moment": moment, "slope": slope,
            "slope_se": se}
