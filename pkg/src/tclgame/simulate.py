"""N-agent population simulator.

Discrete-time closed-loop dynamics with optional Brownian forcing and
periodic impulse re-excitation.  All randomness is drawn from counter-based
(Philox) streams split per purpose (initialization / noise / impulses), and
per-agent noise is carved from a pre-drawn slab indexed by (step, agent), so
serial and parallel agent updates produce identical records.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels, model, riccati
from .meanfield import EquilibriumSolution


@dataclass(frozen=True)
class ImpulseRule:
    """Periodic re-excitation of the population.

    kind 'uniform' adds independent offsets drawn uniformly from
    [-ax, ax] x [-ay, ay]; 'resample' redraws every agent from the initial
    distribution.
    """

    kind: str = "uniform"
    ax: float = 3.0
    ay: float = 0.3

    def __post_init__(self):
        if self.kind not in ("uniform", "resample"):
            raise ValueError("impulse rule must be 'uniform' or 'resample', "
                             "got %r" % (self.kind,))


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation run: population size, grid, noise, impulses, closure."""

    variant: riccati.Variant = riccati.Variant.DETERMINISTIC
    n_agents: int = 100
    dt: float = 0.1
    steps: int = 300
    impulse_period: float = 10.0      # 0 disables impulses
    impulse_rule: ImpulseRule = field(default_factory=ImpulseRule)
    seed: int = 1234
    closure: str = "simplified"  # or "full_mean_field"
    x0_mean: float = 0.0
    x0_std: float = 1.0
    y0_mode: str = "uniform"           # or "constant"
    y0_low: float = 0.0
    y0_high: float = 1.0
    y0_value: float = 0.5
    legacy_dt_noise: bool = False      # scale noise by dt instead of sqrt(dt)
    drift_mode: str = "frozen"         # or "state_dependent"

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive, got %r" % (self.dt,))
        if self.steps < 1:
            raise ValueError("steps must be at least 1, got %r"
                             % (self.steps,))
        if self.n_agents < 1:
            raise ValueError("n_agents must be at least 1, got %r"
                             % (self.n_agents,))
        if self.closure not in ("simplified", "full_mean_field"):
            raise ValueError("closure must be 'simplified' or "
                             "'full_mean_field', got %r" % (self.closure,))
        if self.y0_mode not in ("uniform", "constant"):
            raise ValueError("y0_mode must be 'uniform' or 'constant', "
                             "got %r" % (self.y0_mode,))
        if self.drift_mode not in ("frozen", "state_dependent"):
            raise ValueError("drift_mode must be 'frozen' or "
                             "'state_dependent', got %r" % (self.drift_mode,))

    @property
    def horizon(self) -> float:
        return self.steps * self.dt


@dataclass
class PopulationState:
    """Agent states plus the deterministic RNG position."""

    t: float
    X: np.ndarray                       # (N, 2)
    rng: np.random.Generator
    x_bounds: tuple = (-10.0, 10.0)

    @property
    def n(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class GainSchedule:
    """Per-step closed-loop matrix and affine term, plus the feedback data
    (P, Psi) on the record grid for control reporting."""

    M: np.ndarray                       # (steps, 2, 2)
    b: np.ndarray                       # (steps, 2)
    P: np.ndarray                       # (steps+1, 2, 2)
    Psi: np.ndarray                     # (steps+1, 2)


def schedule_from_constant(gain, affine, P, Psi, steps: int) -> GainSchedule:
    """Tile a constant closed loop over the horizon."""
    M = np.broadcast_to(np.asarray(gain, dtype=float), (steps, 2, 2)).copy()
    b = np.broadcast_to(np.asarray(affine, dtype=float), (steps, 2)).copy()
    Pseq = np.broadcast_to(np.asarray(P, dtype=float), (steps + 1, 2, 2)).copy()
    Fseq = np.broadcast_to(np.asarray(Psi, dtype=float), (steps + 1, 2)).copy()
    return GainSchedule(M=M, b=b, P=Pseq, Psi=Fseq)


def schedule_from_are(params: model.ModelParams, scenario: ScenarioConfig,
                      x_lin: float = 0.0, eps_y: float = 1e-6,
                      P: Optional[np.ndarray] = None) -> GainSchedule:
    """Infinite-horizon gain.  The simplified closure drops the affine term
    entirely (the affine control component is taken to cancel C); the full
    closure keeps the quasi-static affine term at e = 0."""
    mats = model.assemble(params)
    if P is None:
        P = riccati.solve_are(params, x_lin=x_lin, eps_y=eps_y)
    Meff = riccati.effective_gain_matrix(params, scenario.variant)
    gain = mats.A(x_lin) + Meff @ P
    if scenario.closure == "simplified":
        affine = np.zeros(2)
        Psi = np.zeros(2)
    else:
        from .meanfield import stationary_affine_coefficient
        Psi = stationary_affine_coefficient(P, params, 0.0, scenario.variant,
                                            x_lin)
        affine = Meff @ Psi + mats.C
    return schedule_from_constant(gain, affine, P, Psi, scenario.steps)


def schedule_from_equilibrium(eq: EquilibriumSolution,
                              params: model.ModelParams,
                              scenario: ScenarioConfig) -> GainSchedule:
    """Closed loop along a solved equilibrium trajectory.

    Requires the equilibrium grid to match the scenario grid.
    """
    traj = eq.riccati
    if len(traj.grid) != scenario.steps + 1 or \
            abs(traj.dt - scenario.dt) > 1e-12:
        raise ValueError("equilibrium grid (K=%d, dt=%g) does not match "
                         "scenario grid (steps=%d, dt=%g)"
                         % (len(traj.grid) - 1, traj.dt, scenario.steps,
                            scenario.dt))
    mats = model.assemble(params)
    A = mats.A(traj.x_lin)
    Meff = riccati.effective_gain_matrix(params, scenario.variant)
    steps = scenario.steps
    M = np.empty((steps, 2, 2))
    b = np.empty((steps, 2))
    for k in range(steps):
        M[k] = A + Meff @ traj.P[k]
        if scenario.closure == "simplified":
            b[k] = 0.0
        else:
            b[k] = Meff @ traj.Psi[k] + mats.C
    return GainSchedule(M=M, b=b, P=traj.P.copy(), Psi=traj.Psi.copy())


@dataclass(frozen=True)
class RunRecord:
    """Full state history plus per-step aggregates of one run."""

    times: np.ndarray                   # (steps+1,)
    states: np.ndarray                  # (steps+1, N, 2)
    m_on: np.ndarray                    # (steps+1,)
    e: np.ndarray                       # (steps+1,)
    std_x: np.ndarray                   # (steps+1,)
    std_y: np.ndarray                   # (steps+1,)
    impulse_indices: np.ndarray         # record indices that got an impulse
    scenario: ScenarioConfig
    schedule: GainSchedule
    r_on: float = 10.0
    r_off: float = 10.0

    def controls(self, k: int) -> np.ndarray:
        """(N, 2) feedback controls at record index k, recomputed from the
        stored states and gain data; only the mode gradient actuates."""
        grad = self.states[k] @ self.schedule.P[k].T + self.schedule.Psi[k]
        g2 = grad[:, 1]
        return np.column_stack([-g2 / self.r_on, g2 / self.r_off])


def _draw_initial(scenario: ScenarioConfig, params: model.ModelParams,
                  rng: np.random.Generator) -> np.ndarray:
    n = scenario.n_agents
    X = np.empty((n, 2))
    X[:, 0] = rng.normal(scenario.x0_mean, scenario.x0_std, n)
    if scenario.y0_mode == "uniform":
        X[:, 1] = rng.uniform(scenario.y0_low, scenario.y0_high, n)
    else:
        X[:, 1] = scenario.y0_value
    return model.clamp_state(params, X)


def _rng_streams(seed: int):
    root = np.random.SeedSequence(seed)
    init_ss, noise_ss, imp_ss = root.spawn(3)
    gen = lambda ss: np.random.Generator(np.random.Philox(ss))
    return gen(init_ss), gen(noise_ss), gen(imp_ss)


def initial_population(scenario: ScenarioConfig,
                       params: model.ModelParams) -> PopulationState:
    """Draw the initial agent states for a scenario."""
    init_rng, noise_rng, _ = _rng_streams(scenario.seed)
    X = _draw_initial(scenario, params, init_rng)
    return PopulationState(t=0.0, X=X, rng=noise_rng,
                           x_bounds=(params.x_on, params.x_off))


def _clamp_cols(x, y, x_lo, x_hi):
    x = np.minimum(np.maximum(x, x_lo), x_hi)
    y = np.minimum(np.maximum(y, 0.0), 1.0)
    return x, y


def step_deterministic(pop: PopulationState, gain, affine,
                       dt: float) -> PopulationState:
    """One forward-Euler update of every agent, then clamp.

    Mirrors the batch kernel arithmetic exactly.
    """
    gain = np.asarray(gain, dtype=float)
    affine = np.asarray(affine, dtype=float)
    x = pop.X[:, 0]
    y = pop.X[:, 1]
    fx = gain[0, 0] * x + gain[0, 1] * y + affine[0]
    fy = gain[1, 0] * x + gain[1, 1] * y + affine[1]
    nx = x + dt * fx
    ny = y + dt * fy
    nx, ny = _clamp_cols(nx, ny, pop.x_bounds[0], pop.x_bounds[1])
    return PopulationState(t=pop.t + dt, X=np.column_stack([nx, ny]),
                           rng=pop.rng, x_bounds=pop.x_bounds)


def step_sde(pop: PopulationState, gain, affine, dt: float,
             noise: riccati.Variant, params: model.ModelParams,
             legacy_dt_noise: bool = False) -> PopulationState:
    """Euler-Maruyama update: deterministic drift plus scaled Gaussian
    increments drawn from the population's noise stream.

    State-dependent noise is evaluated at the pre-step state.  With both
    amplitudes zero this takes the deterministic code path and consumes no
    randomness, so the records are bit-identical to step_deterministic.
    """
    if noise not in (riccati.Variant.STOCHASTIC_CONST,
                     riccati.Variant.STOCHASTIC_STATE_DEP):
        raise ValueError("noise variant must be one of the stochastic ones")
    if params.sigma11 == 0.0 and params.sigma22 == 0.0:
        return step_deterministic(pop, gain, affine, dt)
    gain = np.asarray(gain, dtype=float)
    affine = np.asarray(affine, dtype=float)
    xi = pop.rng.standard_normal((pop.n, 2))
    scale = dt if legacy_dt_noise else np.sqrt(dt)
    x = pop.X[:, 0]
    y = pop.X[:, 1]
    fx = gain[0, 0] * x + gain[0, 1] * y + affine[0]
    fy = gain[1, 0] * x + gain[1, 1] * y + affine[1]
    nx = x + dt * fx
    ny = y + dt * fy
    if noise is riccati.Variant.STOCHASTIC_CONST:
        nx = nx + scale * params.sigma11 * xi[:, 0]
        ny = ny + scale * params.sigma22 * xi[:, 1]
    else:
        nx = nx + scale * params.sigma11 * x * xi[:, 0]
        ny = ny + scale * params.sigma22 * y * xi[:, 1]
    nx, ny = _clamp_cols(nx, ny, pop.x_bounds[0], pop.x_bounds[1])
    return PopulationState(t=pop.t + dt, X=np.column_stack([nx, ny]),
                           rng=pop.rng, x_bounds=pop.x_bounds)


def inject_impulse(pop: PopulationState, rule: ImpulseRule,
                   rng: np.random.Generator,
                   scenario: Optional[ScenarioConfig] = None,
                   params: Optional[model.ModelParams] = None
                   ) -> PopulationState:
    """Perturb every agent per the rule, then clamp."""
    n = pop.n
    if rule.kind == "uniform":
        off = np.empty((n, 2))
        off[:, 0] = rng.uniform(-rule.ax, rule.ax, n)
        off[:, 1] = rng.uniform(-rule.ay, rule.ay, n)
        X = pop.X + off
    else:
        if scenario is None or params is None:
            raise ValueError("resample impulses need scenario and params")
        X = _draw_initial(scenario, params, rng)
    x, y = _clamp_cols(X[:, 0], X[:, 1], pop.x_bounds[0], pop.x_bounds[1])
    return PopulationState(t=pop.t, X=np.column_stack([x, y]), rng=pop.rng,
                           x_bounds=pop.x_bounds)


def _impulse_plan(scenario: ScenarioConfig):
    """Record indices hit by the impulse schedule (t = j*period, j >= 1)."""
    if scenario.impulse_period <= 0:
        return np.empty(0, dtype=np.int64)
    idx = []
    j = 1
    while True:
        k = int(round(j * scenario.impulse_period / scenario.dt))
        if k >= scenario.steps:   # an impulse on the final record is inert
            break
        if k >= 1:
            idx.append(k)
        j += 1
    return np.asarray(idx, dtype=np.int64)


def aggregate_history(states: np.ndarray, m_on_bar: float):
    """Per-step population aggregates from a state history."""
    m_on = states[:, :, 1].mean(axis=1)
    e = m_on - m_on_bar
    std_x = states[:, :, 0].std(axis=1)
    std_y = states[:, :, 1].std(axis=1)
    return m_on, e, std_x, std_y


def run(scenario: ScenarioConfig, params: model.ModelParams,
        schedule: Optional[GainSchedule] = None, x_lin: float = 0.0,
        eps_y: float = 1e-6) -> RunRecord:
    """Execute the simulation loop: initialize the population, advance all
    agents step by step under the scheduled closed loop, apply impulses on
    schedule, and record states plus aggregates.

    Without an explicit schedule the infinite-horizon gain is used with the
    scenario's closure.  Records are a pure function of (scenario, params,
    seed).
    """
    model.validate(params)
    if schedule is None:
        schedule = schedule_from_are(params, scenario, x_lin=x_lin,
                                     eps_y=eps_y)
    steps, n = scenario.steps, scenario.n_agents
    if schedule.M.shape[0] != steps:
        raise ValueError("schedule covers %d steps, scenario needs %d"
                         % (schedule.M.shape[0], steps))
    init_rng, noise_rng, imp_rng = _rng_streams(scenario.seed)

    out = np.empty((steps + 1, n, 2))
    out[0] = _draw_initial(scenario, params, init_rng)

    stochastic = scenario.variant in (riccati.Variant.STOCHASTIC_CONST,
                                      riccati.Variant.STOCHASTIC_STATE_DEP)
    if stochastic and (params.sigma11 != 0.0 or params.sigma22 != 0.0):
        noise = noise_rng.standard_normal((steps, n, 2))
        noise_mode = 1 if scenario.variant is riccati.Variant.STOCHASTIC_CONST \
            else 2
    else:
        noise = np.zeros((1, 1, 2))
        noise_mode = 0
    noise_scale = scenario.dt if scenario.legacy_dt_noise \
        else np.sqrt(scenario.dt)

    imp_idx = _impulse_plan(scenario)
    imp_map = np.full(steps + 1, -1, dtype=np.int64)
    rule = scenario.impulse_rule
    if len(imp_idx) > 0:
        imp_values = np.empty((len(imp_idx), n, 2))
        for row, k in enumerate(imp_idx):
            imp_map[k] = row
            if rule.kind == "uniform":
                imp_values[row, :, 0] = imp_rng.uniform(-rule.ax, rule.ax, n)
                imp_values[row, :, 1] = imp_rng.uniform(-rule.ay, rule.ay, n)
            else:
                imp_values[row] = _draw_initial(scenario, params, imp_rng)
        imp_mode = 0 if rule.kind == "uniform" else 1
    else:
        imp_values = np.zeros((1, 1, 2))
        imp_mode = 0

    # the optional re-linearization mode evaluates the temperature coupling
    # at each agent's own state instead of the frozen linearization point
    if scenario.drift_mode == "state_dependent":
        nonlin = 1
        kslope = params.beta - params.alpha
        kconst = params.alpha * params.x_on - params.beta * params.x_off
    else:
        nonlin, kslope, kconst = 0, 0.0, 0.0

    _kernels.population_sweep(out, schedule.M, schedule.b, scenario.dt,
                              noise, noise_mode, params.sigma11,
                              params.sigma22, noise_scale, params.x_on,
                              params.x_off, imp_map, imp_values, imp_mode,
                              nonlin, kslope, kconst)

    times = np.arange(steps + 1) * scenario.dt
    m_on, e, std_x, std_y = aggregate_history(out, params.m_on_bar)
    return RunRecord(times=times, states=out, m_on=m_on, e=e, std_x=std_x,
                     std_y=std_y, impulse_indices=imp_idx,
                     scenario=scenario, schedule=schedule,
                     r_on=params.r_on, r_off=params.r_off)
