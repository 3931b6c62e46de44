"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest -s tests/test_acceptance.py`` to see the per-criterion
lines; timings assume the JIT warmup fixture from conftest has run.
"""

import os
import time
from contextlib import contextmanager
from dataclasses import replace

import numpy as np

from tclgame import cli, meanfield, model, riccati, simulate, stability
from tclgame.model import ModelParams
from tclgame.riccati import Variant

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")


@contextmanager
def criterion(number, label):
    try:
        yield
    except BaseException:
        print("[acceptance] criterion %2d (%s): FAIL" % (number, label))
        raise
    print("[acceptance] criterion %2d (%s): PASS" % (number, label))


def test_c01_variant_reduction_lattice(table1):
    with criterion(1, "variant reduction lattice"):
        T, K = 10.0, 2000

        def timed_solve(params, variant):
            start = time.perf_counter()
            traj = riccati.solve_backward(params, variant, None, T=T, K=K)
            assert time.perf_counter() - start < 1.0
            return traj

        det = timed_solve(table1, Variant.DETERMINISTIC)

        zero_noise = timed_solve(ModelParams(sigma11=0.0, sigma22=0.0),
                                 Variant.STOCHASTIC_STATE_DEP)
        assert np.abs(zero_noise.P - det.P).max() <= 1e-10
        assert np.abs(zero_noise.Psi - det.Psi).max() <= 1e-10
        assert np.abs(zero_noise.chi - det.chi).max() <= 1e-10

        noisy = ModelParams(sigma11=0.3, sigma22=0.2)
        det_noisy = timed_solve(noisy, Variant.DETERMINISTIC)
        const = timed_solve(noisy, Variant.STOCHASTIC_CONST)
        assert np.array_equal(const.P, det_noisy.P)
        assert np.array_equal(const.Psi, det_noisy.Psi)
        assert np.abs(const.chi - det_noisy.chi).max() > 0.0

        robust = timed_solve(ModelParams(gamma=1e6), Variant.ROBUST)
        gap = max(np.abs(robust.P - det.P).max(),
                  np.abs(robust.Psi - det.Psi).max(),
                  np.abs(robust.chi - det.chi).max())
        assert gap <= 1e-6


def test_c02_hjb_residual_all_variants():
    with criterion(2, "HJB residual < 1e-6 at K=1e4"):
        params = ModelParams(sigma11=0.2, sigma22=0.1, gamma=10.0)
        rng = np.random.default_rng(424242)
        T, K = 2.0, 10000
        start = time.perf_counter()
        for variant in Variant:
            traj = riccati.solve_backward(params, variant,
                                          lambda t: 0.1 * np.sin(t),
                                          T=T, K=K)
            samples = [(np.array([rng.uniform(-10, 10), rng.uniform(0, 1)]),
                        rng.uniform(0, T)) for _ in range(1000)]
            res = riccati.hjb_residual(traj, params, samples)
            assert res < 1e-6, (variant, res)
        assert time.perf_counter() - start < 10.0


def test_c03_are_correctness(table1, table1_mats):
    with criterion(3, "algebraic Riccati correctness"):
        P = riccati.solve_are(table1)
        A = table1_mats.A(0.0)
        Qp = table1_mats.Q + np.diag([0.0, 1e-6])
        residual = A.T @ P + P @ A - P @ table1_mats.G @ P + Qp
        assert np.abs(residual).max() < 1e-9
        assert np.linalg.eigvals(A - table1_mats.G @ P).real.max() < 0.0

        synthetic = riccati.solve_are_matrices(-np.eye(2), np.eye(2),
                                               np.eye(2), np.eye(2))
        assert np.abs(synthetic
                      - (np.sqrt(2.0) - 1.0) * np.eye(2)).max() <= 1e-10


def test_c04_mean_field_fixed_point(table1):
    with criterion(4, "mean-field fixed point"):
        sol = meanfield.fixed_point(table1, Variant.DETERMINISTIC,
                                    (0.0, 0.5), T=30.0, K=300, damping=0.5,
                                    tol=1e-8, max_iter=200)
        assert sol.final_gap < 1e-8
        assert sol.iterations <= 200
        assert sol.residual < 2e-8

        decoupled = meanfield.fixed_point(ModelParams(S=0.0),
                                          Variant.DETERMINISTIC, (0.0, 0.5),
                                          T=30.0, K=300, damping=0.5,
                                          tol=1e-8, max_iter=200)
        assert decoupled.iterations == 1


def test_c05_impulse_recovery(table1):
    with criterion(5, "impulse recovery within each epoch"):
        scenario = simulate.ScenarioConfig(n_agents=100, dt=0.1, steps=300,
                                           impulse_period=10.0, seed=1234)
        start = time.perf_counter()
        record = simulate.run(scenario, table1)
        elapsed = time.perf_counter() - start
        assert elapsed < 5.0

        gain = record.schedule.M[0]
        eq_set = stability.equilibrium_point(gain, record.schedule.b[0])
        assert eq_set.kind == "point"
        X_star = eq_set.X_star
        epochs = ((0, 99), (100, 199), (200, 300))
        for post_idx, end_idx in epochs:
            d_post = np.linalg.norm(record.states[post_idx] - X_star, axis=1)
            d_end = np.linalg.norm(record.states[end_idx] - X_star, axis=1)
            fraction = np.mean(d_end < 0.1 * d_post)
            assert fraction >= 0.95, (post_idx, fraction)


def test_c06_zero_noise_equivalence(table1):
    with criterion(6, "zero-noise byte equivalence"):
        det = simulate.ScenarioConfig(n_agents=80, steps=250, seed=99)
        sto = replace(det, variant=Variant.STOCHASTIC_CONST)
        a = simulate.run(det, table1)
        b = simulate.run(sto, table1)
        assert a.states.tobytes() == b.states.tobytes()
        assert a.m_on.tobytes() == b.m_on.tobytes()
        assert a.std_x.tobytes() == b.std_x.tobytes()
        geo = replace(det, variant=Variant.STOCHASTIC_STATE_DEP)
        c = simulate.run(geo, table1)
        assert a.states.tobytes() == c.states.tobytes()


def test_c07_mean_field_consistency(table1):
    with criterion(7, "mean-field consistency at N=1e4"):
        start = time.perf_counter()
        eq = meanfield.fixed_point(table1, Variant.DETERMINISTIC,
                                   (0.0, 0.5), T=30.0, K=300)
        scenario = simulate.ScenarioConfig(
            variant=Variant.DETERMINISTIC, n_agents=10000, steps=300,
            impulse_period=0.0, seed=5, closure="full_mean_field",
            x0_mean=0.0, x0_std=1.0, y0_mode="uniform", y0_low=0.3,
            y0_high=0.7)
        schedule = simulate.schedule_from_equilibrium(eq, table1, scenario)
        record = simulate.run(scenario, table1, schedule=schedule)
        empirical_mean = record.states.mean(axis=1)
        macroscopic = meanfield.propagate_macroscopic(
            eq.riccati, table1, empirical_mean[0], Variant.DETERMINISTIC)
        assert np.abs(empirical_mean - macroscopic).max() < 1e-2
        assert time.perf_counter() - start < 30.0


def test_c08_langevin_second_moment_bound():
    with criterion(8, "Langevin second-moment boundedness"):
        params = ModelParams(sigma11=0.05, sigma22=0.05)
        P = riccati.solve_are(params)
        mats = model.assemble(params)
        gain = mats.A(0.0) - mats.G @ P
        X_star = np.array([0.0, 0.5])
        affine = -gain @ X_star
        steps, n = 600, 200
        schedule = simulate.schedule_from_constant(gain, affine, P,
                                                   np.zeros(2), steps)
        runs = []
        for seed in range(50):
            scenario = simulate.ScenarioConfig(
                variant=Variant.STOCHASTIC_CONST, n_agents=n, steps=steps,
                impulse_period=0.0, seed=seed, x0_mean=0.0, x0_std=0.0,
                y0_mode="constant", y0_value=0.5)
            runs.append(simulate.run(scenario, params, schedule=schedule))

        eq_set = stability.equilibrium_point(gain, affine)
        box = ((X_star[0] - 0.5, X_star[0] + 0.5),
               (X_star[1] - 0.1, X_star[1] + 0.1))
        report = stability.check_second_moment(
            runs, box, Variant.STOCHASTIC_CONST, params,
            stability.closed_loop_drift(gain, affine), eq_set)
        emp = report.empirical
        assert emp["slope"] <= 3.0 * emp["slope_se"]

        # independent oracle: stationary covariance of the discrete update,
        # obtained by brute-force iteration of the covariance recursion
        dt = runs[0].scenario.dt
        Phi = np.eye(2) + dt * gain
        noise_cov = dt * np.diag([params.sigma11 ** 2, params.sigma22 ** 2])
        Sigma = np.zeros((2, 2))
        for _ in range(20000):
            Sigma = Phi @ Sigma @ Phi.T + noise_cov
        stationary = np.trace(Sigma)
        half = len(emp["moment"]) // 2
        assert emp["moment"][half:].max() <= 2.0 * stationary


def test_c09_geometric_noise_attenuation(tmp_path):
    with criterion(9, "geometric noise attenuation at epoch ends"):
        cfg = cli.ExperimentConfig(
            params=ModelParams(sigma11=0.2, sigma22=0.1),
            scenario=simulate.ScenarioConfig(
                n_agents=400, dt=0.1, steps=300, impulse_period=10.0,
                seed=1234),
            output=cli.OutputConfig(dir=str(tmp_path)))
        table = cli.compare_variants(cfg)
        ends = (99, 199, 300)
        const_x = table["std_x_stochastic_const"]
        geom_x = table["std_x_stochastic_statedep"]
        wins = sum(geom_x[k] < const_x[k] for k in ends)
        assert wins >= 2


def test_c10_hamiltonian_saddle(table1, table1_mats):
    with criterion(10, "Hamiltonian saddle at the feedback laws"):
        rng = np.random.default_rng(777)
        directions = [np.array([np.cos(a), np.sin(a)])
                      for a in np.linspace(0, 2 * np.pi, 8, endpoint=False)]
        traj = riccati.solve_backward(table1, Variant.DETERMINISTIC,
                                      lambda t: 0.05 * np.cos(t), T=10.0,
                                      K=2000)
        for _ in range(100):
            X = np.array([rng.uniform(-10, 10), rng.uniform(0, 1)])
            P, Psi, _, e = traj.interpolate(rng.uniform(0, 10))
            u = riccati.control_law(P, Psi, table1_mats.R, table1_mats.B, X)
            base = riccati.hamiltonian(table1, P, Psi, X, u, e)
            for d in directions:
                perturbed = model.ControlInput(u.u_on + 1e-2 * d[0],
                                               u.u_off + 1e-2 * d[1])
                assert riccati.hamiltonian(table1, P, Psi, X, perturbed,
                                           e) > base

        robust_params = ModelParams(gamma=5.0)
        robust_mats = model.assemble(robust_params)
        rtraj = riccati.solve_backward(robust_params, Variant.ROBUST,
                                       lambda t: 0.05 * np.cos(t), T=10.0,
                                       K=2000)
        for _ in range(100):
            X = np.array([rng.uniform(-10, 10), rng.uniform(0, 1)])
            P, Psi, _, e = rtraj.interpolate(rng.uniform(0, 10))
            u = riccati.control_law(P, Psi, robust_mats.R, robust_mats.B, X)
            w = riccati.worst_case_disturbance(P, Psi, robust_mats.D,
                                               robust_params.gamma, X)
            base = riccati.hamiltonian(robust_params, P, Psi, X, u, e, w=w)
            for d in directions:
                assert riccati.hamiltonian(robust_params, P, Psi, X, u, e,
                                           w=w + 1e-2 * d) < base


def test_c11_stability_checker_soundness():
    with criterion(11, "stability checker scalar oracle"):
        eq_set = stability.equilibrium_point(-np.eye(2), np.zeros(2))
        drift = stability.closed_loop_drift(np.diag([-1.0, 0.0]),
                                            np.zeros(2))
        xs = np.concatenate([np.linspace(-3, -0.01, 60),
                             np.linspace(0.01, 3, 60)])
        states = np.column_stack([xs, np.zeros_like(xs)])
        report = stability.check_asymptotic(states, np.zeros_like(xs),
                                            eq_set, drift, delta=1e-9)
        assert np.array_equal(report.satisfied, np.abs(xs) < 1.0)


def test_c12_shipped_config_reproducibility(tmp_path):
    with criterion(12, "shipped config reproducibility"):
        names = sorted(n for n in os.listdir(CONFIG_DIR)
                       if n.endswith(".cfg"))
        assert names
        for name in names:
            cfg = cli.parse_config_file(os.path.join(CONFIG_DIR, name))
            manifests = []
            for attempt in range(2):
                outdir = tmp_path / ("%s-%d" % (name, attempt))
                run_cfg = replace(cfg, output=replace(cfg.output,
                                                      dir=str(outdir)))
                cli.run_experiment(run_cfg)
                with open(outdir / (cfg.output.prefix + "manifest.json"),
                          "rb") as fh:
                    manifests.append(fh.read())
            assert manifests[0] == manifests[1], name
