"""Acceptance suite: every exit criterion at its stated tolerance.

Each test prints one line (visible with -s or on failure) of the form
  ACCEPTANCE <id>: <name> value=<v> tolerance=<tol> PASS|FAIL
"""

import numpy as np
import pytest

from orthoflux.ao import AoModel, ao_field_model, ao_orthogonality_check
from orthoflux.fields import (MatrixField, ScalarField, VectorField,
                              eta_from_phi, orthogonality_residual, sample_box)
from orthoflux.grid import (DensityField, Grid, build_operator,
                            build_operator_ito, equilibrium_density,
                            evolve_omega, run_forward, stationary_residual)
from orthoflux.linear import LinearModel, linear_equilibrium_fields
from orthoflux.models import MODEL_REGISTRY, make_model, rotational_ou
from orthoflux.perturbation import (EpsilonModel, residual_phi0, residual_phi1,
                                    residual_phi2, reversal_classify)
from orthoflux.sde import (SimConfig, estimate_ep_pathwise,
                           reverse_model, sample_stationary, simulate,
                           two_time_joint_test)
from orthoflux.thermo import balance_check, h_functional, thermo_series, thermo_snapshot

RNG_SEED = 2024


def report(cid, name, value, tol, ok):
    print(f"ACCEPTANCE {cid}: {name} value={value} tolerance={tol} "
          f"{'PASS' if ok else 'FAIL'}")
    assert ok, f"criterion {cid} ({name}): {value} vs tolerance {tol}"


def displaced_gaussian(grid, shift=1.0):
    mu = np.zeros(grid.dim)
    mu[0] = shift
    return DensityField.from_function(
        grid, lambda p: np.exp(-((p - mu) ** 2).sum(axis=1) / 2))


def random_hurwitz(rng, n):
    G = rng.standard_normal((n, n))
    B = G - (np.linalg.eigvals(G).real.max() + 0.7) * np.eye(n)
    A = rng.standard_normal((n, n))
    D = A @ A.T + 0.3 * np.eye(n)
    D /= np.linalg.norm(D, 2)
    return B, D


def random_ao(rng, n):
    W = rng.standard_normal((n, n))
    S = W @ W.T
    S = S / np.linalg.norm(S, 2) + 0.3 * np.eye(n)
    R = rng.standard_normal((n, n))
    A = (R - R.T) / 2.0
    A /= max(np.linalg.norm(A, 2), 1.0)
    M = rng.standard_normal((n, n))
    MS = M @ M.T
    Q = np.linalg.inv(MS / np.linalg.norm(MS, 2) + 0.5 * np.eye(n))
    Q = 0.5 * (Q + Q.T)
    phi = ScalarField(lambda p, Q=Q: 0.5 * np.einsum("mi,ij,mj->m", p, Q, p), n,
                      grad=lambda p, Q=Q: p @ Q.T)
    sig = 6.0 * np.sqrt(np.diag(np.linalg.inv(Q)))
    box = np.stack([-sig, sig], axis=1)
    return AoModel(S=MatrixField(S, n), A=MatrixField(A, n), phi=phi, box=box)


@pytest.fixture(scope="module")
def rot_balance_run():
    """Displaced-Gaussian relaxation of the rotating model on a 128^2 grid."""
    m = rotational_ou(1.0, 1.0, 1.0)
    grid = Grid(m.box, (128, 128))
    op = build_operator(grid, m)
    dt = 0.9 * op.dt_bound()
    n = int(np.ceil(1.0 / dt))
    records = thermo_series(op, displaced_gaussian(grid), 1.0 / n, n)
    return m, grid, op, records


class TestCriterion1Stationarity:
    def test_residual_order_and_longtime_l1(self):
        m = rotational_ou(1.0, 1.0, 1.0)
        res = [stationary_residual(Grid(m.box, (N, N)), m)["res_full"]
               for N in (64, 128)]
        order = float(np.log2(res[0] / res[1]))
        report(1, "stationarity residual order (64^2 -> 128^2)", order, ">= 1.8",
               order >= 1.8)

        grid = Grid(m.box, (64, 64))
        op = build_operator(grid, m)
        dt = 0.9 * op.dt_bound()
        n = int(np.ceil(8.0 / dt))
        u, _ = run_forward(op, displaced_gaussian(grid), 8.0 / n, n)
        ueq = equilibrium_density(grid, m)
        l1 = float(np.abs(u.values - ueq.values).sum() * grid.cell_volume)
        report(1, "long-time L1 distance to e^{-phi}", l1, 1e-3, l1 <= 1e-3)


class TestCriterion2Orthogonality:
    def test_zoo_and_random_linear(self):
        rng = np.random.default_rng(RNG_SEED)
        worst = 0.0
        for name in MODEL_REGISTRY:
            model = make_model(name)
            probes = sample_box(model.box, 100, rng)
            worst = max(worst, orthogonality_residual(model.phi, model.g,
                                                      probes)["max_abs"])
        worst_anti = 0.0
        for _ in range(50):
            B, D = random_hurwitz(rng, int(rng.integers(2, 5)))
            lm = LinearModel(B, D)
            model = linear_equilibrium_fields(lm)
            probes = sample_box(model.box, 40, rng)
            worst = max(worst, orthogonality_residual(model.phi, model.g,
                                                      probes)["max_abs"])
            worst_anti = max(worst_anti, lm.rotation_antisymmetry())
        report(2, "orthogonality residual (zoo + 50 random linear)", worst,
               1e-10, worst <= 1e-10)
        report(2, "antisymmetry of Sigma^-1 (B + D Sigma^-1)", worst_anti,
               1e-10, worst_anti <= 1e-10)


class TestCriterion3SecondLaw:
    def test_balance_and_monotonicity(self, rot_balance_run):
        _, _, _, records = rot_balance_run
        res = balance_check(records)
        report(3, "max |dF/dt + ep|", res["max_dF_residual"], 1e-3,
               res["max_dF_residual"] <= 1e-3)
        report(3, "max increase of F", res["max_F_increase"], 1e-10,
               res["max_F_increase"] <= 1e-10)

    def test_reversible_closed_form(self):
        m = rotational_ou(1.0, 0.0, 1.0, n_sigma=5.5)
        grid = Grid(m.box, (224, 224))
        op = build_operator(grid, m)
        dt = 0.9 * op.dt_bound()
        n = int(np.ceil(1.0 / dt))
        dt = 1.0 / n
        samples = []

        def observe(step, u):
            if step % 64 == 0 or step == n:
                samples.append((step * dt, thermo_snapshot(u, op).F))

        run_forward(op, displaced_gaussian(grid), dt, n, observer=observe)
        err = max(abs(F - 0.5 * np.exp(-2.0 * t)) for t, F in samples)
        report(3, "reversible case F(t) vs e^{-2t}/2", err, 1e-4, err <= 1e-4)


class TestCriterion4EntropyBalance:
    def test_ds_dt_balance(self, rot_balance_run):
        _, _, _, records = rot_balance_run
        res = balance_check(records)
        report(4, "max |dS/dt - ep + hd|", res["max_dS_residual"], 1e-3,
               res["max_dS_residual"] <= 1e-3)


class TestCriterion5CurrentIndependence:
    def test_reversed_current_same_dissipation(self):
        m = rotational_ou(1.0, 1.0, 1.0)
        grid = Grid(m.box, (64, 64))
        op = build_operator(grid, m)
        op_rev = build_operator(grid, reverse_model(m))
        dt = 0.9 * op.dt_bound()
        u0 = displaced_gaussian(grid)
        fwd = thermo_series(op, u0, dt, 150)
        rev = thermo_series(op_rev, u0, dt, 150)
        gap = max(max(abs(a.ep - b.ep), abs(a.hd - b.hd))
                  for a, b in zip(fwd, rev))
        report(5, "ep/hd series gap between (phi, g) and (phi, -g)", gap,
               1e-10, gap <= 1e-10)


class TestCriterion6ReversalSymmetry:
    def test_two_time_joint_distance(self):
        m = rotational_ou(1.0, 1.0, 1.0)
        cfg = SimConfig(dt=0.01, T=0.5, n_paths=100_000, seed=RNG_SEED,
                        initial=np.zeros(2))
        res = two_time_joint_test(m, t_lag=0.5, bins=4, cfg=cfg)
        ratio = res["distance"] / res["baseline"]
        control_ratio = res["control"] / res["baseline"]
        report(6, "joint TV distance / baseline", ratio, 2.0, ratio <= 2.0)
        report(6, "unreversed control / baseline", control_ratio, ">= 5",
               control_ratio >= 5.0)


class TestCriterion7AoConsistency:
    def test_random_ao_models(self):
        rng = np.random.default_rng(RNG_SEED)
        worst = 0.0
        for _ in range(20):
            ao = random_ao(rng, int(rng.integers(2, 5)))
            probes = sample_box(ao.box * 0.5, 50, rng)
            worst = max(worst, ao_orthogonality_check(ao, probes)["max_abs"])
            model = ao_field_model(ao)
            worst = max(worst, orthogonality_residual(model.phi, model.g,
                                                      probes)["max_abs"])
        report(7, "grad phi . J residual over 20 random constructions", worst,
               1e-10, worst <= 1e-10)

    def test_assembled_model_passes_grid_criteria(self):
        rng = np.random.default_rng(RNG_SEED + 1)
        ao = random_ao(rng, 2)
        model = ao_field_model(ao)
        res = [stationary_residual(Grid(model.box, (N, N)), model)["res_full"]
               for N in (48, 96)]
        order = float(np.log2(res[0] / res[1]))
        report(7, "assembled model stationarity order", order, ">= 1.8",
               order >= 1.8)
        grid = Grid(model.box, (64, 64))
        op = build_operator(grid, model)
        dt = 0.9 * op.dt_bound()
        n = int(np.ceil(20.0 / dt))
        u0 = DensityField.from_function(
            grid, lambda p: np.exp(-((p - 0.3 * model.box[:, 1]) ** 2).sum(1)))
        u, _ = run_forward(op, u0, 20.0 / n, n)
        ueq = equilibrium_density(grid, model)
        l1 = float(np.abs(u.values - ueq.values).sum() * grid.cell_volume)
        report(7, "assembled model long-time L1", l1, 1e-3, l1 <= 1e-3)

    def test_zero_antisymmetric_part_kills_current(self):
        phi = ScalarField(lambda p: 0.5 * (p ** 2).sum(1), 2, grad=lambda p: p.copy())
        ao = AoModel(S=MatrixField(np.eye(2), 2),
                     A=MatrixField(np.zeros((2, 2)), 2), phi=phi,
                     box=np.array([[-6.0, 6.0]] * 2))
        model = ao_field_model(ao)
        rng = np.random.default_rng(RNG_SEED)
        val = float(np.max(np.abs(model.g(sample_box(ao.box, 50, rng)))))
        report(7, "A = 0 current", val, 0.0, val == 0.0)


class TestCriterion8KleinKramers:
    def test_analytic_orthogonality(self):
        m = make_model("klein_kramers")
        rng = np.random.default_rng(RNG_SEED)
        res = orthogonality_residual(m.phi, m.g, sample_box(m.box, 200, rng))
        report(8, "Newtonian-subsystem g . grad phi", res["max_abs"], 1e-14,
               res["max_abs"] <= 1e-14)

    def test_velocity_marginal_variance(self):
        m = make_model("klein_kramers")  # mass = kBT = 1
        n_paths, spacing, n_slices, dt = 5000, 0.5, 20, 0.005
        x0 = sample_stationary(m, n_paths, seed=RNG_SEED)
        stride = int(round(spacing / dt))
        T = spacing * (n_slices - 1)
        cfg = SimConfig(dt=dt, T=T, n_paths=n_paths, seed=RNG_SEED + 1,
                        initial=x0, store_stride=stride)
        ens = simulate(m, cfg)
        ys = ens.paths[:, :, 1]
        n_samples = ys.size
        var = float(ys.var(ddof=1))
        # inflate the iid standard error by the measured slice autocorrelation
        y2 = ys ** 2 - ys.mean() ** 2
        rho = np.corrcoef(y2[:, :-1].ravel(), y2[:, 1:].ravel())[0, 1]
        rho = max(rho, 0.0)
        se = var * np.sqrt(2.0 / n_samples) * np.sqrt((1 + rho) / (1 - rho))
        dev = abs(var - 1.0)
        report(8, f"velocity variance vs kBT/m ({n_samples} samples)", dev,
               3 * se, dev <= 3 * se)


class TestCriterion9FormEquivalence:
    def test_constant_diffusion(self):
        m = rotational_ou(1.0, 1.0, 1.0)
        grid = Grid(m.box, (48, 48))
        op = build_operator(grid, m)
        op_ito = build_operator_ito(grid, m, eta_from_phi(m.D, m.phi))
        gap = abs(op.matrix - op_ito.matrix).max()
        scale = float(np.max(np.abs(op.matrix.data)))
        report(9, "Ito vs divergence form, constant D (entrywise)", gap,
               1e-10 * scale, gap <= 1e-10 * scale)

    def test_state_dependent_diffusion(self):
        phi = ScalarField(lambda p: 0.5 * (p ** 2).sum(1), 2, grad=lambda p: p.copy())
        g = VectorField(lambda p: np.stack([p[:, 1], -p[:, 0]], -1), 2,
                        div=lambda p: np.zeros(p.shape[0]))

        def D_fn(p):
            out = np.zeros((p.shape[0], 2, 2))
            out[:, 0, 0] = 1.0 + 0.25 * p[:, 1] ** 2
            out[:, 1, 1] = 1.0 + 0.25 * p[:, 0] ** 2
            return out

        from orthoflux.fields import FieldModel
        m = FieldModel(phi=phi, g=g, D=MatrixField(D_fn, 2),
                       box=np.array([[-5.0, 5.0], [-5.0, 5.0]]))
        grid = Grid(m.box, (32, 32))
        op = build_operator(grid, m)
        op_ito = build_operator_ito(grid, m, eta_from_phi(m.D, m.phi))
        gap = abs(op.matrix - op_ito.matrix).max()
        scale = float(np.max(np.abs(op.matrix.data)))
        report(9, "Ito vs divergence form, state-dependent D (entrywise)", gap,
               1e-10 * scale, gap <= 1e-10 * scale)


class TestCriterion10HTheorem:
    def test_monotone_and_consistent(self):
        worst_inc = 0.0
        worst_gap = 0.0
        for name in ("rotational_ou", "stochastic_hamiltonian", "ao_linear"):
            model = make_model(name)
            if model.singular_diffusion:
                continue
            grid = Grid(model.box, (64, 64))
            op = build_operator(grid, model)
            dt = 0.9 * op.dt_bound()
            u = displaced_gaussian(grid, shift=0.25 * float(model.box[0, 1]))
            shift = op.phi_cells - op.phi_cells.min()
            lz = np.log(np.sum(np.exp(-shift)) * grid.cell_volume)
            om = u.flat * np.exp(shift + lz)
            prev = h_functional(om, op)
            from orthoflux.grid import step_forward
            for _ in range(200):
                om = evolve_omega(om, op, dt)
                u = step_forward(u, op, dt)
                val = h_functional(om, op)
                worst_inc = max(worst_inc, val - prev)
                prev = val
            om_u = u.flat * np.exp(shift + lz)
            worst_gap = max(worst_gap,
                            float(np.max(np.abs(om - om_u)) / np.max(np.abs(om))))
        report(10, "H-functional increase over 200 steps (3 models)", worst_inc,
               1e-10, worst_inc <= 1e-10)
        report(10, "Omega vs u e^{phi} consistency", worst_gap, 1e-8,
               worst_gap <= 1e-8)


class TestCriterion11Perturbation:
    def test_expansion_residuals_on_zoo(self):
        rng = np.random.default_rng(RNG_SEED)
        worst = 0.0
        for name in MODEL_REGISTRY:
            model = make_model(name)
            zero = ScalarField(lambda p: np.zeros(p.shape[0]), model.dim,
                               grad=lambda p: np.zeros_like(p))
            b = VectorField(lambda p, m=model: m.drift(p), model.dim)
            em = EpsilonModel(b=b, D=model.D, epsilon=0.1, phi0=model.phi,
                              phi1=zero, phi2=zero)
            probes = sample_box(model.box * 0.7, 100, rng)
            worst = max(worst, residual_phi0(em, probes)["residual"],
                        residual_phi1(em, probes), residual_phi2(em, probes))
        report(11, "expansion residuals (orders 0-2, zoo models)", worst, 1e-10,
               worst <= 1e-10)

    def test_linear_models_classified(self):
        rng = np.random.default_rng(RNG_SEED + 2)
        labels = set()
        for _ in range(50):
            B, D = random_hurwitz(rng, int(rng.integers(2, 5)))
            model = linear_equilibrium_fields(LinearModel(B, D))
            b = VectorField(lambda p, m=model: m.drift(p), model.dim)
            probes = sample_box(model.box * 0.7, 40, rng)
            out = reversal_classify(b, model.D, model.phi, probes)
            labels.add(out["label"])
        ok = labels <= {"overdamped", "underdamped"}
        report(11, "reversal labels over 50 random linear models",
               sorted(labels), "never 'neither'", ok)


class TestCriterion12PathwiseEstimator:
    def test_estimator_matches_grid_functional(self):
        m = rotational_ou(1.0, 0.0, 1.0)
        grid = Grid(m.box, (64, 64))
        op = build_operator(grid, m)
        window = 0.4
        results = {}
        for dt in (0.008, 0.004):
            n_sde = int(round(window / dt))
            sub = max(1, int(np.ceil(dt / (0.9 * op.dt_bound()))))
            u = displaced_gaussian(grid)
            series = [u]
            ep_grid = [thermo_snapshot(u, op).ep]
            for _ in range(n_sde):
                for _ in range(sub):
                    from orthoflux.grid import step_forward
                    u = step_forward(u, op, dt / sub)
                series.append(u)
                ep_grid.append(thermo_snapshot(u, op).ep)
            cfg = SimConfig(dt=dt, T=n_sde * dt, n_paths=20_000,
                            seed=RNG_SEED + 3,
                            initial=("gaussian", np.array([1.0, 0.0]), np.eye(2)))
            ens = simulate(m, cfg)
            out = estimate_ep_pathwise(ens, m, series)
            mc = float(out["ep"].mean())
            se = float(np.sqrt((out["stderr"] ** 2).mean() / len(out["stderr"])))
            grid_val = float(0.5 * (np.array(ep_grid[:-1])
                                    + np.array(ep_grid[1:])).mean())
            results[dt] = (mc, se, grid_val)
        bias_bound = 2.0 * abs(results[0.008][0] - results[0.004][0])
        for dt, (mc, se, grid_val) in results.items():
            dev = abs(mc - grid_val)
            tol = 3.0 * se + bias_bound
            report(12, f"pathwise ep vs grid ep (dt={dt})", dev, tol, dev <= tol)
