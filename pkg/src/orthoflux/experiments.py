"""Experiment runners: seeded runs producing CSV tables, a manifest, and
figure files.  CSV output is deterministic for a fixed config and seed
(LF endings, 17-significant-digit scientific notation).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .fields import VectorField, sample_box
from .grid import (DensityField, Grid, build_operator, equilibrium_density,
                   run_forward, stationary_residual)
from .linear import LinearModel, gaussian_flow_oracle
from .models import make_model
from .perturbation import (EpsilonModel, residual_phi0, residual_phi1,
                           residual_phi2, reversal_classify)
from .sde import (SimConfig, sample_stationary, simulate,
                  two_time_joint_test)
from .thermo import balance_check, records_csv, thermo_series

__all__ = ["run_experiment", "CSV_SCHEMA_VERSION"]

CSV_SCHEMA_VERSION = 1


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return "%.16e" % float(v)


def _write_csv(path: Path, header: list, rows: list) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _summary(out: Path, checks: list) -> bool:
    _write_csv(out / "summary.csv",
               ["check", "value", "tolerance", "pass"],
               [(name, val, tol, ok) for name, val, tol, ok in checks])
    return all(ok for _, _, _, ok in checks)


def _default_grid(model, cfg: ExperimentConfig, fallback=(64, 64)) -> Grid:
    cells = cfg.grid_cells or fallback
    box = np.asarray(cfg.grid_box, dtype=float) if cfg.grid_box else model.box
    return Grid(box, cells)


def _displaced_gaussian(grid: Grid, shift: float) -> DensityField:
    mu = np.zeros(grid.dim)
    mu[0] = shift
    return DensityField.from_function(
        grid, lambda p: np.exp(-((p - mu) ** 2).sum(axis=1) / 2.0))


def _run_stationarity(model, cfg: ExperimentConfig, out: Path, plots: bool) -> list:
    if model.singular_diffusion:
        return _run_stationarity_ensemble(model, cfg, out, plots)
    base = cfg.grid_cells or (64,) * model.dim
    refine = int(cfg.run.get("refine", 2))
    tol_l1 = cfg.run.get("tolerance", 1e-3)
    rows, hs, res_f, res_c = [], [], [], []
    for level in range(refine):
        grid = Grid(np.asarray(cfg.grid_box, dtype=float) if cfg.grid_box
                    else model.box, [c * 2 ** level for c in base])
        r = stationary_residual(grid, model)
        hs.append(float(grid.spacing.min()))
        res_f.append(r["res_full"])
        res_c.append(r["res_conservative"])
        rows.append((grid.counts[0], hs[-1], r["res_full"], r["res_conservative"]))
    _write_csv(out / "residuals.csv", ["cells", "h", "res_full", "res_conservative"], rows)
    order = np.log2(res_f[0] / res_f[-1]) / (refine - 1) if refine > 1 else float("nan")

    # long-time relaxation on the base grid
    grid = Grid(np.asarray(cfg.grid_box, dtype=float) if cfg.grid_box else model.box, base)
    op = build_operator(grid, model)
    dt = 0.9 * op.dt_bound()
    T = cfg.run.get("t_final", 8.0)
    n = int(np.ceil(T / dt))
    u0 = _displaced_gaussian(grid, cfg.run.get("displacement", 1.0))
    u, _ = run_forward(op, u0, T / n, n)
    ueq = equilibrium_density(grid, model)
    l1 = float(np.abs(u.values - ueq.values).sum() * grid.cell_volume)
    if plots:
        from .plots import plot_density, plot_residual_decay
        plot_residual_decay(hs, {"res_full": res_f, "res_conservative": res_c}, out)
        plot_density(u, out, "density_final.png", "long-time density")
    return [("residual_order", order, 1.8, order >= 1.8),
            ("long_time_l1", l1, tol_l1, l1 <= tol_l1)]


def _run_stationarity_ensemble(model, cfg: ExperimentConfig, out: Path,
                               plots: bool) -> list:
    tol = cfg.run.get("tolerance", 0.05)
    sim = cfg.sim or {}
    n_paths = int(sim.get("n_paths", 2000))
    dt = sim.get("dt", 0.005)
    T = sim.get("t", 28.0)
    stride = int(sim.get("store_stride", max(int(1.0 / dt), 1)))
    x0 = sample_stationary(model, n_paths, cfg.seed)
    scfg = SimConfig(dt=dt, T=T, n_paths=n_paths, seed=cfg.seed,
                     initial=x0, store_stride=stride)
    ens = simulate(model, scfg)
    burn = max(1, int(3.0 / (stride * dt)))
    samples = ens.paths[:, burn:, :].reshape(-1, model.dim)

    bins = int(cfg.run.get("bins", 16))
    grid = Grid(model.box, (bins,) * model.dim)
    hist, _ = np.histogramdd(samples, bins=[np.linspace(lo, hi, bins + 1)
                                            for lo, hi in model.box])
    hist = hist / (hist.sum() * grid.cell_volume)
    ref = equilibrium_density(Grid(model.box, (4 * bins,) * model.dim), model)
    coarse = ref.values.reshape(*sum(((bins, 4),) * model.dim, ())) \
        .mean(axis=tuple(range(1, 2 * model.dim, 2)))
    coarse = coarse / (coarse.sum() * grid.cell_volume)
    l1 = float(np.abs(hist - coarse).sum() * grid.cell_volume)
    rows = [(i, float(c)) for i, c in enumerate(hist.ravel())]
    _write_csv(out / "ensemble_histogram.csv", ["bin", "density"], rows)
    if plots:
        from .plots import plot_density
        plot_density(DensityField(grid, hist), out, "ensemble_density.png",
                     "ensemble histogram")
    return [("ensemble_l1", l1, tol, l1 <= tol)]


def _run_thermo_balance(model, cfg: ExperimentConfig, out: Path, plots: bool) -> list:
    grid = _default_grid(model, cfg, fallback=(128,) * model.dim)
    op = build_operator(grid, model)
    dt = 0.9 * op.dt_bound()
    T = cfg.run.get("t_final", 1.0)
    n = int(np.ceil(T / dt))
    tol = cfg.run.get("tolerance", 1e-3)
    u0 = _displaced_gaussian(grid, cfg.run.get("displacement", 1.0))
    records = thermo_series(op, u0, T / n, n)
    with open(out / "thermo.csv", "w", newline="\n") as fh:
        fh.write(records_csv(records))
    res = balance_check(records)
    if plots:
        from .plots import plot_density, plot_thermo_series
        plot_thermo_series(records, out)
        plot_density(u0, out, "density_initial.png", "initial density")
    return [("max_dF_residual", res["max_dF_residual"], tol,
             res["max_dF_residual"] <= tol),
            ("max_dS_residual", res["max_dS_residual"], tol,
             res["max_dS_residual"] <= tol),
            ("max_F_increase", res["max_F_increase"], 1e-10,
             res["max_F_increase"] <= 1e-10)]


def _run_fig1_reversal(model, cfg: ExperimentConfig, out: Path, plots: bool) -> list:
    sim = cfg.sim or {}
    scfg = SimConfig(dt=sim.get("dt", 0.01), T=sim.get("t", 0.5),
                     n_paths=int(sim.get("n_paths", 100_000)), seed=cfg.seed,
                     initial=np.zeros(model.dim))
    bins = int(cfg.run.get("bins", 4))
    res = two_time_joint_test(model, cfg.run.get("t_lag", 0.5), bins, scfg)
    rows = [("distance", res["distance"]), ("baseline", res["baseline"]),
            ("control", res["control"])]
    _write_csv(out / "joint_distances.csv", ["quantity", "tv_distance"], rows)
    H_fwd = res["joint_forward"]
    H_rev = res["joint_reversed_swapped"]
    table = [(b0, b1, H_fwd[b0, b1], H_rev[b0, b1],
              res["joint_forward_repeat"][b0, b1])
             for b0 in range(H_fwd.shape[0]) for b1 in range(H_fwd.shape[1])]
    _write_csv(out / "joint_histogram.csv",
               ["start_bin", "end_bin", "p_forward", "p_reversed_swapped",
                "p_forward_repeat"], table)
    if plots:
        from .plots import plot_joint_histograms
        plot_joint_histograms(H_fwd, H_rev, out)
    ok = res["distance"] <= 2.0 * res["baseline"]
    return [("tv_distance_vs_2x_baseline", res["distance"],
             2.0 * res["baseline"], ok),
            ("control_vs_5x_baseline", res["control"], 5.0 * res["baseline"],
             res["control"] >= 5.0 * res["baseline"])]


def _run_ao_check(model, cfg: ExperimentConfig, out: Path, plots: bool) -> list:
    from .fields import MatrixField, ScalarField
    from .ao import AoModel, ao_field_model, ao_orthogonality_check
    from .fields import orthogonality_residual

    rng = np.random.default_rng(cfg.seed)
    trials = int(cfg.run.get("trials", 20))
    tol = cfg.run.get("tolerance", 1e-10)
    rows, worst_orth, worst_div = [], 0.0, 0.0
    for trial in range(trials):
        n = int(rng.integers(2, 5))
        W = rng.standard_normal((n, n))
        S = W @ W.T
        S = S / np.linalg.norm(S, 2) + 0.3 * np.eye(n)
        R = rng.standard_normal((n, n))
        A = (R - R.T) / 2.0
        A /= max(np.linalg.norm(A, 2), 1.0)
        Qm = rng.standard_normal((n, n))
        QS = Qm @ Qm.T
        Q = np.linalg.inv(QS / np.linalg.norm(QS, 2) + 0.5 * np.eye(n))
        Q = 0.5 * (Q + Q.T)
        phi = ScalarField(lambda p, Q=Q: 0.5 * np.einsum("mi,ij,mj->m", p, Q, p),
                          n, grad=lambda p, Q=Q: p @ Q.T)
        box = np.array([[-2.5, 2.5]] * n)
        ao = AoModel(S=MatrixField(S, n), A=MatrixField(A, n), phi=phi, box=box)
        probes = sample_box(box, 50, rng)
        r_ao = ao_orthogonality_check(ao, probes)["max_abs"]
        m = ao_field_model(ao)
        r_orth = orthogonality_residual(m.phi, m.g, probes)["max_abs"]
        r_div = float(np.max(np.abs(m.g.divergence(probes))))
        worst_orth = max(worst_orth, r_ao, r_orth)
        worst_div = max(worst_div, r_div)
        rows.append((trial, n, r_ao, r_orth, r_div))
    _write_csv(out / "ao_residuals.csv",
               ["trial", "dim", "current_orthogonality", "assembled_orthogonality",
                "assembled_divergence"], rows)
    return [("worst_orthogonality", worst_orth, tol, worst_orth <= tol),
            ("worst_divergence", worst_div, 1e-8, worst_div <= 1e-8)]


def _run_perturbation_check(model, cfg: ExperimentConfig, out: Path,
                            plots: bool) -> list:
    from .fields import ScalarField

    rng = np.random.default_rng(cfg.seed)
    probes = sample_box(model.box * 0.7, 100, rng)
    zero = ScalarField(lambda p: np.zeros(p.shape[0]), model.dim,
                       grad=lambda p: np.zeros_like(p))
    b = VectorField(lambda p: model.drift(p), model.dim)
    em = EpsilonModel(b=b, D=model.D, epsilon=cfg.run.get("epsilon", 0.1),
                      phi0=model.phi, phi1=zero, phi2=zero)
    r0 = residual_phi0(em, probes)
    r1 = residual_phi1(em, probes)
    r2 = residual_phi2(em, probes)
    cls = reversal_classify(b, model.D, model.phi, probes)
    tol = cfg.run.get("tolerance", 1e-10)
    _write_csv(out / "perturbation_residuals.csv",
               ["quantity", "value"],
               [("order0", r0["residual"]), ("order0_div_remainder", r0["div_remainder"]),
                ("order1", r1), ("order2", r2),
                ("classification", cls["label"]),
                ("j_norm", cls["j_norm"]), ("div_j", cls["div_j"]),
                ("orth_j", cls["orth_j"])])
    ok_cls = cls["label"] in ("overdamped", "underdamped")
    return [("order0_residual", r0["residual"], tol, r0["residual"] <= tol),
            ("order1_residual", r1, tol, r1 <= tol),
            ("order2_residual", r2, tol, r2 <= tol),
            ("classification", cls["label"], "not neither", ok_cls)]


def _run_ensemble_vs_grid(model, cfg: ExperimentConfig, out: Path,
                          plots: bool) -> list:
    grid = _default_grid(model, cfg)
    op = build_operator(grid, model)
    sim = cfg.sim or {}
    T = sim.get("t", 1.0)
    dt_sde = sim.get("dt", 0.005)
    n_paths = int(sim.get("n_paths", 50_000))
    shift = cfg.run.get("displacement", 1.0)
    tol = cfg.run.get("tolerance", 0.05)

    mu0 = np.zeros(model.dim)
    mu0[0] = shift
    scfg = SimConfig(dt=dt_sde, T=T, n_paths=n_paths, seed=cfg.seed,
                     initial=("gaussian", mu0, np.eye(model.dim)),
                     store_stride=max(int(round(T / dt_sde)), 1))
    ens = simulate(model, scfg)
    final = ens.state_at(-1)

    dtg = 0.9 * op.dt_bound()
    n = int(np.ceil(T / dtg))
    u0 = _displaced_gaussian(grid, shift)
    u, _ = run_forward(op, u0, T / n, n)

    bins = int(cfg.run.get("bins", 16))
    if any(c % bins for c in grid.counts):
        raise ValueError(f"grid cells {grid.counts} must be divisible by bins={bins}")
    edges = [np.linspace(lo, hi, bins + 1) for lo, hi in model.box]
    hist, _ = np.histogramdd(final, bins=edges)
    cgrid = Grid(model.box, (bins,) * model.dim)
    hist = hist / (hist.sum() * cgrid.cell_volume)
    factor = grid.counts[0] // bins
    coarse = u.values.reshape(*sum(((bins, factor),) * model.dim, ())) \
        .mean(axis=tuple(range(1, 2 * model.dim, 2)))
    l1 = float(np.abs(hist - coarse).sum() * cgrid.cell_volume)

    rows = [("l1_distance", l1)]
    checks = [("ensemble_grid_l1", l1, tol, l1 <= tol)]
    if "B" in model.params:  # linear model: closed-form moment reference
        lm = LinearModel(np.array(model.params["B"]), np.array(model.params["D"]))
        ref = gaussian_flow_oracle(lm, mu0, np.eye(model.dim), T)
        mean_err = float(np.max(np.abs(final.mean(axis=0) - ref["mu"])))
        cov_err = float(np.max(np.abs(np.cov(final.T) - ref["Sigma"])))
        # Monte Carlo noise of the covariance estimate plus the O(dt) step bias
        mtol = 3.0 * float(np.max(np.abs(ref["Sigma"]))) * np.sqrt(2.0 / n_paths) \
            + dt_sde
        rows += [("mean_error", mean_err), ("cov_error", cov_err)]
        checks.append(("moment_error", max(mean_err, cov_err), mtol,
                       max(mean_err, cov_err) <= mtol))
    _write_csv(out / "ensemble_vs_grid.csv", ["quantity", "value"], rows)
    if plots:
        from .plots import plot_density
        plot_density(u, out, "grid_density.png", "grid density at T")
        plot_density(DensityField(cgrid, hist), out, "ensemble_density.png",
                     "ensemble histogram at T")
    return checks


_RUNNERS = {
    "stationarity": _run_stationarity,
    "thermo-balance": _run_thermo_balance,
    "fig1-reversal": _run_fig1_reversal,
    "ao-check": _run_ao_check,
    "perturbation-check": _run_perturbation_check,
    "ensemble-vs-grid": _run_ensemble_vs_grid,
}


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run one experiment; write manifest, CSVs, and figures; return summary."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = make_model(cfg.model_name, **cfg.model_params)
    manifest = {
        "version": __version__,
        "csv_schema_version": CSV_SCHEMA_VERSION,
        "seed": cfg.seed,
        "config": cfg.resolved(),
    }
    with open(out / "manifest.json", "w", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    checks = _RUNNERS[cfg.kind](model, cfg, out, cfg.plots)
    passed = _summary(out, checks)
    return {"passed": passed, "checks": checks, "out_dir": str(out)}
