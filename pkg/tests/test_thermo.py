"""Thermodynamic functionals: values, balances, positivity, H-theorem."""

import numpy as np
import pytest

from orthoflux.grid import (DensityField, Grid, build_operator,
                            equilibrium_density, evolve_omega)
from orthoflux.linear import LinearModel, gaussian_flow_oracle
from orthoflux.models import rotational_ou
from orthoflux.sde import reverse_model
from orthoflux.thermo import (balance_check, entropy_production,
                              entropy_production_current_form, h_functional,
                              records_csv, thermo_series, thermo_snapshot)

RNG = np.random.default_rng(31)


def displaced_gaussian(grid, mu=(1.0, 0.0)):
    mu = np.asarray(mu, dtype=float)
    return DensityField.from_function(
        grid, lambda p: np.exp(-((p - mu) ** 2).sum(axis=1) / 2))


def random_density(grid, rng):
    pts = grid.cell_centers()
    w = rng.standard_normal(4)
    base = np.exp(-0.5 * (pts ** 2).sum(1))
    bump = 1.0 + 0.5 * np.sin(w[0] + w[1] * pts[:, 0]) * np.cos(w[2] + w[3] * pts[:, 1])
    return DensityField(grid, (base * bump).reshape(grid.shape) /
                        (base * bump).sum() / grid.cell_volume)


@pytest.fixture(scope="module")
def rot_setup():
    m = rotational_ou(1.0, 1.0, 1.0)
    g = Grid(m.box, (64, 64))
    return m, g, build_operator(g, m)


class TestSnapshot:
    def test_equilibrium_values(self, rot_setup):
        m, g, op = rot_setup
        rec = thermo_snapshot(equilibrium_density(g, m), op)
        assert abs(rec.F) < 1e-12
        assert abs(rec.ep) < 1e-12
        assert abs(rec.hd) < 1e-12

    def test_standard_gaussian_entropy(self, rot_setup):
        # phi = |x|^2/2 (+ log 2 pi): U = S = 1 + log(2 pi), F = 0
        m, g, op = rot_setup
        rec = thermo_snapshot(equilibrium_density(g, m), op)
        expected = 1.0 + np.log(2.0 * np.pi)
        assert rec.U == pytest.approx(expected, abs=1e-6)
        assert rec.S == pytest.approx(expected, abs=1e-6)

    def test_displaced_gaussian_matches_oracle(self, rot_setup):
        m, g, op = rot_setup
        rec = thermo_snapshot(displaced_gaussian(g), op)
        ref = gaussian_flow_oracle(LinearModel(np.array(m.params["B"]),
                                               np.array(m.params["D"])),
                                   np.array([1.0, 0.0]), np.eye(2), 0.0)
        assert rec.F == pytest.approx(ref["F"], abs=1e-4)
        assert rec.U == pytest.approx(ref["U"], abs=1e-4)
        assert rec.S == pytest.approx(ref["S"], abs=1e-4)

    def test_record_identities(self, rot_setup):
        m, g, op = rot_setup
        for _ in range(20):
            rec = thermo_snapshot(random_density(g, RNG), op)
            assert abs(rec.F - (rec.U - rec.S)) <= 1e-10
            assert rec.ep >= -1e-12
            assert rec.F >= -1e-9

    def test_unnormalized_density_rejected(self, rot_setup):
        m, g, op = rot_setup
        u = equilibrium_density(g, m)
        with pytest.raises(ValueError, match="mass"):
            thermo_snapshot(DensityField(g, 1.001 * u.values), op)


class TestEntropyProduction:
    def test_nonnegative_on_random_densities(self, rot_setup):
        m, g, op = rot_setup
        for _ in range(100):
            u = random_density(g, RNG)
            assert entropy_production(op, u.flat) >= 0.0

    def test_face_and_current_forms_agree(self, rot_setup):
        # integration by parts is exact for the discrete pairing
        m, g, op = rot_setup
        for _ in range(20):
            u = random_density(g, RNG)
            a = entropy_production(op, u.flat)
            b = entropy_production_current_form(op, u.flat)
            assert abs(a - b) <= 1e-8 * max(a, 1.0)

    def test_free_energy_zero_only_at_equilibrium(self, rot_setup):
        m, g, op = rot_setup
        assert thermo_snapshot(equilibrium_density(g, m), op).F < 1e-12
        for _ in range(10):
            u = random_density(g, RNG)
            assert thermo_snapshot(u, op).F > 1e-4

    def test_independent_of_current_sign(self, rot_setup):
        # the dissipation functionals never see g at all
        m, g, op = rot_setup
        op_rev = build_operator(g, reverse_model(m))
        for _ in range(5):
            u = random_density(g, RNG)
            assert entropy_production(op, u.flat) == \
                pytest.approx(entropy_production(op_rev, u.flat), abs=1e-14)


class TestBalance:
    def test_equilibrium_start_trivial(self, rot_setup):
        # reversible model: equilibrium is an exact fixed point
        m0 = rotational_ou(1.0, 0.0, 1.0)
        g0 = Grid(m0.box, (64, 64))
        op0 = build_operator(g0, m0)
        recs = thermo_series(op0, equilibrium_density(g0, m0),
                             0.9 * op0.dt_bound(), 10)
        res = balance_check(recs)
        assert res["max_dF_residual"] < 1e-12
        assert res["max_dS_residual"] < 1e-12
        # rotating model: residuals bounded by the conservative-flux quadrature
        m, g, op = rot_setup
        recs = thermo_series(op, equilibrium_density(g, m),
                             0.9 * op.dt_bound(), 10)
        res = balance_check(recs)
        assert res["max_dF_residual"] < 1e-5
        assert res["max_dS_residual"] < 1e-5

    def test_relaxation_balances(self, rot_setup):
        m, g, op = rot_setup
        dt = 0.9 * op.dt_bound()
        recs = thermo_series(op, displaced_gaussian(g), dt, 150)
        res = balance_check(recs)
        assert res["max_dF_residual"] <= 1e-3
        assert res["max_dS_residual"] <= 1e-3
        assert res["max_F_increase"] <= 1e-10

    def test_reversed_current_same_dissipation_series(self, rot_setup):
        m, g, op = rot_setup
        op_rev = build_operator(g, reverse_model(m))
        dt = 0.9 * op.dt_bound()
        u0 = displaced_gaussian(g)
        fwd = thermo_series(op, u0, dt, 100)
        rev = thermo_series(op_rev, u0, dt, 100)
        ep_gap = max(abs(a.ep - b.ep) for a, b in zip(fwd, rev))
        hd_gap = max(abs(a.hd - b.hd) for a, b in zip(fwd, rev))
        assert ep_gap <= 1e-10
        assert hd_gap <= 1e-10

    def test_nonuniform_series_rejected(self, rot_setup):
        m, g, op = rot_setup
        recs = thermo_series(op, equilibrium_density(g, m), 1e-3, 4)
        recs[2].t += 1e-4
        with pytest.raises(ValueError, match="uniform"):
            balance_check(recs)

    def test_csv_format(self, rot_setup):
        m, g, op = rot_setup
        recs = thermo_series(op, equilibrium_density(g, m), 1e-3, 3)
        text = records_csv(recs)
        lines = text.strip().split("\n")
        assert lines[0] == "t,U,S,F,ep,hd"
        assert len(lines) == 5
        assert "e" in lines[1]  # scientific notation


class TestHFunctional:
    def test_uniform_omega_is_zero(self, rot_setup):
        m, g, op = rot_setup
        assert h_functional(np.ones(g.ncells), op) == pytest.approx(0.0, abs=1e-14)

    def test_equals_free_energy_for_density_omega(self, rot_setup):
        # Omega = u e^{phi+logZ}: H(Omega) = F(u) identically on the grid
        m, g, op = rot_setup
        for _ in range(5):
            u = random_density(g, RNG)
            shift = op.phi_cells - op.phi_cells.min()
            lz = np.log(np.sum(np.exp(-shift)) * g.cell_volume)
            om = u.flat * np.exp(shift + lz)
            rec = thermo_snapshot(u, op)
            assert h_functional(om, op) == pytest.approx(rec.F, abs=1e-9)

    def test_monotone_along_omega_evolution(self, rot_setup):
        m, g, op = rot_setup
        dt = 0.9 * op.dt_bound()
        u0 = displaced_gaussian(g)
        shift = op.phi_cells - op.phi_cells.min()
        lz = np.log(np.sum(np.exp(-shift)) * g.cell_volume)
        om = u0.flat * np.exp(shift + lz)
        prev = h_functional(om, op)
        for _ in range(200):
            om = evolve_omega(om, op, dt)
            val = h_functional(om, op)
            assert val <= prev + 1e-10
            prev = val

    def test_nonpositive_omega_rejected(self, rot_setup):
        m, g, op = rot_setup
        with pytest.raises(ValueError, match="positive"):
            h_functional(np.zeros(g.ncells), op)
