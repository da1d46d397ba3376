"""(S, A, phi) construction: assembly, orthogonality identity, extraction."""

import numpy as np
import pytest

from orthoflux.ao import (AoModel, ao_field_model, ao_orthogonality_check,
                          assemble_ao)
from orthoflux.fields import (MatrixField, ScalarField, orthogonality_residual,
                              sample_box)

RNG = np.random.default_rng(23)
BOX2 = np.array([[-3.0, 3.0], [-3.0, 3.0]])


def quad_phi(n=2, q=1.0):
    return ScalarField(lambda p: 0.5 * q * (p ** 2).sum(axis=1), n,
                       grad=lambda p: q * p)


def simple_ao(a=1.0):
    S = MatrixField(np.eye(2), 2)
    A = MatrixField(np.array([[0.0, a], [-a, 0.0]]), 2)
    return AoModel(S=S, A=A, phi=quad_phi(), box=BOX2)


def random_constant_ao(rng, n):
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
    return AoModel(S=MatrixField(S, n), A=MatrixField(A, n), phi=phi,
                   box=np.array([[-2.5, 2.5]] * n))


class TestInvariants:
    def test_valid_model_passes(self):
        m = simple_ao()
        rep = m.check_invariants(sample_box(BOX2, 20, RNG))
        assert rep["antisymmetry"] <= 1e-12
        assert rep["max_cond"] < 10

    def test_non_antisymmetric_a_rejected(self):
        bad = AoModel(S=MatrixField(np.eye(2), 2),
                      A=MatrixField(np.array([[0.0, 1.0], [1.0, 0.0]]), 2),
                      phi=quad_phi(), box=BOX2)
        with pytest.raises(ValueError, match="antisymmetric"):
            bad.check_invariants(sample_box(BOX2, 10, RNG))

    def test_singular_sum_names_point(self):
        # S rank deficient with A = 0: S + A singular everywhere
        bad = AoModel(S=MatrixField(np.array([[1.0, 1.0], [1.0, 1.0]]), 2),
                      A=MatrixField(np.zeros((2, 2)), 2),
                      phi=quad_phi(), box=BOX2)
        with pytest.raises(ValueError, match="singular"):
            assemble_ao(bad)["G"](sample_box(BOX2, 5, RNG))


class TestAssembleAo:
    def test_identity_s_zero_a(self):
        m = AoModel(S=MatrixField(np.eye(2), 2), A=MatrixField(np.zeros((2, 2)), 2),
                    phi=quad_phi(), box=BOX2)
        parts = assemble_ao(m)
        pts = sample_box(BOX2, 20, RNG)
        assert np.allclose(parts["G"](pts), np.eye(2), atol=1e-14)
        assert np.allclose(parts["b"](pts), -pts, atol=1e-14)
        assert np.allclose(parts["Deff"](pts), np.eye(2), atol=1e-14)

    def test_two_by_two_inversion_by_hand(self):
        a = 0.8
        m = simple_ao(a)
        parts = assemble_ao(m)
        pts = sample_box(BOX2, 20, RNG)
        G_expect = np.array([[1.0, -a], [a, 1.0]]) / (1.0 + a * a)
        assert np.allclose(parts["G"](pts), G_expect, atol=1e-14)
        assert np.allclose(parts["b"](pts), -pts @ G_expect.T, atol=1e-13)

    def test_effective_diffusion_by_hand(self):
        a = 0.8
        parts = assemble_ao(simple_ao(a))
        pts = sample_box(BOX2, 10, RNG)
        assert np.allclose(parts["Deff"](pts), np.eye(2) / (1.0 + a * a),
                           atol=1e-14)

    def test_deff_is_spd(self):
        for _ in range(10):
            m = random_constant_ao(RNG, int(RNG.integers(2, 5)))
            parts = assemble_ao(m)
            parts["Deff"].check_spd(sample_box(m.box, 20, RNG), sym_tol=1e-10)


class TestOrthogonalityCheck:
    def test_random_models_satisfy_identity(self):
        for _ in range(20):
            m = random_constant_ao(RNG, int(RNG.integers(2, 5)))
            res = ao_orthogonality_check(m, sample_box(m.box, 40, RNG))
            assert res["max_abs"] <= 1e-10

    def test_detailed_balance_current_vanishes(self):
        m = AoModel(S=MatrixField(np.eye(2), 2), A=MatrixField(np.zeros((2, 2)), 2),
                    phi=quad_phi(), box=BOX2)
        model = ao_field_model(m)
        pts = sample_box(BOX2, 30, RNG)
        assert np.max(np.abs(model.g(pts))) == 0.0

    def test_unit_a_current_by_hand(self):
        # a = 1: (Deff - G) = [[0, 1], [-1, 0]] / 2, so J e^phi = that times grad phi
        m = simple_ao(1.0)
        model = ao_field_model(m)
        pts = sample_box(BOX2, 30, RNG)
        expected = pts @ (np.array([[0.0, 1.0], [-1.0, 0.0]]) / 2.0).T
        assert np.allclose(model.g(pts), expected, atol=1e-13)
        res = orthogonality_residual(model.phi, model.g, pts)
        assert res["max_abs"] <= 1e-13


class TestFieldModelExtraction:
    def test_extracted_model_is_equilibrium(self):
        for _ in range(10):
            m = random_constant_ao(RNG, int(RNG.integers(2, 4)))
            model = ao_field_model(m)
            probes = sample_box(m.box, 40, RNG)
            assert orthogonality_residual(model.phi, model.g,
                                          probes)["max_abs"] <= 1e-8
            assert np.max(np.abs(model.g.divergence(probes))) <= 1e-8

    def test_box_required(self):
        m = AoModel(S=MatrixField(np.eye(2), 2),
                    A=MatrixField(np.zeros((2, 2)), 2), phi=quad_phi())
        with pytest.raises(ValueError, match="box"):
            ao_field_model(m)
