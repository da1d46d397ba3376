"""Small-noise expansion residual checkers and time-reversal classification.

The stationary density of dx = b dt + √ε dξ has exponent ψ_ε/ε with
ψ_ε = φ₀ + εφ₁ + ε²φ₂ + ...; these routines *check* candidate expansion
terms against the order-by-order equations (they never solve them):

  order ε⁰:  ∇φ₀·(D∇φ₀ + b) = 0
  order ε¹:  ∇φ₁·(2D∇φ₀ + b) = ∇·(D∇φ₀ + b)
  order ε²:  ∇φ₂·(2D∇φ₀ + b) = ∇·(D∇φ₁) - (∇φ₁)ᵀD(∇φ₁)

Drift-decomposed equilibrium models satisfy all three with φ₀ the model
potential and φ₁ = φ₂ = 0, because the remainder b + D∇φ₀ is then exactly
the divergence-free, orthogonal conservative current.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .fields import MatrixField, ScalarField, VectorField

__all__ = [
    "EpsilonModel",
    "residual_phi0",
    "residual_phi1",
    "residual_phi2",
    "reversal_classify",
]


@dataclass
class EpsilonModel:
    """Drift/diffusion pair with candidate expansion terms of the small-noise
    stationary exponent."""

    b: VectorField
    D: MatrixField
    epsilon: float
    phi0: Optional[ScalarField] = None
    phi1: Optional[ScalarField] = None
    phi2: Optional[ScalarField] = None

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


def _Dgrad(D: MatrixField, phi: ScalarField, pts: np.ndarray) -> np.ndarray:
    return np.einsum("mij,mj->mi", D(pts), phi.gradient(pts))


def _remainder_field(m: EpsilonModel) -> VectorField:
    """b + D∇φ₀ as a vector field (for finite-difference divergences)."""
    return VectorField(lambda p: m.b(p) + _Dgrad(m.D, m.phi0, p), m.b.dim)


def residual_phi0(m: EpsilonModel, probes: np.ndarray) -> dict:
    """sup |∇φ₀·(D∇φ₀ + b)| plus the divergence of the remainder.

    The residual is zero iff φ₀ satisfies the leading-order orthogonality;
    the reported ∇·(b + D∇φ₀) is generally nonzero and signals whether the
    first-order term φ₁ can be constant.
    """
    if m.phi0 is None:
        raise ValueError("phi0 candidate missing")
    pts = np.atleast_2d(np.asarray(probes, dtype=float))
    rem = _remainder_field(m)
    res = np.einsum("mi,mi->m", m.phi0.gradient(pts), rem(pts))
    return {"residual": float(np.max(np.abs(res))),
            "div_remainder": float(np.max(np.abs(rem.divergence(pts))))}


def residual_phi1(m: EpsilonModel, probes: np.ndarray) -> float:
    """sup |∇φ₁·(2D∇φ₀ + b) - ∇·(D∇φ₀ + b)| over probes."""
    if m.phi0 is None or m.phi1 is None:
        raise ValueError("phi0 and phi1 candidates required")
    pts = np.atleast_2d(np.asarray(probes, dtype=float))
    transport = 2.0 * _Dgrad(m.D, m.phi0, pts) + m.b(pts)
    lhs = np.einsum("mi,mi->m", m.phi1.gradient(pts), transport)
    rhs = _remainder_field(m).divergence(pts)
    return float(np.max(np.abs(lhs - rhs)))


def residual_phi2(m: EpsilonModel, probes: np.ndarray) -> float:
    """sup |∇φ₂·(2D∇φ₀ + b) - ∇·(D∇φ₁) + (∇φ₁)ᵀD(∇φ₁)| over probes."""
    if m.phi0 is None or m.phi1 is None or m.phi2 is None:
        raise ValueError("phi0, phi1, phi2 candidates required")
    pts = np.atleast_2d(np.asarray(probes, dtype=float))
    transport = 2.0 * _Dgrad(m.D, m.phi0, pts) + m.b(pts)
    lhs = np.einsum("mi,mi->m", m.phi2.gradient(pts), transport)
    flux1 = VectorField(lambda p: _Dgrad(m.D, m.phi1, p), m.b.dim)
    g1 = m.phi1.gradient(pts)
    rhs = flux1.divergence(pts) - np.einsum("mi,mij,mj->m", g1, m.D(pts), g1)
    return float(np.max(np.abs(lhs - rhs)))


def reversal_classify(b: VectorField, D: MatrixField, phi: ScalarField,
                      probes: np.ndarray, rel_tol: float = 1e-6) -> dict:
    """Classify the time-reversal type of (b, D) with stationary exponent φ.

    With j = b + D∇φ: 'overdamped' when j ≈ 0 (potential condition
    D⁻¹b = -∇φ), 'underdamped' when ∇·j ≈ 0 and ∇φ·j ≈ 0 (orthogonal
    conservative current), else 'neither'.  Residuals below
    rel_tol · sup‖b‖ count as zero; the three numbers are returned as
    evidence.
    """
    pts = np.atleast_2d(np.asarray(probes, dtype=float))
    jv = b(pts) + _Dgrad(D, phi, pts)
    j = VectorField(lambda p: b(p) + _Dgrad(D, phi, p), b.dim)
    scale = float(np.max(np.linalg.norm(b(pts), axis=1)))
    thr = rel_tol * scale
    r_norm = float(np.max(np.linalg.norm(jv, axis=1)))
    r_div = float(np.max(np.abs(j.divergence(pts))))
    r_orth = float(np.max(np.abs(np.einsum("mi,mi->m", phi.gradient(pts), jv))))
    if r_norm <= thr:
        label = "overdamped"
    elif r_div <= thr and r_orth <= thr:
        label = "underdamped"
    else:
        label = "neither"
    return {"label": label, "j_norm": r_norm, "div_j": r_div, "orth_j": r_orth,
            "threshold": thr}
