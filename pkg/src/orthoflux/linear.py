"""Closed-form equilibrium construction for linear SDEs dx = Bx dt + √(2D) dW.

The stationary covariance solves the Lyapunov equation BΣ + ΣBᵀ + 2D = 0
(dense Kronecker solve; systems here are desk-scale, n ≤ 6).  These models
provide exact references for every other module: quadratic potential
φ = ½xᵀΣ⁻¹x, rotation field g = (B + DΣ⁻¹)x, and Gaussian moment flow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .fields import FieldModel, MatrixField, ScalarField, VectorField

__all__ = [
    "LinearModel",
    "solve_lyapunov",
    "linear_equilibrium_fields",
    "gaussian_flow_oracle",
    "quadratic_field",
    "linear_vector_field",
    "default_box",
]

HURWITZ_TOL = -1e-12


def solve_lyapunov(B: np.ndarray, D: np.ndarray) -> np.ndarray:
    """Stationary covariance Σ with BΣ + ΣBᵀ + 2D = 0.

    Solved by Kronecker vectorization, (I⊗B + B⊗I) vec(Σ) = -2 vec(D),
    then symmetrized.  Raises if B is not Hurwitz.
    """
    B = np.asarray(B, dtype=float)
    D = np.asarray(D, dtype=float)
    n = B.shape[0]
    if B.shape != (n, n) or D.shape != (n, n):
        raise ValueError("B and D must be square and the same size")
    eig = np.linalg.eigvals(B)
    if eig.real.max() >= HURWITZ_TOL:
        raise ValueError(f"B is not Hurwitz: max Re(eig) = {eig.real.max():.3e}")
    K = np.kron(np.eye(n), B) + np.kron(B, np.eye(n))
    sigma = np.linalg.solve(K, -2.0 * D.reshape(-1)).reshape(n, n)
    return 0.5 * (sigma + sigma.T)


def quadratic_field(Q: np.ndarray, name: str = "phi") -> ScalarField:
    """φ(x) = ½ xᵀQx with analytic gradient Qx."""
    Q = np.asarray(Q, dtype=float)
    return ScalarField(lambda p: 0.5 * np.einsum("mi,ij,mj->m", p, Q, p),
                       Q.shape[0],
                       grad=lambda p: p @ Q.T,
                       name=name)


def linear_vector_field(A: np.ndarray, name: str = "") -> VectorField:
    """v(x) = Ax with analytic divergence tr(A)."""
    A = np.asarray(A, dtype=float)
    tr = float(np.trace(A))
    return VectorField(lambda p: p @ A.T, A.shape[0],
                       div=lambda p: np.full(p.shape[0], tr), name=name)


def default_box(Sigma: np.ndarray, n_sigma: float = 6.0) -> np.ndarray:
    """Per-axis bounds ±n_sigma marginal standard deviations."""
    s = n_sigma * np.sqrt(np.diag(Sigma))
    return np.stack([-s, s], axis=1)


@dataclass
class LinearModel:
    """Hurwitz linear SDE with derived stationary quantities.

    Attributes
    ----------
    B, D : ndarray
        Drift matrix (Hurwitz) and SPD diffusion.
    Sigma : ndarray
        Stationary covariance, BΣ + ΣBᵀ + 2D = 0.
    Q : ndarray
        Σ⁻¹, the quadratic-potential Hessian.
    Grot : ndarray
        B + DQ; QGrot is antisymmetric exactly when ∇φ·g = 0.
    """

    B: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        self.B = np.asarray(self.B, dtype=float)
        self.D = np.asarray(self.D, dtype=float)
        if np.max(np.abs(self.D - self.D.T)) > 1e-12:
            raise ValueError("D must be symmetric")
        if np.linalg.eigvalsh(self.D).min() <= 0:
            raise ValueError("D must be positive definite")
        self.Sigma = solve_lyapunov(self.B, self.D)
        self.Q = np.linalg.inv(self.Sigma)
        self.Q = 0.5 * (self.Q + self.Q.T)
        self.Grot = self.B + self.D @ self.Q

    @property
    def dim(self) -> int:
        return self.B.shape[0]

    def lyapunov_residual(self) -> float:
        return float(np.max(np.abs(self.B @ self.Sigma + self.Sigma @ self.B.T
                                   + 2.0 * self.D)))

    def rotation_antisymmetry(self) -> float:
        """Max-norm of the symmetric part of Σ⁻¹(B + DΣ⁻¹)."""
        M = self.Q @ self.Grot
        return float(np.max(np.abs(M + M.T)) / 2.0)


def linear_equilibrium_fields(m: LinearModel, n_sigma: float = 6.0,
                              name: str = "linear") -> FieldModel:
    """FieldModel with φ = ½xᵀΣ⁻¹x and g = (B + DΣ⁻¹)x.

    The returned model satisfies ∇φ·g = 0 and ∇·g = tr(B + DΣ⁻¹) = 0 to
    within the Lyapunov-solve accuracy.
    """
    return FieldModel(
        phi=quadratic_field(m.Q),
        g=linear_vector_field(m.Grot, name="g"),
        D=MatrixField(m.D, m.dim, name="D"),
        box=default_box(m.Sigma, n_sigma),
        name=name,
        params={"B": m.B.tolist(), "D": m.D.tolist()},
    )


def _gaussian_relative_entropy(mu: np.ndarray, S: np.ndarray,
                               Sref: np.ndarray) -> float:
    """KL(N(mu, S) || N(0, Sref)) in nats."""
    n = len(mu)
    Qref = np.linalg.inv(Sref)
    sign, logdet_ref = np.linalg.slogdet(Sref)
    sign2, logdet = np.linalg.slogdet(S)
    if sign <= 0 or sign2 <= 0:
        raise ValueError("covariances must be positive definite")
    return 0.5 * (np.trace(Qref @ S) - n + mu @ Qref @ mu + logdet_ref - logdet)


def gaussian_flow_oracle(m: LinearModel, mu0: np.ndarray, Sigma0: np.ndarray,
                         t: float) -> dict:
    """Exact Gaussian moment propagation and thermodynamic values at time t.

    μ_t = e^{Bt}μ₀ and Σ_t = e^{Bt}(Σ₀ - Σ)e^{Bᵀt} + Σ solve the moment
    equations of the linear SDE.  F_t is the relative entropy against the
    stationary Gaussian, S_t the differential entropy, and U_t = F_t + S_t.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    mu0 = np.asarray(mu0, dtype=float)
    Sigma0 = np.asarray(Sigma0, dtype=float)
    if np.linalg.eigvalsh(0.5 * (Sigma0 + Sigma0.T)).min() <= 0:
        raise ValueError("Sigma0 must be positive definite")
    E = expm(m.B * t)
    mu_t = E @ mu0
    Sigma_t = E @ (Sigma0 - m.Sigma) @ E.T + m.Sigma
    Sigma_t = 0.5 * (Sigma_t + Sigma_t.T)
    n = m.dim
    F_t = _gaussian_relative_entropy(mu_t, Sigma_t, m.Sigma)
    _, logdet = np.linalg.slogdet(Sigma_t)
    S_t = 0.5 * (n * (1.0 + np.log(2.0 * np.pi)) + logdet)
    return {"mu": mu_t, "Sigma": Sigma_t, "F": float(F_t), "S": float(S_t),
            "U": float(F_t + S_t)}
