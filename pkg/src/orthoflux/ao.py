"""Build drift-decomposed diffusion models from (S, A, φ) data.

The construction: G = (S + A)⁻¹ pointwise, drift b = -G∇φ, effective
diffusion Deff = G S Gᵀ.  The stationary current J obeys
J e^{φ} = (Deff - G)∇φ = G A Gᵀ ∇φ, which is orthogonal to ∇φ because
G A Gᵀ is antisymmetric — the algebraic identity verified by
``ao_orthogonality_check``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import FieldModel, MatrixField, ScalarField, VectorField

__all__ = ["AoModel", "assemble_ao", "ao_orthogonality_check", "ao_field_model"]

COND_LIMIT = 1e12


@dataclass
class AoModel:
    """Symmetric/antisymmetric pair plus potential: [S(x)+A(x)] dx/dt = -∇φ + ζ.

    The noise ζ has covariance 2S(x)δ(t-t').  S must be symmetric PSD and A
    antisymmetric at every probe; S + A must be invertible.
    """

    S: MatrixField
    A: MatrixField
    phi: ScalarField
    box: np.ndarray = None
    name: str = "ao"

    def __post_init__(self):
        if not (self.S.dim == self.A.dim == self.phi.dim):
            raise ValueError("S, A, phi must share dimension")
        if self.box is not None:
            self.box = np.asarray(self.box, dtype=float).reshape(-1, 2)

    @property
    def dim(self) -> int:
        return self.phi.dim

    def check_invariants(self, probes: np.ndarray, tol: float = 1e-12) -> dict:
        """Verify S symmetric PSD, A antisymmetric, S+A well conditioned."""
        pts = np.atleast_2d(np.asarray(probes, dtype=float))
        self.S.check_spd(pts, sym_tol=tol)
        Av = self.A(pts)
        asym = float(np.max(np.abs(Av + np.swapaxes(Av, -1, -2))))
        if asym > tol:
            raise ValueError(f"A is not antisymmetric: residual {asym:.3e}")
        cond = float(np.max(np.linalg.cond(self.S(pts) + Av)))
        if cond > COND_LIMIT:
            raise ValueError(f"S + A condition number {cond:.3e} exceeds {COND_LIMIT:.0e}")
        return {"antisymmetry": asym, "max_cond": cond}


def _inverse_at(m: AoModel, pts: np.ndarray) -> np.ndarray:
    """G = (S + A)⁻¹ at each probe (dense LU), with a singularity diagnostic."""
    M = m.S(pts) + m.A(pts)
    cond = np.linalg.cond(M)
    if np.any(~np.isfinite(cond)) or cond.max() > COND_LIMIT:
        bad = pts[int(np.argmax(np.where(np.isfinite(cond), cond, np.inf)))]
        raise ValueError(f"S + A singular or near-singular at point {bad.tolist()}")
    return np.linalg.inv(M)


def assemble_ao(m: AoModel) -> dict:
    """Fields G = (S+A)⁻¹, drift b = -G∇φ, and Deff = G S Gᵀ.

    Deff is symmetric PSD by construction.  Raises when S + A is singular
    at a probe, naming the point.
    """
    dim = m.dim

    G = MatrixField(lambda p: _inverse_at(m, p), dim, name="G")
    b = VectorField(lambda p: -np.einsum("mij,mj->mi", G(p), m.phi.gradient(p)),
                    dim, name="b")

    def deff_fn(p):
        Gv = G(p)
        out = np.einsum("mij,mjk,mlk->mil", Gv, m.S(p), Gv)
        return 0.5 * (out + np.swapaxes(out, -1, -2))

    Deff = MatrixField(deff_fn, dim, name="Deff")
    return {"G": G, "b": b, "Deff": Deff}


def ao_orthogonality_check(m: AoModel, probes: np.ndarray) -> dict:
    """Residual of (∇φ)ᵀ·(J e^{φ}) with J e^{φ} = Deff∇φ - G∇φ.

    This quantity is zero for any valid (S, A, φ) data regardless of the
    potential, because Deff - G = G A Gᵀ is antisymmetric.
    """
    pts = np.atleast_2d(np.asarray(probes, dtype=float))
    parts = assemble_ao(m)
    gp = m.phi.gradient(pts)
    Je = np.einsum("mij,mj->mi", parts["Deff"](pts), gp) - \
        np.einsum("mij,mj->mi", parts["G"](pts), gp)
    dots = np.einsum("mi,mi->m", gp, Je)
    return {"max_abs": float(np.max(np.abs(dots))),
            "rms": float(np.sqrt(np.mean(dots * dots)))}


def ao_field_model(m: AoModel, box: np.ndarray = None, name: str = None) -> FieldModel:
    """FieldModel (φ, g = J e^{φ}, Deff) extracted from the construction.

    For A = 0 the current vanishes identically (detailed balance).
    """
    parts = assemble_ao(m)
    Deff, G = parts["Deff"], parts["G"]

    def g_fn(p):
        gp = m.phi.gradient(p)
        return np.einsum("mij,mj->mi", Deff(p), gp) - np.einsum("mij,mj->mi", G(p), gp)

    if box is None:
        box = m.box
    if box is None:
        raise ValueError("a box must be supplied (none stored on the AoModel)")
    return FieldModel(phi=m.phi, g=VectorField(g_fn, m.dim, name="g"),
                      D=Deff, box=box, name=name or m.name)
