"""Scalar/vector/matrix fields on a box and the drift-decomposition calculus.

Fields are thin callable wrappers around vectorized functions of points
with shape (m, n).  Derivatives are analytic when supplied, otherwise
scale-aware central finite differences.  Everything here is pure and
immutable after construction, so fields are safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "ScalarField",
    "VectorField",
    "MatrixField",
    "FieldModel",
    "FieldEvaluationError",
    "orthogonality_residual",
    "decompose_drift",
    "eta_from_phi",
    "split_parallel_perp",
    "canonical_conservative",
    "sample_box",
]

# Gradient threshold below which the parallel/perpendicular split is
# declared degenerate (the projection formula is 0/0 at critical points).
EPS_GRAD = 1e-10


class FieldEvaluationError(ValueError):
    """A field produced a non-finite value at a probe point."""


def _as_points(x: np.ndarray) -> tuple[np.ndarray, bool]:
    """Coerce a single point or an (m, n) batch to 2-D; report if it was 1-D."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def fd_steps(points: np.ndarray) -> np.ndarray:
    """Per-axis central-difference steps h_i = max(1e-5, 1e-5*|x_i|)."""
    return np.maximum(1e-5, 1e-5 * np.abs(points))


class ScalarField:
    """Scalar function of n variables with a gradient.

    Parameters
    ----------
    fn : callable
        Vectorized map from points (m, n) to values (m,).
    grad : callable, optional
        Analytic gradient, points (m, n) -> (m, n).  When omitted the
        gradient falls back to central finite differences.
    dim : int
        Number of variables.
    """

    def __init__(self, fn: Callable, dim: int, grad: Optional[Callable] = None,
                 name: str = ""):
        self._fn = fn
        self._grad = grad
        self.dim = int(dim)
        self.name = name

    def __call__(self, points) -> np.ndarray:
        pts, single = _as_points(points)
        vals = np.asarray(self._fn(pts), dtype=float).reshape(pts.shape[0])
        return vals[0] if single else vals

    def gradient(self, points) -> np.ndarray:
        pts, single = _as_points(points)
        if self._grad is not None:
            g = np.asarray(self._grad(pts), dtype=float).reshape(pts.shape)
        else:
            g = self._fd_gradient(pts)
        return g[0] if single else g

    def _fd_gradient(self, pts: np.ndarray) -> np.ndarray:
        h = fd_steps(pts)
        g = np.empty_like(pts)
        for i in range(self.dim):
            dp = pts.copy()
            dm = pts.copy()
            dp[:, i] += h[:, i]
            dm[:, i] -= h[:, i]
            g[:, i] = (self._fn(dp) - self._fn(dm)) / (2.0 * h[:, i])
        return g

    def shifted(self, constant: float) -> "ScalarField":
        """The field plus an additive constant (same gradient)."""
        return ScalarField(lambda p: self._fn(p) + constant, self.dim,
                           grad=self._grad, name=self.name)


class VectorField:
    """Vector function of n variables with a divergence."""

    def __init__(self, fn: Callable, dim: int, div: Optional[Callable] = None,
                 name: str = ""):
        self._fn = fn
        self._div = div
        self.dim = int(dim)
        self.name = name

    def __call__(self, points) -> np.ndarray:
        pts, single = _as_points(points)
        vals = np.asarray(self._fn(pts), dtype=float).reshape(pts.shape)
        return vals[0] if single else vals

    def divergence(self, points) -> np.ndarray:
        pts, single = _as_points(points)
        if self._div is not None:
            d = np.asarray(self._div(pts), dtype=float).reshape(pts.shape[0])
        else:
            h = fd_steps(pts)
            d = np.zeros(pts.shape[0])
            for i in range(self.dim):
                dp = pts.copy()
                dm = pts.copy()
                dp[:, i] += h[:, i]
                dm[:, i] -= h[:, i]
                d += (np.asarray(self._fn(dp))[:, i]
                      - np.asarray(self._fn(dm))[:, i]) / (2.0 * h[:, i])
        return d[0] if single else d

    def negated(self) -> "VectorField":
        """The field with flipped sign; negating twice returns the original."""
        inner = getattr(self, "_negation_of", None)
        if inner is not None:
            return inner
        neg = VectorField(lambda p: -self._fn(p), self.dim,
                          div=(None if self._div is None
                               else (lambda p: -np.asarray(self._div(p)))),
                          name=("-" + self.name) if self.name else "")
        neg._negation_of = self
        return neg


class MatrixField:
    """Matrix function of n variables, points (m, n) -> (m, n, n).

    A constant matrix may be passed directly; ``constant`` is then the
    stored array, else None.
    """

    def __init__(self, fn_or_matrix, dim: int, name: str = ""):
        self.dim = int(dim)
        self.name = name
        if callable(fn_or_matrix):
            self._fn = fn_or_matrix
            self.constant = None
        else:
            M = np.asarray(fn_or_matrix, dtype=float)
            if M.shape != (dim, dim):
                raise ValueError(f"constant matrix must be {dim}x{dim}, got {M.shape}")
            self.constant = M
            self._fn = lambda p: np.broadcast_to(M, (p.shape[0], dim, dim))

    def __call__(self, points) -> np.ndarray:
        pts, single = _as_points(points)
        vals = np.asarray(self._fn(pts), dtype=float).reshape(pts.shape[0], self.dim, self.dim)
        return vals[0] if single else vals

    @property
    def is_constant(self) -> bool:
        return self.constant is not None

    def row_divergence(self, points) -> np.ndarray:
        """(∇·D)_i = Σ_j ∂_j D_ij, by central differences (zero if constant)."""
        pts, single = _as_points(points)
        out = np.zeros(pts.shape)
        if self.constant is None:
            h = fd_steps(pts)
            for j in range(self.dim):
                dp = pts.copy()
                dm = pts.copy()
                dp[:, j] += h[:, j]
                dm[:, j] -= h[:, j]
                out += (self._fn(dp)[:, :, j] - self._fn(dm)[:, :, j]) / (2.0 * h[:, j])[:, None]
        return out[0] if single else out

    def check_spd(self, points, sym_tol: float = 1e-12, eig_floor: float = -1e-12) -> None:
        """Raise unless the matrix is symmetric PSD at every probe."""
        vals = self(np.atleast_2d(np.asarray(points, dtype=float)))
        asym = np.max(np.abs(vals - np.swapaxes(vals, -1, -2)))
        if asym > sym_tol:
            raise ValueError(f"matrix field {self.name!r} asymmetric by {asym:.3e}")
        eigs = np.linalg.eigvalsh(0.5 * (vals + np.swapaxes(vals, -1, -2)))
        if eigs.min() < eig_floor:
            raise ValueError(
                f"matrix field {self.name!r} has negative eigenvalue {eigs.min():.3e}")


@dataclass
class FieldModel:
    """Drift-decomposed diffusion model: drift = g - D∇φ, noise covariance 2D.

    ``phi`` is the unnormalized log-density exponent; the normalizer logZ
    (so that e^{-phi-logZ} integrates to one over the box) is computed by
    midpoint quadrature on demand.  Orthogonality ∇φ·g = 0 and ∇·g = 0 are
    *checked* by callers, never assumed.
    """

    phi: ScalarField
    g: VectorField
    D: MatrixField
    box: np.ndarray  # (n, 2) per-axis bounds
    name: str = ""
    params: dict = field(default_factory=dict)
    singular_diffusion: bool = False
    _logZ: Optional[float] = None

    def __post_init__(self):
        self.box = np.asarray(self.box, dtype=float).reshape(-1, 2)
        if self.box.shape[0] != self.phi.dim:
            raise ValueError("box must have one (lo, hi) pair per axis")
        if np.any(self.box[:, 1] <= self.box[:, 0]):
            raise ValueError("box bounds must satisfy lo < hi")

    @property
    def dim(self) -> int:
        return self.phi.dim

    @property
    def logZ(self) -> float:
        """log ∫_box e^{-phi} dx by midpoint quadrature (dims ≤ 3)."""
        if self._logZ is None:
            if self.dim > 3:
                raise ValueError("logZ quadrature supported for dims <= 3 only")
            cells = {1: 4096, 2: 256, 3: 64}[self.dim]
            axes = [np.linspace(lo, hi, cells, endpoint=False) + (hi - lo) / (2 * cells)
                    for lo, hi in self.box]
            vol = np.prod([(hi - lo) / cells for lo, hi in self.box])
            mesh = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")], axis=-1)
            p = self.phi(mesh)
            pmin = p.min()
            self._logZ = float(np.log(np.sum(np.exp(-(p - pmin))) * vol) - pmin)
        return self._logZ

    def phi_normalized(self, points) -> np.ndarray:
        """phi + logZ, so that e^{-(phi+logZ)} is a probability density."""
        return self.phi(points) + self.logZ

    def drift(self, points) -> np.ndarray:
        """Full SDE drift b = g - D∇φ."""
        pts, single = _as_points(points)
        b = self.g(pts) - np.einsum("mij,mj->mi", self.D(pts), self.phi.gradient(pts))
        return b[0] if single else b

    def with_reversed_current(self) -> "FieldModel":
        """The (φ, -g, D) model of the time reversal (t, φ, g) -> (-t, φ, -g)."""
        m = FieldModel(self.phi, self.g.negated(), self.D, self.box,
                       name=self.name, params=dict(self.params),
                       singular_diffusion=self.singular_diffusion)
        m._logZ = self._logZ
        return m


def sample_box(box: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform probe points inside a box, shape (n, dim)."""
    box = np.asarray(box, dtype=float).reshape(-1, 2)
    return rng.uniform(box[:, 0], box[:, 1], size=(n, box.shape[0]))


def _probe_stats(values: np.ndarray) -> dict:
    a = np.abs(np.asarray(values, dtype=float))
    return {"max_abs": float(a.max()), "rms": float(np.sqrt(np.mean(a * a)))}


def orthogonality_residual(phi: ScalarField, g: VectorField, probes: np.ndarray) -> dict:
    """Statistics of ∇φ(x)·g(x) over probe points.

    Zero certifies orthogonality on the sample; returns
    ``{"max_abs": ..., "rms": ...}``.
    """
    pts = np.atleast_2d(np.asarray(probes, dtype=float))
    if pts.shape[0] == 0:
        raise ValueError("probes must be nonempty")
    gp = phi.gradient(pts)
    gv = g(pts)
    bad = ~(np.isfinite(gp).all(axis=1) & np.isfinite(gv).all(axis=1))
    if bad.any():
        raise FieldEvaluationError(
            f"non-finite field value at probe {pts[bad][0].tolist()}")
    return _probe_stats(np.einsum("mi,mi->m", gp, gv))


def decompose_drift(b: VectorField, D: MatrixField, phi: ScalarField,
                    probes: np.ndarray) -> tuple[VectorField, dict]:
    """Split a drift as b = -D∇φ + g, returning g and a residual report.

    g(x) = b(x) + D(x)∇φ(x).  The report carries probe statistics of ∇·g
    and ∇φ·g; this function never rejects, the caller decides whether the
    model qualifies as equilibrium with conservative current.
    """
    if not (b.dim == D.dim == phi.dim):
        raise ValueError("fields must share dimension")

    def g_fn(pts):
        return b(pts) + np.einsum("mij,mj->mi", D(pts), phi.gradient(pts))

    g = VectorField(g_fn, b.dim, name="g")
    pts = np.atleast_2d(np.asarray(probes, dtype=float))
    report = {
        "div_g": _probe_stats(g.divergence(pts)),
        "ortho": _probe_stats(np.einsum("mi,mi->m", phi.gradient(pts), g(pts))),
    }
    return g, report


def eta_from_phi(D: MatrixField, phi: ScalarField) -> VectorField:
    """Ito-form drift correction η_i = Σ_j ∂_j D_ij - (D∇φ)_i.

    Substituting η into the Ito-form forward operator reproduces the
    divergence-form operator; with constant D this is just -D∇φ.
    """

    def eta_fn(pts):
        return D.row_divergence(pts) - np.einsum("mij,mj->mi", D(pts), phi.gradient(pts))

    return VectorField(eta_fn, D.dim, name="eta")


def split_parallel_perp(j: VectorField, phi: ScalarField, x) -> tuple[np.ndarray, np.ndarray]:
    """Split j(x) into components parallel and perpendicular to ∇φ(x).

    Below the degenerate-gradient threshold ‖∇φ‖ < 1e-10 the split is
    defined as (0, j).
    """
    x = np.asarray(x, dtype=float)
    jv = j(x)
    gp = phi.gradient(x)
    n2 = float(gp @ gp)
    if np.sqrt(n2) < EPS_GRAD:
        return np.zeros_like(jv), jv
    j_par = (float(jv @ gp) / n2) * gp
    return j_par, jv - j_par


def canonical_conservative(b: VectorField, D: MatrixField, phi: ScalarField,
                           probes: np.ndarray) -> tuple[VectorField, dict]:
    """Current j = b + D∇φ and the residual of ∇·(e^{-φ} j) at probes.

    The residual vanishes exactly when e^{-φ} is stationary for the
    (b, D) diffusion; it is reported regardless, via the expansion
    r = e^{-φ}(∇·j - ∇φ·j).
    """
    j, _ = decompose_drift(b, D, phi, probes)
    pts = np.atleast_2d(np.asarray(probes, dtype=float))
    r = np.exp(-phi(pts)) * (j.divergence(pts)
                             - np.einsum("mi,mi->m", phi.gradient(pts), j(pts)))
    return j, {"residual": _probe_stats(r), "values": r}
