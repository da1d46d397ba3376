"""Model zoo: concrete drift-decomposed diffusion models.

Each constructor returns a FieldModel whose conservative current is
orthogonal to ∇φ analytically; `validate_equilibrium` re-checks this
numerically at probe points.  Boxes default to ±6 marginal standard
deviations of the Gaussian approximation at the potential minimum, which
puts e^{-φ} below ~1e-12 on the boundary for quadratic-growth potentials.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .ao import AoModel, ao_field_model
from .fields import (FieldModel, MatrixField, ScalarField, VectorField,
                     orthogonality_residual, sample_box)
from .linear import LinearModel, linear_equilibrium_fields

__all__ = [
    "KramersParams",
    "HamiltonianParams",
    "klein_kramers",
    "stochastic_hamiltonian",
    "stochastic_damping",
    "rotational_ou",
    "ao_linear",
    "validate_equilibrium",
    "MODEL_REGISTRY",
    "make_model",
]


def _as_scalar_field(U, dim: int, name: str) -> ScalarField:
    if isinstance(U, ScalarField):
        return U
    raise TypeError(f"{name} must be a ScalarField of dimension {dim}")


@dataclass
class KramersParams:
    """One-degree-of-freedom Newtonian subsystem with stochastic damping.

    mass > 0, potential U(x) (1-D scalar field), friction eta(x) >= 0, and
    bath temperature kBT > 0.
    """

    mass: float
    U: ScalarField
    eta: Union[float, ScalarField]
    kBT: float

    def __post_init__(self):
        if self.mass <= 0 or self.kBT <= 0:
            raise ValueError("mass and kBT must be positive")
        self.U = _as_scalar_field(self.U, 1, "U")

    def eta_at(self, x: np.ndarray) -> np.ndarray:
        if isinstance(self.eta, ScalarField):
            vals = self.eta(np.atleast_2d(np.asarray(x, dtype=float)).reshape(-1, 1))
            return np.asarray(vals, dtype=float)
        return np.full(np.shape(x), float(self.eta))


def _potential_minimum(U: ScalarField, span: float = 20.0) -> tuple[float, float]:
    """Minimum location and curvature of a 1-D potential, by scan + FD."""
    xs = np.linspace(-span, span, 4001)[:, None]
    vals = U(xs)
    x0 = float(xs[np.argmin(vals), 0])
    h = 1e-4 * max(1.0, abs(x0))
    pts = np.array([[x0 - h], [x0], [x0 + h]])
    v = U(pts)
    curv = float((v[0] - 2 * v[1] + v[2]) / (h * h))
    if curv <= 0:
        raise ValueError("potential has no positive curvature at its minimum")
    return x0, curv


def klein_kramers(p: KramersParams, box: Optional[np.ndarray] = None,
                  n_sigma: float = 6.0) -> FieldModel:
    """Phase-space model of m x'' = -U'(x) - η(x) x' + thermal noise.

    State is (x, y) with y the velocity.  φ = (½ m y² + U(x))/kBT,
    g = (y, -U'(x)/m) is volume preserving and tangent to the level sets
    of φ, and D = diag(0, kBT η(x)/m²) fixes the Einstein relation so that
    the Maxwell-Boltzmann density e^{-φ} is stationary.  D is rank one, so
    the model is flagged for ensemble-first verification.
    """
    m, kBT = p.mass, p.kBT

    def phi_fn(pts):
        return (0.5 * m * pts[:, 1] ** 2 + p.U(pts[:, :1])) / kBT

    def phi_grad(pts):
        dU = p.U.gradient(pts[:, :1])[:, 0]
        return np.stack([dU / kBT, m * pts[:, 1] / kBT], axis=-1)

    def g_fn(pts):
        dU = p.U.gradient(pts[:, :1])[:, 0]
        return np.stack([pts[:, 1], -dU / m], axis=-1)

    def D_fn(pts):
        out = np.zeros((pts.shape[0], 2, 2))
        out[:, 1, 1] = kBT * p.eta_at(pts[:, 0]) / (m * m)
        return out

    if box is None:
        x0, k_eff = _potential_minimum(p.U)
        sx = np.sqrt(kBT / k_eff)
        sy = np.sqrt(kBT / m)
        box = np.array([[x0 - n_sigma * sx, x0 + n_sigma * sx],
                        [-n_sigma * sy, n_sigma * sy]])

    phi = ScalarField(phi_fn, 2, grad=phi_grad, name="phi")
    g = VectorField(g_fn, 2, div=lambda pts: np.zeros(pts.shape[0]), name="g")
    return FieldModel(phi=phi, g=g, D=MatrixField(D_fn, 2, name="D"), box=box,
                      name="klein_kramers",
                      params={"mass": m, "kBT": kBT},
                      singular_diffusion=True)


@dataclass
class HamiltonianParams:
    """Hamiltonian H(x, y) on 2n dims plus a (possibly singular) noise matrix.

    GGt is ΓΓᵀ for noise Γ dW; the diffusion of the model is D = ½ ΓΓᵀ.
    """

    H: ScalarField
    GGt: MatrixField

    def __post_init__(self):
        if self.H.dim != self.GGt.dim:
            raise ValueError("H and GGt must share dimension")
        if self.H.dim % 2 != 0:
            raise ValueError("phase space must be even dimensional")


def stochastic_damping(p: HamiltonianParams) -> VectorField:
    """Damping field η = ½ e^{H} ∇·(ΓΓᵀ e^{-H}), expanded via the product
    rule as ½[Σ_j ∂_j (ΓΓᵀ)_{ji} - (ΓΓᵀ ∇H)_i] for numerical stability.

    This is the fluctuation-dissipation constraint that makes e^{-H}
    stationary; with constant isotropic ΓΓᵀ = 2I it reduces to -∇H.
    """

    def eta_fn(pts):
        return 0.5 * (p.GGt.row_divergence(pts)
                      - np.einsum("mij,mj->mi", p.GGt(pts), p.H.gradient(pts)))

    return VectorField(eta_fn, p.H.dim, name="eta")


def stochastic_hamiltonian(p: HamiltonianParams, box: Optional[np.ndarray] = None,
                           n_sigma: float = 6.0) -> FieldModel:
    """Model with Hamiltonian rotation g = (∂H/∂y, -∂H/∂x) and D = ½ΓΓᵀ.

    The damping that the full SDE drift g + η - ... carries is recoverable
    from `stochastic_damping`; here the model is stored in decomposed form
    (φ = H, conservative g, diffusion D), which is equivalent.
    """
    dim = p.H.dim
    half = dim // 2

    def g_fn(pts):
        grad = p.H.gradient(pts)
        return np.concatenate([grad[:, half:], -grad[:, :half]], axis=1)

    def D_fn(pts):
        return 0.5 * p.GGt(pts)

    if box is None:
        box = _hamiltonian_box(p.H, n_sigma)
    GGt0 = p.GGt.constant
    singular = bool(GGt0 is not None and np.linalg.eigvalsh(GGt0).min() < 1e-12)
    return FieldModel(phi=p.H, g=VectorField(g_fn, dim, name="g"),
                      D=MatrixField(D_fn, dim, name="D"), box=box,
                      name="stochastic_hamiltonian", params={},
                      singular_diffusion=singular)


def _hamiltonian_box(H: ScalarField, n_sigma: float) -> np.ndarray:
    """±n_sigma box from the Hessian of H at its minimum (coarse scan + FD)."""
    dim = H.dim
    if dim > 2:
        raise ValueError("automatic box sizing supports 2-D phase space only; "
                         "pass an explicit box")
    grid = np.stack(np.meshgrid(*[np.linspace(-10, 10, 81)] * dim, indexing="ij"),
                    axis=-1).reshape(-1, dim)
    x0 = grid[int(np.argmin(H(grid)))]
    h = 1e-3
    hess = np.zeros((dim, dim))
    for i in range(dim):
        for j in range(dim):
            pij = np.array([x0 + h * (ei + ej) for ei, ej
                            in [(_e(dim, i), _e(dim, j)), (_e(dim, i), -_e(dim, j)),
                                (-_e(dim, i), _e(dim, j)), (-_e(dim, i), -_e(dim, j))]])
            v = H(pij)
            hess[i, j] = (v[0] - v[1] - v[2] + v[3]) / (4 * h * h)
    sig = np.sqrt(np.diag(np.linalg.inv(hess)))
    return np.stack([x0 - n_sigma * sig, x0 + n_sigma * sig], axis=1)


def _e(dim: int, i: int) -> np.ndarray:
    v = np.zeros(dim)
    v[i] = 1.0
    return v


def rotational_ou(gamma: float, omega: float, d: float,
                  n_sigma: float = 6.0) -> FieldModel:
    """Two-dimensional linear model B = [[-γ, ω], [-ω, -γ]], D = dI.

    Stationary covariance is (d/γ)I, φ = (γ/2d)|x|², and the current is a
    rigid rotation g = ω(x₂, -x₁) with zero trace.  ω = 0 is the
    reversible Ornstein-Uhlenbeck model.
    """
    if gamma <= 0 or d <= 0:
        raise ValueError("gamma and d must be positive")
    B = np.array([[-gamma, omega], [-omega, -gamma]])
    lm = LinearModel(B, d * np.eye(2))
    model = linear_equilibrium_fields(lm, n_sigma=n_sigma, name="rotational_ou")
    model.params.update({"gamma": gamma, "omega": omega, "d": d})
    return model


def ao_linear(s: float = 1.0, a: float = 1.0, q: float = 1.0,
              n_sigma: float = 6.0) -> FieldModel:
    """Constant-coefficient (S, A, φ) model: S = sI, A = a[[0,1],[-1,0]],
    φ = ½q|x|²; assembled into decomposed form with Deff = G S Gᵀ."""
    if s <= 0 or q <= 0:
        raise ValueError("s and q must be positive")
    S = MatrixField(s * np.eye(2), 2, name="S")
    A = MatrixField(np.array([[0.0, a], [-a, 0.0]]), 2, name="A")
    phi = ScalarField(lambda p: 0.5 * q * np.einsum("mi,mi->m", p, p), 2,
                      grad=lambda p: q * p, name="phi")
    half = n_sigma / np.sqrt(q)
    box = np.array([[-half, half], [-half, half]])
    ao = AoModel(S=S, A=A, phi=phi, box=box, name="ao_linear")
    model = ao_field_model(ao)
    model.params.update({"s": s, "a": a, "q": q})
    return model


def validate_equilibrium(model: FieldModel, n_probes: int = 200,
                         tol_ortho: float = 1e-10, tol_div: float = 1e-8,
                         seed: int = 0) -> dict:
    """Check ∇φ·g = 0 and ∇·g = 0 at random probes; raise on violation."""
    rng = np.random.default_rng(seed)
    probes = sample_box(model.box, n_probes, rng)
    ortho = orthogonality_residual(model.phi, model.g, probes)
    div = float(np.max(np.abs(model.g.divergence(probes))))
    if ortho["max_abs"] > tol_ortho:
        raise ValueError(f"orthogonality residual {ortho['max_abs']:.3e} > {tol_ortho:.0e}")
    if div > tol_div:
        raise ValueError(f"divergence residual {div:.3e} > {tol_div:.0e}")
    return {"ortho": ortho, "div_max": div}


# -- CLI-facing registry ------------------------------------------------------

def _registry_klein_kramers(mass=1.0, stiffness=1.0, friction=1.0, kBT=1.0):
    U = ScalarField(lambda p: 0.5 * stiffness * p[:, 0] ** 2, 1,
                    grad=lambda p: stiffness * p, name="U")
    return klein_kramers(KramersParams(mass=mass, U=U, eta=friction, kBT=kBT))


def _registry_stochastic_hamiltonian(stiffness=1.0, gxx=2.0, gyy=2.0):
    H = ScalarField(lambda p: 0.5 * stiffness * p[:, 0] ** 2 + 0.5 * p[:, 1] ** 2, 2,
                    grad=lambda p: np.stack([stiffness * p[:, 0], p[:, 1]], axis=-1),
                    name="H")
    GGt = MatrixField(np.diag([gxx, gyy]), 2, name="GGt")
    return stochastic_hamiltonian(HamiltonianParams(H=H, GGt=GGt))


MODEL_REGISTRY = {
    "rotational_ou": {
        "factory": rotational_ou,
        "params": {"gamma": 1.0, "omega": 1.0, "d": 1.0},
        "doc": "Linear 2-D model with rotation: B = [[-gamma, omega], [-omega, -gamma]], D = d*I.",
    },
    "klein_kramers": {
        "factory": _registry_klein_kramers,
        "params": {"mass": 1.0, "stiffness": 1.0, "friction": 1.0, "kBT": 1.0},
        "doc": "Harmonic Newtonian subsystem with stochastic damping; state (position, velocity); singular diffusion.",
    },
    "stochastic_hamiltonian": {
        "factory": _registry_stochastic_hamiltonian,
        "params": {"stiffness": 1.0, "gxx": 2.0, "gyy": 2.0},
        "doc": "Quadratic Hamiltonian rotation with noise matrix GGt = diag(gxx, gyy); D = GGt/2.",
    },
    "ao_linear": {
        "factory": ao_linear,
        "params": {"s": 1.0, "a": 1.0, "q": 1.0},
        "doc": "Constant (S, A, phi) construction: S = s*I, A = a*[[0,1],[-1,0]], phi = q|x|^2/2.",
    },
}


def make_model(name: str, **params) -> FieldModel:
    """Instantiate a zoo model by registry name."""
    if name not in MODEL_REGISTRY:
        raise KeyError(f"unknown model {name!r}; known: {sorted(MODEL_REGISTRY)}")
    entry = MODEL_REGISTRY[name]
    unknown = set(params) - set(entry["params"])
    if unknown:
        raise ValueError(f"unknown parameter(s) {sorted(unknown)} for model {name!r}")
    return entry["factory"](**{**entry["params"], **params})
