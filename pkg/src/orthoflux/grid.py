"""Finite-volume discretization of the forward equation on a rectangular box.

The forward equation du/dt = ∇·[D(∇u + u∇φ) - g u] is discretized in flux
form on a cell-centered grid with zero-flux boundaries.  The dissipative
flux uses exponential-fitting (Scharfetter-Gummel) face weights, which make
the cell-evaluated e^{-φ} an exact discrete equilibrium of the dissipative
part; the conservative g-term uses a centered flux acting on Ω = u e^{φ},
so the advective flux also vanishes identically at equilibrium up to the
quadrature of ∇·(g e^{-φ}).

Three operators derive from one assembly:

* forward  L          (acts on cell densities u),
* backward Lᵀ         (exact ℓ² adjoint; annihilates constants exactly),
* omega    E L E⁻¹    (E = diag e^{φ}; exact conjugation, so evolving
                       Ω = u e^{φ} is exactly consistent with evolving u).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .fields import FieldModel

__all__ = [
    "Grid",
    "DensityField",
    "CurrentField",
    "GridOperator",
    "StabilityError",
    "build_operator",
    "build_operator_ito",
    "backward_operator",
    "omega_operator",
    "stability_bound",
    "step_forward",
    "evolve_backward",
    "evolve_omega",
    "run_forward",
    "stationary_residual",
    "current",
    "equilibrium_density",
    "write_array",
    "read_array",
    "snapshot_csv",
]

CELL_CAP = 2 ** 22


class StabilityError(ValueError):
    """Requested time step exceeds the advertised stability bound."""


def _bernoulli(z: np.ndarray) -> np.ndarray:
    """B(z) = z / (e^z - 1), series near zero for stability."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < 1e-5
    zs = z[small]
    out[small] = 1.0 - zs / 2.0 + zs * zs / 12.0
    zb = z[~small]
    out[~small] = zb / np.expm1(zb)
    return out


class Grid:
    """Uniform cell-centered rectangular mesh.

    Parameters
    ----------
    bounds : array (n, 2)
        Per-axis [lo, hi].
    counts : sequence of int
        Cells per axis, each >= 8; total cells capped at 2**22.
    """

    def __init__(self, bounds, counts, cap: int = CELL_CAP):
        self.bounds = np.asarray(bounds, dtype=float).reshape(-1, 2)
        self.counts = tuple(int(c) for c in np.atleast_1d(counts))
        if len(self.counts) != self.bounds.shape[0]:
            raise ValueError("counts must have one entry per axis")
        if len(self.counts) > 3:
            raise ValueError("grids support up to 3 dimensions; use ensembles "
                             "for higher-dimensional models")
        if any(c < 8 for c in self.counts):
            raise ValueError("need at least 8 cells per axis")
        if int(np.prod(self.counts)) > cap:
            raise ValueError(f"total cells {np.prod(self.counts)} exceeds cap {cap}")
        if np.any(self.bounds[:, 1] <= self.bounds[:, 0]):
            raise ValueError("bounds must satisfy lo < hi")
        self.spacing = (self.bounds[:, 1] - self.bounds[:, 0]) / np.array(self.counts)
        self.cell_volume = float(np.prod(self.spacing))
        self.axes = [self.bounds[k, 0] + (np.arange(self.counts[k]) + 0.5) * self.spacing[k]
                     for k in range(self.dim)]
        self._centers = None

    @property
    def dim(self) -> int:
        return self.bounds.shape[0]

    @property
    def shape(self) -> tuple:
        return self.counts

    @property
    def ncells(self) -> int:
        return int(np.prod(self.counts))

    def cell_centers(self) -> np.ndarray:
        """All cell centers, shape (ncells, n), C-order."""
        if self._centers is None:
            mesh = np.meshgrid(*self.axes, indexing="ij")
            self._centers = np.stack([m.ravel() for m in mesh], axis=-1)
        return self._centers

    def refine(self, factor: int = 2) -> "Grid":
        return Grid(self.bounds, [c * factor for c in self.counts])


@dataclass
class DensityField:
    """Nonnegative, normalized cell densities at one time."""

    grid: Grid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def mass(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    def validate(self, mass_tol: float = 1e-9) -> None:
        if self.values.min() < 0:
            raise ValueError(f"negative density {self.values.min():.3e}")
        if abs(self.mass() - 1.0) > mass_tol:
            raise ValueError(f"density mass {self.mass():.12f} deviates from 1")

    @staticmethod
    def from_function(grid: Grid, fn: Callable, time: float = 0.0,
                      normalize: bool = True) -> "DensityField":
        vals = np.asarray(fn(grid.cell_centers()), dtype=float).reshape(grid.shape)
        if normalize:
            vals = vals / (vals.sum() * grid.cell_volume)
        return DensityField(grid, vals, time)


@dataclass
class CurrentField:
    """Per-face flux values; component k has counts[k]+1 entries along axis k.

    Boundary faces carry exactly zero flux (reflecting box).
    """

    grid: Grid
    components: list  # one shaped array per axis

    def boundary_max(self) -> float:
        worst = 0.0
        for k, comp in enumerate(self.components):
            lo = np.take(comp, [0], axis=k)
            hi = np.take(comp, [comp.shape[k] - 1], axis=k)
            worst = max(worst, float(np.max(np.abs(lo))), float(np.max(np.abs(hi))))
        return worst


def equilibrium_density(grid: Grid, model: FieldModel) -> DensityField:
    """Cell-evaluated e^{-φ}, normalized on the grid."""
    phi = model.phi(grid.cell_centers())
    vals = np.exp(-(phi - phi.min()))
    vals /= vals.sum() * grid.cell_volume
    return DensityField(grid, vals)


# ---------------------------------------------------------------------------
# face data and operator assembly
# ---------------------------------------------------------------------------

@dataclass
class _AxisFaces:
    """Interior-face quantities along one axis.

    The total face flux is F = Σ_pairs coef * u[col]; `flux_pairs` carries
    (cols, coefs) for the full flux, `diss_pairs` for the dissipative part
    only and `adv_pairs` for the conservative g-part only.
    """

    axis: int
    h: float
    area: float
    left: np.ndarray
    right: np.ndarray
    dphi: np.ndarray
    diss_pairs: list = field(default_factory=list)
    adv_pairs: list = field(default_factory=list)

    def flux(self, u_flat: np.ndarray, pairs: list) -> np.ndarray:
        out = np.zeros(self.left.shape[0])
        for cols, coefs in pairs:
            out += coefs * u_flat[cols]
        return out


class GridOperator:
    """Assembled discrete generator for one (grid, model) pair.

    Attributes
    ----------
    matrix : csr_matrix
        Forward operator L with du/dt = L u (u = flat cell values).
        Columns sum to zero (mass conservation is structural).
    faces : list of _AxisFaces
        Face-level flux data shared by the thermodynamic functionals.
    """

    def __init__(self, grid: Grid, model: FieldModel, advective_order: int = 2,
                 ito_eta=None):
        if grid.dim != model.dim:
            raise ValueError("grid and model dimensions differ")
        self.grid = grid
        self.model = model
        self.phi_cells = model.phi(grid.cell_centers())
        if not np.all(np.isfinite(self.phi_cells)):
            raise ValueError("phi is not finite on all cell centers")
        if self.phi_cells.max() - self.phi_cells.min() > 600.0:
            raise ValueError("phi spread too large for stable exponential weights; "
                             "shrink the box")
        self.faces = []
        rows, cols, vals = [], [], []
        for k in range(grid.dim):
            af = self._assemble_axis(k, advective_order, ito_eta)
            self.faces.append(af)
            inv_h = 1.0 / af.h
            for c, coef in af.diss_pairs + af.adv_pairs:
                rows.append(af.left)
                cols.append(c)
                vals.append(-coef * inv_h)
                rows.append(af.right)
                cols.append(c)
                vals.append(coef * inv_h)
        n = grid.ncells
        self.matrix = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n)).tocsr()
        self._bound = None
        self._backward = None
        self._omega = None

    # -- assembly ----------------------------------------------------------

    def _face_points(self, k: int):
        grid, model = self.grid, self.model
        shape = grid.shape
        n = grid.dim
        idx = np.arange(grid.ncells).reshape(shape)
        sl = [slice(None)] * n
        sl[k] = slice(0, shape[k] - 1)
        left = idx[tuple(sl)].ravel()
        sl[k] = slice(1, shape[k])
        right = idx[tuple(sl)].ravel()
        pts = grid.cell_centers()[left].copy()
        pts[:, k] += 0.5 * grid.spacing[k]
        return left, right, pts

    def _assemble_axis(self, k: int, advective_order: int, ito_eta) -> _AxisFaces:
        grid, model = self.grid, self.model
        h = float(grid.spacing[k])
        left, right, pts = self._face_points(k)
        phi_L = self.phi_cells[left]
        phi_R = self.phi_cells[right]
        dphi = phi_R - phi_L
        Dface = model.D(pts)
        if not np.all(np.isfinite(Dface)):
            raise ValueError(f"diffusion matrix not finite on axis-{k} faces")
        af = _AxisFaces(axis=k, h=h, area=grid.cell_volume / h,
                        left=left, right=right, dphi=dphi)

        # dissipative normal flux: (D_kk/h) [B(Δφ) u_L - B(-Δφ) u_R]
        Dkk = Dface[:, k, k]
        af.diss_pairs.append((left, Dkk / h * _bernoulli(dphi)))
        af.diss_pairs.append((right, -Dkk / h * _bernoulli(-dphi)))

        # dissipative cross flux for off-diagonal D (tangential Ω-derivatives)
        for l in range(grid.dim):
            if l == k:
                continue
            Dkl = Dface[:, k, l]
            if np.max(np.abs(Dkl)) <= 1e-300:
                continue
            self._cross_pairs(af, k, l, Dkl, pts)

        # conservative flux: q_f * (Ω_L + Ω_R)/2 with q = g e^{-φ} at faces;
        # exponentials enter only as bounded neighbor differences.
        phi_f = model.phi(pts)
        gk = model.g(pts)[:, k]
        if not (np.all(np.isfinite(gk)) and np.all(np.isfinite(phi_f))):
            raise ValueError(f"model fields not finite on axis-{k} faces")
        if advective_order == 4:
            # fourth-order face value: q_f - (q_{f+h} - 2 q_f + q_{f-h})/24
            pp = pts.copy()
            pp[:, k] += h
            pm = pts.copy()
            pm[:, k] -= h
            qe_L = (26.0 / 24.0) * gk * np.exp(phi_L - phi_f) \
                - (1.0 / 24.0) * model.g(pp)[:, k] * np.exp(phi_L - model.phi(pp)) \
                - (1.0 / 24.0) * model.g(pm)[:, k] * np.exp(phi_L - model.phi(pm))
            qe_R = (26.0 / 24.0) * gk * np.exp(phi_R - phi_f) \
                - (1.0 / 24.0) * model.g(pp)[:, k] * np.exp(phi_R - model.phi(pp)) \
                - (1.0 / 24.0) * model.g(pm)[:, k] * np.exp(phi_R - model.phi(pm))
        elif advective_order == 2:
            qe_L = gk * np.exp(phi_L - phi_f)
            qe_R = gk * np.exp(phi_R - phi_f)
        else:
            raise ValueError("advective_order must be 2 or 4")
        if ito_eta is not None:
            # Ito-form assembly: residual drift (∇·D - D∇φ - η) enters as a
            # plain centered advective flux; it cancels pointwise when η is
            # the compatible correction, leaving the divergence form.
            resid = model.D.row_divergence(pts)[:, k] \
                - np.einsum("mj,mj->m", Dface[:, k, :], model.phi.gradient(pts)) \
                - ito_eta(pts)[:, k]
            af.adv_pairs.append((left, 0.5 * (qe_L + resid)))
            af.adv_pairs.append((right, 0.5 * (qe_R + resid)))
        else:
            af.adv_pairs.append((left, 0.5 * qe_L))
            af.adv_pairs.append((right, 0.5 * qe_R))
        return af

    def _cross_pairs(self, af: _AxisFaces, k: int, l: int, Dkl: np.ndarray,
                     pts: np.ndarray) -> None:
        """Flux pairs for -D_kl e^{-φ_f} ∂_l Ω averaged from the two cells."""
        grid = self.grid
        shape = grid.shape
        phi_f = self.model.phi(pts)
        h_l = float(grid.spacing[l])
        stride = int(np.prod(shape[l + 1:]))
        face_shape = list(shape)
        face_shape[k] -= 1
        l_index = np.indices(face_shape)[l].ravel()

        for cell in (af.left, af.right):
            # each adjacent cell contributes half of its ∂_l Ω stencil
            lo = l_index == 0
            hi = l_index == shape[l] - 1
            mid = ~(lo | hi)
            for mask, offs, wts in (
                (mid, (stride, -stride), (0.5 / (2 * h_l), -0.5 / (2 * h_l))),
                (lo, (stride, 0), (0.5 / h_l, -0.5 / h_l)),
                (hi, (0, -stride), (0.5 / h_l, -0.5 / h_l)),
            ):
                if not mask.any():
                    continue
                for off, w in zip(offs, wts):
                    col = cell[mask] + off
                    coef = -Dkl[mask] * w * np.exp(self.phi_cells[col] - phi_f[mask])
                    base = np.zeros(af.left.shape[0])
                    # scatter back to full face arrays
                    cols = np.full(af.left.shape[0], -1, dtype=int)
                    cols[mask] = col
                    base[mask] = coef
                    # store with dummy col 0 where masked out (coef = 0)
                    cols[cols < 0] = 0
                    af.diss_pairs.append((cols, base))

    # -- derived operators ---------------------------------------------------

    @property
    def backward(self) -> sp.csr_matrix:
        """Adjoint generator: exact transpose, so <Lu, v> = <u, Lᵀv>."""
        if self._backward is None:
            self._backward = self.matrix.T.tocsr()
        return self._backward

    @property
    def omega(self) -> sp.csr_matrix:
        """Generator for Ω = u e^{φ}: entries e^{φ_i - φ_j} L_ij."""
        if self._omega is None:
            coo = self.matrix.tocoo()
            data = coo.data * np.exp(self.phi_cells[coo.row] - self.phi_cells[coo.col])
            self._omega = sp.coo_matrix((data, (coo.row, coo.col)),
                                        shape=coo.shape).tocsr()
        return self._omega

    def dt_bound(self) -> float:
        """0.4 · min(h²/(2 max tr D), h / max ‖g - D∇φ‖) on cell centers."""
        if self._bound is None:
            pts = self.grid.cell_centers()
            trD = np.trace(self.model.D(pts), axis1=-2, axis2=-1).max()
            drift = np.linalg.norm(self.model.drift(pts), axis=1).max()
            h = float(self.grid.spacing.min())
            bound = np.inf
            if trD > 0:
                bound = min(bound, h * h / (2.0 * trD))
            if drift > 0:
                bound = min(bound, h / drift)
            self._bound = 0.4 * bound
        return self._bound

    def dissipative_flux(self, u_flat: np.ndarray) -> list:
        return [af.flux(u_flat, af.diss_pairs) for af in self.faces]

    def advective_flux(self, u_flat: np.ndarray) -> list:
        return [af.flux(u_flat, af.adv_pairs) for af in self.faces]

    def total_flux(self, u_flat: np.ndarray) -> list:
        return [af.flux(u_flat, af.diss_pairs + af.adv_pairs) for af in self.faces]


def build_operator(grid: Grid, model: FieldModel,
                   advective_order: int = 2) -> GridOperator:
    """Assemble the discrete forward generator for a model on a grid."""
    return GridOperator(grid, model, advective_order=advective_order)


def build_operator_ito(grid: Grid, model: FieldModel, eta,
                       advective_order: int = 2) -> GridOperator:
    """Assemble ∇·[∇(Du) - ηu - gu] given an Ito-form drift correction η.

    The assembly reduces the Ito flux algebraically: the part of
    ∇(Du) - ηu beyond D(∇u + u∇φ) is the residual drift ∇·D - D∇φ - η,
    which is zero exactly when η solves ∇(D e^{-φ}) = η e^{-φ}.  With the
    compatible η the operator therefore coincides entrywise with the
    divergence-form assembly.
    """
    return GridOperator(grid, model, advective_order=advective_order, ito_eta=eta)


def backward_operator(op: GridOperator) -> sp.csr_matrix:
    return op.backward


def omega_operator(op: GridOperator) -> sp.csr_matrix:
    return op.omega


def stability_bound(op: GridOperator) -> float:
    return op.dt_bound()


def _heun(matrix: sp.csr_matrix, x: np.ndarray, dt: float) -> np.ndarray:
    k1 = matrix @ x
    k2 = matrix @ (x + dt * k1)
    return x + 0.5 * dt * (k1 + k2)


def step_forward(u: DensityField, op: GridOperator, dt: float) -> DensityField:
    """One Heun step of the forward equation.

    Mass is conserved exactly; negative undershoots are clipped and the
    (round-off sized) clipped mass restored by rescaling.
    """
    bound = op.dt_bound()
    if dt > bound:
        raise StabilityError(f"dt = {dt:.3e} exceeds stability bound {bound:.3e}")
    mass0 = u.values.sum()
    new = _heun(op.matrix, u.flat, dt)
    np.maximum(new, 0.0, out=new)
    s = new.sum()
    if s <= 0:
        raise ValueError("density collapsed to zero mass")
    new *= mass0 / s
    return DensityField(u.grid, new.reshape(u.grid.shape), u.time + dt)


def evolve_backward(v: np.ndarray, op: GridOperator, dt: float) -> np.ndarray:
    """One Heun step of the backward (adjoint) equation for observables."""
    bound = op.dt_bound()
    if dt > bound:
        raise StabilityError(f"dt = {dt:.3e} exceeds stability bound {bound:.3e}")
    return _heun(op.backward, np.asarray(v, dtype=float).ravel(), dt).reshape(v.shape)


def evolve_omega(omega: np.ndarray, op: GridOperator, dt: float) -> np.ndarray:
    """One Heun step for Ω = u e^{φ}; Ω ≡ 1 is an exact fixed point of the
    dissipative part and of the full operator up to the advective quadrature."""
    bound = op.dt_bound()
    if dt > bound:
        raise StabilityError(f"dt = {dt:.3e} exceeds stability bound {bound:.3e}")
    return _heun(op.omega, np.asarray(omega, dtype=float).ravel(), dt).reshape(omega.shape)


def run_forward(op: GridOperator, u0: DensityField, dt: float, n_steps: int,
                observer: Optional[Callable] = None,
                record_every: Optional[int] = None):
    """Advance n_steps; call observer(step, density) after each step
    (and once at step 0).  Optionally record snapshots every k steps.

    Returns (final DensityField, snapshots list).
    """
    u = u0
    snaps = []
    if observer is not None:
        observer(0, u)
    if record_every:
        snaps.append(u)
    for s in range(1, n_steps + 1):
        u = step_forward(u, op, dt)
        if observer is not None:
            observer(s, u)
        if record_every and (s % record_every == 0 or s == n_steps):
            snaps.append(u)
    return u, snaps


def stationary_residual(grid: Grid, model: FieldModel,
                        op: Optional[GridOperator] = None) -> dict:
    """Residuals of the cell-evaluated equilibrium density.

    res_full = ‖L e^{-φ}‖∞ · cellvol; res_conservative is the max discrete
    divergence of the face-sampled conservative current g e^{-φ}.  Both
    vanish under refinement for equilibrium models.
    """
    if op is None:
        op = build_operator(grid, model)
    ueq = equilibrium_density(grid, model).flat
    res_full = float(np.max(np.abs(op.matrix @ ueq))) * grid.cell_volume

    div = np.zeros(grid.ncells)
    for af in op.faces:
        f = af.flux(ueq, af.adv_pairs)
        np.add.at(div, af.right, f / af.h)
        np.add.at(div, af.left, -f / af.h)
    # divergence sign: du/dt contribution is -div
    res_cons = float(np.max(np.abs(div)))
    return {"res_full": res_full, "res_conservative": res_cons}


def current(u: DensityField, op: GridOperator) -> CurrentField:
    """Face-centered probability current J = (g - D∇φ)u - D∇u.

    Boundary faces are exactly zero.  At equilibrium J reduces to the
    conservative stationary current g e^{-φ} at the faces.
    """
    grid = op.grid
    comps = []
    flux = op.total_flux(u.flat)
    for k, af in enumerate(op.faces):
        shape = list(grid.shape)
        shape[k] += 1
        comp = np.zeros(shape)
        sl = [slice(None)] * grid.dim
        sl[k] = slice(1, grid.shape[k])
        face_shape = list(grid.shape)
        face_shape[k] -= 1
        comp[tuple(sl)] = flux[k].reshape(face_shape)
        comps.append(comp)
    return CurrentField(grid, comps)


# ---------------------------------------------------------------------------
# export formats
# ---------------------------------------------------------------------------

_MAGIC = "ORTHOFLUX-ARRAY 1"


def write_array(path, arr: np.ndarray, bounds=None, time: float = 0.0) -> None:
    """Row-major float64 array with a small text header (dims, bounds, time)."""
    arr = np.asarray(arr, dtype=float)
    lines = [_MAGIC, "shape " + " ".join(str(s) for s in arr.shape)]
    if bounds is not None:
        b = np.asarray(bounds, dtype=float).reshape(-1, 2)
        lines.append("bounds " + " ".join("%.16e" % v for v in b.ravel()))
    lines.append("time %.16e" % time)
    header = ("\n".join(lines) + "\n\n").encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.astype("<f8").tobytes(order="C"))


def read_array(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read()
    head, _, body = raw.partition(b"\n\n")
    lines = head.decode("ascii").splitlines()
    if lines[0] != _MAGIC:
        raise ValueError(f"not an orthoflux array file: {lines[0]!r}")
    meta = {"bounds": None, "time": 0.0}
    shape = None
    for line in lines[1:]:
        key, _, rest = line.partition(" ")
        if key == "shape":
            shape = tuple(int(v) for v in rest.split())
        elif key == "bounds":
            vals = [float(v) for v in rest.split()]
            meta["bounds"] = np.array(vals).reshape(-1, 2)
        elif key == "time":
            meta["time"] = float(rest)
    arr = np.frombuffer(body, dtype="<f8", count=int(np.prod(shape))).reshape(shape)
    meta["array"] = arr.copy()
    return meta


def snapshot_csv(u: DensityField) -> str:
    """CSV text of a grid snapshot: per-axis cell index, coordinates, u."""
    grid = u.grid
    n = grid.dim
    out = io.StringIO()
    out.write(",".join([f"i{k}" for k in range(n)]
                       + [f"x{k}" for k in range(n)] + ["u"]) + "\n")
    centers = grid.cell_centers()
    idx = np.stack(np.unravel_index(np.arange(grid.ncells), grid.shape), axis=-1)
    vals = u.flat
    for r in range(grid.ncells):
        cells = ",".join(str(i) for i in idx[r])
        coords = ",".join("%.16e" % c for c in centers[r])
        out.write(f"{cells},{coords},{'%.16e' % vals[r]}\n")
    return out.getvalue()
