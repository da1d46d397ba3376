"""orthoflux: diffusion models with orthogonal conservative currents.

Drift decomposition b = -D∇φ + g with ∇·g = 0 and ∇φ·g = 0, finite-volume
forward/backward evolution on boxes, exact linear-Gaussian references, SDE
ensembles with the (t, φ, g) -> (-t, φ, -g) time reversal, and the
thermodynamic functionals (U, S, F, entropy production, heat flux) with
their balance identities.
"""

from .ao import AoModel, ao_field_model, ao_orthogonality_check, assemble_ao
from .fields import (FieldModel, MatrixField, ScalarField, VectorField,
                     canonical_conservative, decompose_drift, eta_from_phi,
                     orthogonality_residual, sample_box, split_parallel_perp)
from .grid import (CurrentField, DensityField, Grid, GridOperator,
                   StabilityError, backward_operator, build_operator,
                   build_operator_ito, current, equilibrium_density,
                   evolve_backward, evolve_omega, omega_operator, read_array,
                   run_forward, stability_bound, stationary_residual,
                   step_forward, write_array)
from .linear import (LinearModel, gaussian_flow_oracle,
                     linear_equilibrium_fields, solve_lyapunov)
from .models import (HamiltonianParams, KramersParams, MODEL_REGISTRY,
                     ao_linear, klein_kramers, make_model, rotational_ou,
                     stochastic_damping, stochastic_hamiltonian,
                     validate_equilibrium)
from .perturbation import (EpsilonModel, residual_phi0, residual_phi1,
                           residual_phi2, reversal_classify)
from .sde import (Ensemble, SimConfig, estimate_ep_pathwise, reverse_model,
                  sample_stationary, simulate, two_time_joint_test)
from .thermo import (ThermoRecord, balance_check, h_functional,
                     thermo_series, thermo_snapshot)

__version__ = "0.1.0"
