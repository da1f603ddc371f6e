"""Structure-preserving model reduction for port-Hamiltonian systems.

The package implements three classes of port-Hamiltonian full-order models
(time-invariant, time-varying, nonlinear with factorized energy gradient),
a family of approximation ansatzes up to shifted-mode separable ones,
energy-consistent projection-based reduced-order models, an implicit
midpoint integrator, snapshot-based offline routines and energy/error
diagnostics.  The command line in :mod:`phmor.cli` drives the full
pipeline from YAML run configurations.
"""

from .systems import (
    PhLti,
    PhLtv,
    PhNonlinearQ,
    Tolerances,
    ValidationReport,
    validate,
    hamiltonian_quadratic,
    dissipation_supply,
    check_equilibrium_origin,
    lti_as_ltv,
)
from .ansatz import (
    LinearTI,
    LinearTV,
    Factorizable,
    Separable,
    PeriodicShift,
    ExtendedShift,
    ModeSet,
    build_separable_from_shifts,
    eval_basis,
    eval_vhat,
    lift,
    shift_apply,
)
from .reduction import (
    Rom,
    reduce_lti,
    reduce_ltv,
    reduce_factorizable,
    reduce_separable_ltv,
    reduce_separable_nonlinear,
    reduce_galerkin_baseline,
    rom_from_system,
    verify_optimality,
)
from .timestep import (
    TimeGrid,
    Trajectory,
    NewtonControls,
    newton_solve,
    integrate_midpoint,
    BlowUpError,
    StepFailureError,
)
from .models import (
    AdeParams,
    WildfireParams,
    build_ade_fom,
    build_wildfire_fom,
    wildfire_rhs_equivalence_check,
)
from .offline import SnapshotSet, OfflineResult, estimate_shift_paths, fit_modes, pod
from .diagnostics import (
    PowerBalanceRecord,
    power_balance_series,
    relative_l2_error,
    StabilityCertificate,
    stability_certificate,
    error_bound_eval,
)

__version__ = "0.1.0"
