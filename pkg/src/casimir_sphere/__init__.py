"""Photon creation in a spherical cavity with an oscillating, perfectly
conducting wall.

The electromagnetic TE / TM modes map onto massless scalar fields with
Dirichlet / generalized-Neumann boundary conditions.  This package evolves
the coupled equations for the instantaneous-basis mode amplitudes, extracts
Bogoliubov coefficients and particle numbers, cross-checks them against the
multiple-scale (slow-time) closed forms, and builds the angular-momentum-zero
(singlet) structure of the created-photon state.
"""

__version__ = "0.1.0"

from .errors import (
    BracketingError,
    ConfigError,
    DivergenceError,
    DomainError,
    InvariantError,
    PreconditionError,
    StiffnessError,
)
from .specfun import (
    BesselZeroTable,
    Spectrum,
    default_table,
    dirichlet_zero,
    neumann_zero,
    sph_bessel_j,
    sph_bessel_j_deriv,
)
from .cavity import (
    CouplingSet,
    GaugeProfile,
    Trajectory,
    builtin_gauge,
    coupling_dirichlet,
    coupling_neumann,
    mode_normalization,
    trajectory_eval,
)
from .dynamics import (
    AmplitudeState,
    BogoliubovPair,
    assemble_rhs,
    evolve,
    extract_bogoliubov,
    initial_state,
    particle_number,
)
from .msa import (
    ResonanceReport,
    SlowAmplitudes,
    detect_resonances,
    growth_rate,
    msa_closed_form,
    msa_evolve_reduced,
)
from .fock import (
    FockState,
    build_operators,
    build_out_vacuum,
    coefficient_C,
    verify_singlet,
)
