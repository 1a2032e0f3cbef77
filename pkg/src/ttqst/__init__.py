"""Quantum state tomography for matrix product operators via TT completion."""

__version__ = "0.1.0"

from .manifold import (  # noqa: F401
    ManifoldError,
    SparseTensor,
    TangentGeometry,
    TangentVector,
    manifold_dim,
    project_tangent_dense,
    project_tangent_sparse,
    retract,
    tangent_step,
    tangent_to_tt,
    trim,
)
from .measurement import (  # noqa: F401
    ExactSource,
    GaussianSource,
    MeasurementRecord,
    MeasurementStream,
    ShotSource,
    exact_expectation,
    make_stream,
    next_batch,
    sample_shots_qubit,
)
from .mpo import (  # noqa: F401
    LocalBasis,
    Mpo,
    MpoError,
    Mps,
    coeff_to_mpo,
    fidelity,
    fidelity_pure,
    gauge_transform,
    hermitian_decompose,
    is_hermitian_cores,
    make_basis,
    mpo_to_coeff,
    mpo_trace,
    mps_to_mpo,
)
from .serialize import read_ttc1, read_ttr1, write_ttc1, write_ttr1  # noqa: F401
from .solvers import (  # noqa: F401
    InitConfig,
    InitError,
    RunTrace,
    SolverConfig,
    SolverError,
    orgd_run,
    orgd_step,
    rgd_offline_run,
    rgd_offline_step,
    rsgd_run,
    spectral_init,
)
from .states import StateSpec, ghz, ising_ground, pure_state_coeff, random_mps  # noqa: F401
from .tt import (  # noqa: F401
    CoherenceReport,
    SeparationSpectrum,
    TtError,
    TtTensor,
    coherence_report,
    left_orthogonalize,
    left_part,
    right_part,
    separation_singular_values,
    tt_axpy,
    tt_dense,
    tt_distance,
    tt_entry,
    tt_from_dense,
    tt_inner,
    tt_norm,
    ttsvd,
)
