"""TDOA estimation and 2D sound source localization for distributed microphone arrays."""

from .geometry import (
    SPEED_OF_SOUND,
    MicArray,
    TdoaVector,
    consistency_residual,
    matrix_from_vector,
    tdoa_vector_for_source,
    true_tdoa,
)
from .incremental import IncrementalResult, run_incremental
from .localization import (
    PositionEstimate,
    SrpGrid,
    si_locate,
    srp_phat_locate,
    srp_tdoa_readout,
)
from .metrics import mean_tdoa_error, position_metrics, vad_snapshots
from .minimal_set import (
    EdgeOrder,
    ReliabilityGraph,
    SpanningTree,
    build_graph,
    order_edges,
    prim_mst,
    rewrite_to_reference,
    select_ref_arbitrary,
    select_ref_centroid,
    select_ref_reliability,
)
from .pipeline import ExperimentConfig, run_experiment
from .scene import Scene
from .spectral import (
    CpsdState,
    GccFunction,
    StftConfig,
    cpsd_update,
    estimate_tdoa,
    gcc_phat,
    phat_weight,
    stft,
)

__version__ = "0.1.0"
