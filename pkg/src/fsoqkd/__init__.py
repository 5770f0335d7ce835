"""Decoy-state QKD link simulator for turbulent free-space optical MIMO channels."""

__version__ = "0.1.0"

from .channel import (
    AtmosphereParams,
    ChannelDraw,
    atmospheric_attenuation,
    build_channel,
    one_way_transmissivity,
    rytov_variance,
    two_way_transmissivity,
)
from .decoy import (
    DecoyObservations,
    DetectorModel,
    SourceModel,
    gain_function_G,
    observations_from_csv,
    one_way_bounds,
    overall_gain,
    overall_qber,
    synthesize_observations,
    two_way_bounds,
    two_way_observables,
)
from .numerics import (
    QuadratureSpec,
    RandomStream,
    bessel_j0,
    binary_entropy,
    integrate,
    sample_lognormal_fading,
    sample_radial_misalignment,
)
from .optics import (
    ApertureLayout,
    BeamGeometry,
    GridSpec,
    MisalignmentModel,
    OverlapTable,
    PropagatedField,
    channel_gain,
    misalignment_stats,
    propagate_field,
    ring_layout,
    spatial_spectrum,
    transmit_field,
)
from .protocol import (
    MimoResult,
    ProtocolParams,
    SubchannelSkr,
    mimo_qber,
    mimo_skr,
    skr_one_way,
    skr_two_way,
)
from .simulation import (
    CrossoverResult,
    SimulationConfig,
    SweepCurve,
    SweepPoint,
    find_crossover,
    run_sweep,
    sweep_crossover_vs_n,
)
