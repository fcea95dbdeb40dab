"""Desk-scale laboratory for fractional powers of graph connection
Laplacians: forward propagators, source-to-solution map data, and the
inverse reconstruction pipeline that certifies recovery up to gauge."""

from .manifold import DiscreteManifold, Region, build_manifold, shortest_distances, ball_region, thickened_region
from .bundle import (
    HermitianBundle,
    GaugeTransform,
    StructureIso,
    build_bundle,
    l2_inner,
    l2_norm,
    apply_gauge,
    pullback_bundle,
    pullback_section,
    holonomy_trace,
    cycle_rotation_iso,
    torus_shift_iso,
)
from .operator import SpectralOperator, assemble, apply_function, kernel_projector
from .propagators import (
    TimeGrid,
    TimeSection,
    heat_apply,
    wave_kernel_apply,
    wave_cos_apply,
    duhamel_solve,
    fractional_apply,
    fractional_inverse_spectral,
    fractional_inverse_quadrature,
    GammaQuadrature,
    transmutation_gaussian_check,
    transmutation_printed_residual,
)
from .s2s import (
    LocalStructure,
    FracMapData,
    WaveMapData,
    local_structure,
    frac_map_assemble,
    wave_map_assemble,
    time_average,
    blago_inner,
    gram_matrix,
)
from .reconstruction import (
    ProbeConfig,
    SourceFamily,
    DistanceProfileSet,
    RayPlan,
    FiberProbe,
    ChartOperator,
    build_source_family,
    probe_engine,
    projection_residual,
    containment_test,
    first_arrival_distance,
    first_arrival_matrix,
    cut_time_estimate,
    exterior_distance,
    distance_family,
    match_profiles,
    recover_fiber_frame,
    recover_local_operator,
    gauge_invariant_compare,
)
from .reference import chart_operator_from_bundle

__version__ = "0.1.0"
