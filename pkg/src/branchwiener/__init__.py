"""branchwiener: branching Wiener process simulation and the Hermite-series
analysis of its particle density.

The pieces, bottom up: exact multi-index combinatorics; heat-calculus
Hermite polynomials H_n(x,t); truncated Gaussian-kernel expansions; bounded
regions with exact moments; a deterministic lineage-keyed particle
simulator; the martingale statistics V_alpha(t)/m^t with their moment
oracles; the order-k density expansion; and a linear-inference scheme that
recovers the expansion coefficients from observed counts.
"""

__version__ = "0.1.0"

from .errors import (
    ConditioningError,
    PopulationCapError,
    ValidationError,
)
from .multiindex import MultiIndex
from .hermite import hermite_1d, hermite_multi, hermite_table
from .kernel_expansion import (
    KernelExpansionParams,
    gauss_kernel,
    truncated_kernel,
    truncated_kernel_shifted,
    truncation_error_scan,
)
from .regions import Ball, Box, UnionRegion, moment, volume, region_from_json
from .simulator import (
    OffspringLaw,
    SimConfig,
    Snapshot,
    count,
    max_radius,
    merge_snapshots,
    read_snapshot_file,
    run,
    step,
)
from .martingales import (
    NTable,
    conditional_expectation_field,
    estimate_n,
    lp_increment_diagnostic,
    n0_second_moment,
    n_second_moment,
    second_moment_oracle,
    u_statistic,
    v_alpha,
)
from .expansion import (
    expansion_value,
    plugin_expansion,
    plugin_time,
    required_indices,
    theorem_a_form,
)
from .inference import (
    DesignSystem,
    Prediction,
    default_sets,
    design_matrix,
    predict,
    solve_n,
)

__all__ = [
    "__version__",
    "ValidationError",
    "ConditioningError",
    "PopulationCapError",
    "MultiIndex",
    "hermite_1d",
    "hermite_table",
    "hermite_multi",
    "KernelExpansionParams",
    "gauss_kernel",
    "truncated_kernel",
    "truncated_kernel_shifted",
    "truncation_error_scan",
    "Box",
    "Ball",
    "UnionRegion",
    "moment",
    "volume",
    "region_from_json",
    "OffspringLaw",
    "SimConfig",
    "Snapshot",
    "run",
    "step",
    "count",
    "max_radius",
    "merge_snapshots",
    "read_snapshot_file",
    "NTable",
    "v_alpha",
    "estimate_n",
    "conditional_expectation_field",
    "second_moment_oracle",
    "n0_second_moment",
    "n_second_moment",
    "u_statistic",
    "lp_increment_diagnostic",
    "required_indices",
    "expansion_value",
    "theorem_a_form",
    "plugin_expansion",
    "plugin_time",
    "DesignSystem",
    "design_matrix",
    "solve_n",
    "predict",
    "Prediction",
    "default_sets",
]
