"""Partition decoupling of correlation networks.

Iterated spectral clustering of a panel of time series, gated by a
Gaussian-ensemble null model, with exact multiresolution reconstruction and
Partition Decoupled Null Model (PDNM) synthesis.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    PartitioningFailure,
    PDMError,
    ScrubFailure,
)
from .panel import (  # noqa: E402
    PricePanel,
    SeriesPanel,
    clean_extremes,
    filter_missing,
    load_prices,
    log_returns,
    normalize_rows,
)
from .spectral import (  # noqa: E402
    GENullConfig,
    KMeansConfig,
    Partition,
    build_levels,
    chordal_distance,
    correlation,
    count_significant,
    ge_threshold,
    laplacian,
    spectral_kmeans,
)
from .scrub import characteristic_series, scrub, solve_pressures  # noqa: E402
from .pdm import (  # noqa: E402
    DecompositionRecord,
    PdnmSpec,
    decompose,
    generate_pdnm,
    partition_tree,
    reconstruct,
)
from .analysis import (  # noqa: E402
    LabelTable,
    adjusted_rand_index,
    classical_mds,
    dominance_report,
    near_neighbor_edges,
    sector_pressure,
)
