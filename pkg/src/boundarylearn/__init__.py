"""Active semi-supervised training of region-boundary classifiers.

A boundary classifier is trained from a small, interactively labeled subset
of boundaries: a label-propagation view over a feature-affinity graph and a
random-forest view query wherever they disagree.  The package also carries
the downstream greedy agglomeration and the split variation-of-information /
split Rand-index metrics used to check that the small-sample classifier
matches a fully supervised one.
"""

from .activeloop import (
    ActiveSession,
    ErrorTrace,
    LoopConfig,
    QueryBatch,
    check_stop,
    rank_disagreement,
    run_replay,
    seed_initial,
)
from .affinity import (
    AffinityConfig,
    AffinityGraph,
    build_affinity,
    estimate_sigma,
    partition_blocks,
)
from .forest import ForestConfig, ForestModel, predict_confidence, train_forest
from .graph import (
    BoundarySample,
    LabelState,
    RegionGraph,
    SuperpixelNode,
    apply_labels,
    load_region_graph,
    save_region_graph,
)
from .propagation import PropagationResult, SolverConfig, solve_propagation
from .segmentation import (
    AgglomerationConfig,
    Segmentation,
    SplitScores,
    agglomerate,
    calibrate_delta,
    split_ri,
    split_vi,
)
from .synth import SynthConfig, generate, train_test_pair

__version__ = "0.1.0"
