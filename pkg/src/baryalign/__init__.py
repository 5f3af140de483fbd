"""Unsupervised multilingual word-embedding alignment through a Wasserstein barycenter."""
from .align import (
    AlignmentState,
    LanguageTree,
    OrthogonalMap,
    PipelineConfig,
    align,
    arithmetic_mean_pivot,
    barycenter_align,
    gw_initialize,
    hierarchical_align,
    load_checkpoint,
    procrustes,
    save_checkpoint,
    translate_via_tree,
)
from .barycenter import BarycenterConfig, BarycenterState, compute_barycenter
from .embed_io import (
    DiscreteDistribution,
    EmbeddingSpace,
    GoldDictionary,
    center_embeddings,
    cosine_distance_matrix,
    load_embeddings,
    load_gold_dictionary,
    squared_euclidean_cost,
)
from .evaluate import (
    EvalReport,
    Lexicon,
    infer_translations,
    mcnemar_one_sided,
    mean_average_precision,
    precision_at_k,
)
from .gromov import GWConfig, gromov_wasserstein
from .ot import Coupling, SinkhornConfig, exact_ot_oracle, sinkhorn, wasserstein_sq

__version__ = "0.1.0"
