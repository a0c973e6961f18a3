"""Context-pretrained graph predictor for cell-based architecture search."""

from .autodiff import AdamState, DivergenceError, Tensor, adam_step
from .bench import (
    DEFAULT_VOCAB,
    SpaceSpec,
    make_annotated,
    read_dataset,
    sample_space,
    synth_accuracy,
    write_dataset,
)
from .encoder import EncoderParams, MlpParams, encode_graph, gin_layer, init_encoder, mlp_forward
from .evaluation import RankReport, Split, evaluate_ranking, kendall_tau, make_split
from .graphs import (
    CellGraph,
    EdgeOpCell,
    OpVocabulary,
    ValidationReport,
    edge_ops_to_node_ops,
    one_hot_features,
    permute,
    undirected_neighbors,
    validate,
    wl_hash,
)
from .predictor import (
    AnnotatedArch,
    FinetuneConfig,
    PredictorParams,
    bpr_loss,
    finetune,
    mse_loss,
    predict_score,
)
from .pretrain import (
    ContextPair,
    PretrainConfig,
    Subgraph,
    build_batch_pairs,
    context_loss,
    embed_context,
    extract_context_ring,
    extract_k_hop,
    pretrain,
)
from .search import MutationSpec, SearchState, evolve, mutate, random_search, rank_then_query

__version__ = "0.1.0"
