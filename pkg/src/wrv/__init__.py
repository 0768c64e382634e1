"""Writer retrieval from binary document images.

Pages are thresholded, cut into grid windows, encoded by a vision
transformer, and the foreground patch tokens are aggregated into a
global page descriptor (residual aggregation against a cluster
codebook, whitened PCA). Retrieval ranks pages by cosine distance with
optional neighborhood reranking.
"""

from .codebook import Codebook, extract_foreground_tokens, minibatch_kmeans
from .config import PipelineConfig, preset
from .encoder import (
    PageDescriptor,
    PcaModel,
    encode_document,
    pca_fit,
    pca_transform,
    power_l2_normalize,
    sum_pool,
    vlad_encode,
    window_tokens,
)
from .manifest import Manifest, ManifestEntry
from .preproc import foreground_fraction, sauvola_binarize
from .retrieval import (
    Corpus,
    RankedList,
    cosine_distance,
    graph_rerank,
    krnn_rerank,
    mean_average_precision,
    rank_all,
    top1_accuracy,
)
from .sampler import PatchGrid, Window, filter_windows, patchify, sample_windows
from .vit import (
    AttentionMap,
    TokenSequence,
    VitConfig,
    VitWeights,
    attention_map,
    attmask_select,
    load_weights,
    random_weights,
    save_weights,
    vit_forward,
)

__all__ = [
    "AttentionMap",
    "Codebook",
    "Corpus",
    "Manifest",
    "ManifestEntry",
    "PageDescriptor",
    "PatchGrid",
    "PcaModel",
    "PipelineConfig",
    "RankedList",
    "TokenSequence",
    "VitConfig",
    "VitWeights",
    "Window",
    "attention_map",
    "attmask_select",
    "cosine_distance",
    "encode_document",
    "extract_foreground_tokens",
    "filter_windows",
    "foreground_fraction",
    "graph_rerank",
    "krnn_rerank",
    "load_weights",
    "mean_average_precision",
    "minibatch_kmeans",
    "patchify",
    "pca_fit",
    "pca_transform",
    "power_l2_normalize",
    "preset",
    "random_weights",
    "rank_all",
    "sample_windows",
    "sauvola_binarize",
    "save_weights",
    "sum_pool",
    "top1_accuracy",
    "vit_forward",
    "vlad_encode",
    "window_tokens",
]

__version__ = "0.1.0"
