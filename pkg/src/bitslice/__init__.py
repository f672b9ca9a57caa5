"""Bit-slice integer inference kernels.

Int8 matrices are decomposed into binary planes (seven magnitude planes and
a sign plane).  Columns of short plane slabs repeat heavily, so the grouped
kernel buckets equal columns, accumulates one merged activation per bucket,
and reconstructs the slab outputs from the merged values.  The same plane
view drives a two-state plane codec with a container format, a progressive
top-k attention predictor that fetches key planes most-significant first,
and a toy decoder layer that runs every matrix product through these paths.
"""

from .codec import (
    compression_policy,
    decode_plane,
    encode_plane,
    measured_compression_ratio,
    model_compression_ratio,
    pack_plane_raw,
    unpack_plane_raw,
)
from .container import (
    ContainerHeader,
    ContainerSummary,
    read_container,
    read_header,
    read_segment,
    write_container,
)
from .costmodel import (
    DseRow,
    bitserial_gemv_adds,
    dse_csv,
    dse_sweep,
    exact_adds,
    merged_gemv_adds,
    value_gemv_adds,
    whole_matrix_merged_adds,
)
from .engine import (
    BenchmarkResult,
    DecoderLayer,
    KvCache,
    LayerConfig,
    RunReport,
    compare_reference,
    gelu,
    layer_norm,
    run_layer_benchmark,
    softmax_ordered,
)
from .errors import (
    CorruptContainerError,
    CorruptStreamError,
    DataError,
    UnsupportedFormatError,
)
from .gemm import (
    MergedVector,
    OpCounters,
    cam_bucketize,
    enumeration_matrix,
    gemm_tiled,
    gemv_bitsliced,
    group_keys,
    merge_activations,
    reconstruct_merged,
)
from .matio import read_matrix, write_matrix
from .planes import (
    SignMagnitudeTensor,
    SparsityReport,
    from_sign_magnitude,
    gen_gaussian_weights,
    sparsity_stats,
    split_signed,
    to_sign_magnitude,
)
from .predict import (
    PredictionResult,
    PredictorConfig,
    exact_scores,
    exact_topk,
    predict,
    recall,
    truncate_query,
)
from .quantize import (
    FusedAffine,
    QuantParams,
    apply_fused,
    encode_activations,
    fuse_rescale,
    output_range_params,
    quantize_activations,
    quantize_symmetric,
    quantize_weights,
    round_half_away,
)

__version__ = "0.1.0"

__all__ = [
    "BenchmarkResult",
    "ContainerHeader",
    "ContainerSummary",
    "CorruptContainerError",
    "CorruptStreamError",
    "DataError",
    "DecoderLayer",
    "DseRow",
    "FusedAffine",
    "KvCache",
    "LayerConfig",
    "MergedVector",
    "OpCounters",
    "PredictionResult",
    "PredictorConfig",
    "QuantParams",
    "RunReport",
    "SignMagnitudeTensor",
    "SparsityReport",
    "UnsupportedFormatError",
    "apply_fused",
    "bitserial_gemv_adds",
    "cam_bucketize",
    "compare_reference",
    "compression_policy",
    "decode_plane",
    "dse_csv",
    "dse_sweep",
    "enumeration_matrix",
    "encode_activations",
    "encode_plane",
    "exact_adds",
    "exact_scores",
    "exact_topk",
    "from_sign_magnitude",
    "fuse_rescale",
    "gelu",
    "gemm_tiled",
    "gemv_bitsliced",
    "gen_gaussian_weights",
    "group_keys",
    "layer_norm",
    "measured_compression_ratio",
    "merge_activations",
    "merged_gemv_adds",
    "model_compression_ratio",
    "output_range_params",
    "pack_plane_raw",
    "predict",
    "quantize_activations",
    "quantize_symmetric",
    "quantize_weights",
    "read_container",
    "read_header",
    "read_matrix",
    "read_segment",
    "recall",
    "reconstruct_merged",
    "round_half_away",
    "run_layer_benchmark",
    "softmax_ordered",
    "sparsity_stats",
    "split_signed",
    "to_sign_magnitude",
    "truncate_query",
    "unpack_plane_raw",
    "value_gemv_adds",
    "whole_matrix_merged_adds",
    "write_container",
    "write_matrix",
]
