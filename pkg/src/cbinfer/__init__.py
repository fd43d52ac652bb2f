"""Change-based CNN inference for static-camera video."""

from .baseline import (
    ConvGeometry,
    FilterMatrix,
    argmax_classify,
    conv_full,
    conv_gemm,
    gemm,
    im2col_full,
    maxpool,
    relu,
)
from .cbconv import (
    CBConvState,
    LayerStats,
    cbconv_forward,
    detect_changes,
    dilate_changes,
    extract_indexes,
    gen_x_reduced,
    update_output,
    worst_case_propagation,
)
from .network import (
    LayerSpec,
    MemoryMode,
    MemoryReport,
    Network,
    NetworkSpec,
    forward_frame,
    load_network,
    memory_footprint,
    reset_state,
)

__version__ = "0.1.0"

__all__ = [
    "ConvGeometry",
    "FilterMatrix",
    "argmax_classify",
    "conv_full",
    "conv_gemm",
    "gemm",
    "im2col_full",
    "maxpool",
    "relu",
    "CBConvState",
    "LayerStats",
    "cbconv_forward",
    "detect_changes",
    "dilate_changes",
    "extract_indexes",
    "gen_x_reduced",
    "update_output",
    "worst_case_propagation",
    "LayerSpec",
    "MemoryMode",
    "MemoryReport",
    "Network",
    "NetworkSpec",
    "forward_frame",
    "load_network",
    "memory_footprint",
    "reset_state",
]
