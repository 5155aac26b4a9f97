"""Inter-layer visual attention discrepancy: saliency, enhancement and traces."""

from ._core import (
    AttentionTrace,
    EnhancementConfig,
    EvidenceWeights,
    FormatError,
    IlvadError,
    SaliencyMap,
    StepAttention,
    TokenLayout,
    TraceError,
    Violation,
    apply_step,
    apply_trace,
    build_saliency,
    compare_traces,
    decode_trace,
    encode_trace,
    format_saliency,
    generate,
    normalize_saliency,
    parse_saliency,
    read_trace,
    render_pgm,
    validate_trace,
    write_trace,
)

__version__ = "0.1.0"
