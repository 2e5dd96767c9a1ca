"""Guided decoding engine: fuse a text-only reasoner into an omni-modal
backbone at inference time via adaptive contrastive logit mixing."""

from .decoder import BenchReport, DecodeJob, DecodeResult, bench, caption_then_answer, decode
from .errors import (
    CapacityError,
    ConfigError,
    DimensionError,
    EngineError,
    NonFiniteError,
    ProtocolError,
    SessionStateError,
    TokenRangeError,
    ToySpecError,
    TransportError,
    VocabularyMismatchError,
)
from .guidance import (
    STRATEGIES,
    STRATEGY_BRANCHES,
    GuidanceConfig,
    StepWeights,
    average_fusion,
    fixed_contrast,
    lrm_guide_fixed,
    reasoning_weights,
    stepwise_alpha,
    stepwise_fuse,
    stepwise_mix,
    vcd_ablation_mix,
)
from .numerics import DIVERGENCE_LOG_BASE, LN2, js_divergence, kl_divergence, softmax
from .report import (
    StepTrace,
    TraceHeader,
    alpha_histogram,
    emit_traces,
    extract_choice,
    read_traces,
    render_attribution,
    tabulate,
)
from .sampler import SamplerConfig, apply_repetition_penalty, sample_token, top_p_filter
from .client import RemoteSource
from .config import Runtime, build_runtime, load_config, tokenize
from .server import LatencyModel, ModelServer, serve
from .sources import (
    LogitSource,
    OmniPayload,
    PromptInput,
    Session,
    ToyModel,
    Vocabulary,
    build_toy_model,
    check_compatibility,
    close,
    parse_toy_spec,
    prefill,
    step,
)

__version__ = "0.1.0"

__all__ = [
    "BenchReport",
    "CapacityError",
    "ConfigError",
    "DIVERGENCE_LOG_BASE",
    "DecodeJob",
    "DecodeResult",
    "DimensionError",
    "EngineError",
    "GuidanceConfig",
    "LN2",
    "LatencyModel",
    "LogitSource",
    "ModelServer",
    "NonFiniteError",
    "OmniPayload",
    "PromptInput",
    "ProtocolError",
    "RemoteSource",
    "Runtime",
    "STRATEGIES",
    "STRATEGY_BRANCHES",
    "SamplerConfig",
    "Session",
    "SessionStateError",
    "StepTrace",
    "StepWeights",
    "TokenRangeError",
    "ToyModel",
    "ToySpecError",
    "TraceHeader",
    "TransportError",
    "Vocabulary",
    "VocabularyMismatchError",
    "alpha_histogram",
    "apply_repetition_penalty",
    "average_fusion",
    "bench",
    "build_runtime",
    "build_toy_model",
    "caption_then_answer",
    "check_compatibility",
    "close",
    "decode",
    "emit_traces",
    "extract_choice",
    "fixed_contrast",
    "js_divergence",
    "kl_divergence",
    "load_config",
    "lrm_guide_fixed",
    "parse_toy_spec",
    "prefill",
    "read_traces",
    "reasoning_weights",
    "render_attribution",
    "sample_token",
    "serve",
    "softmax",
    "step",
    "stepwise_alpha",
    "stepwise_fuse",
    "stepwise_mix",
    "tabulate",
    "tokenize",
    "top_p_filter",
    "vcd_ablation_mix",
]
