"""livejam: a desk-scale live music stream generator.

Chunk-based autoregressive generation over residual-quantized audio tokens,
steered by weighted text/audio style prompts, descriptor controls, and
injected live audio. Library, CLI, and WebSocket service.
"""
from .codec import SAMPLE_RATE, decode_audio, encode_audio, read_wav, write_wav
from .controls import ControlPrior, extract_descriptors, prior_from_targets
from .inject import InjectionConfig
from .model import make_backend
from .sampling import SamplerConfig
from .session import SessionConfig, SessionCore, render_offline
from .stream import (
    EngineConfig,
    RealtimeRunner,
    StreamEngine,
    StreamMetrics,
    generate_stream,
    run_transition,
)
from .style import HashEmbedder, PromptEntry, PromptMix, StyleEmbedding
from .tokens import Chunk, TokenFrame

__version__ = "0.1.0"

__all__ = [
    "SAMPLE_RATE",
    "Chunk",
    "ControlPrior",
    "EngineConfig",
    "HashEmbedder",
    "InjectionConfig",
    "PromptEntry",
    "PromptMix",
    "RealtimeRunner",
    "SamplerConfig",
    "SessionConfig",
    "SessionCore",
    "StreamEngine",
    "StreamMetrics",
    "StyleEmbedding",
    "TokenFrame",
    "decode_audio",
    "encode_audio",
    "extract_descriptors",
    "generate_stream",
    "make_backend",
    "prior_from_targets",
    "read_wav",
    "render_offline",
    "run_transition",
    "write_wav",
]
