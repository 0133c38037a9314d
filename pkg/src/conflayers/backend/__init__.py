from .base import Backend, BackendStepOutput, DecoderState, LengthCache, truncate
from .toy import KVCache, ToyModelConfig, ToyTransformer
from .trace import TraceBackend, load_trace, record_trace, write_trace

__all__ = [
    "Backend",
    "BackendStepOutput",
    "DecoderState",
    "KVCache",
    "LengthCache",
    "ToyModelConfig",
    "ToyTransformer",
    "TraceBackend",
    "load_trace",
    "record_trace",
    "truncate",
    "write_trace",
]
