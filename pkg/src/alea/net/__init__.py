from .wire import (
    HEADER_SIZE,
    MAX_BODY,
    DecodeError,
    Kind,
    MessageEnvelope,
    SizeError,
    WireError,
    decode,
    encode,
    stage_of,
)

__all__ = [
    "HEADER_SIZE",
    "MAX_BODY",
    "DecodeError",
    "Kind",
    "MessageEnvelope",
    "SizeError",
    "WireError",
    "decode",
    "encode",
    "stage_of",
]
