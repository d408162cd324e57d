"""Event-image fusion toolkit.

Events are exchanged as ``[N, 4]`` int64 arrays of ``(t_us, x, y, p)``;
tensors as float32 numpy arrays. Network configs are JSON strings.
"""

from ._core import (
    DEFAULT_BINS,
    DEFAULT_WINDOW_US,
    GRAD_TOLERANCE,
    Error,
    default_config,
    encode,
    format_events,
    forward,
    gradcheck,
    gradcheck_modules,
    kernel_k,
    minimal_config,
    parse_events,
    read_tensor,
    synth_scene,
    train,
    validate_config,
    write_tensor,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_BINS",
    "DEFAULT_WINDOW_US",
    "GRAD_TOLERANCE",
    "Error",
    "default_config",
    "encode",
    "format_events",
    "forward",
    "gradcheck",
    "gradcheck_modules",
    "kernel_k",
    "minimal_config",
    "parse_events",
    "read_tensor",
    "synth_scene",
    "train",
    "validate_config",
    "write_tensor",
]
