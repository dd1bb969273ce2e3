"""Model-side attention capture writing ATTN1 files."""

from .dump import (
    CONDITION_NAMES,
    IMAGE_CONDITIONS,
    HookConfig,
    HookError,
    Sample,
    dump_attention,
    load_samples,
    write_attn_file,
)

__all__ = [
    "CONDITION_NAMES",
    "IMAGE_CONDITIONS",
    "HookConfig",
    "HookError",
    "Sample",
    "dump_attention",
    "load_samples",
    "write_attn_file",
]
