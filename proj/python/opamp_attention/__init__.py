"""Adapter-based differential attention denoising with tunable CMRR."""

from ._core import (
    Activation,
    CheckpointError,
    Model,
    assemble_tokens,
    attach_lowrank_baseline,
    attach_opamp_adapters,
    build_base_model,
    document_count,
    evaluate,
    exact_match,
    finetune,
    gains_from_resistors,
    generate_example,
    load_checkpoint,
    lookup_oracle,
    opamp_output,
    partial_match,
    pretrain,
    save_checkpoint,
    trace_attention,
)

__all__ = [
    "Activation",
    "CheckpointError",
    "Model",
    "assemble_tokens",
    "attach_lowrank_baseline",
    "attach_opamp_adapters",
    "build_base_model",
    "document_count",
    "evaluate",
    "exact_match",
    "finetune",
    "gains_from_resistors",
    "generate_example",
    "load_checkpoint",
    "lookup_oracle",
    "opamp_output",
    "partial_match",
    "pretrain",
    "save_checkpoint",
    "trace_attention",
]
