"""Model and tokenizer loading, with optional weight quantization.

Quantized configs are simulated by snapping every floating-point weight
tensor to a symmetric uniform grid (2^bits levels) and dequantizing back
to float32, so everything downstream sees plain floats.
"""

from __future__ import annotations

import torch


class ModelLoadError(RuntimeError):
    pass


@torch.no_grad()
def quantize_weights(model, bits: int) -> None:
    """Per-tensor symmetric round-to-grid, in place."""
    if bits not in (4, 8):
        raise ValueError(f"bits must be 4 or 8, got {bits}")
    qmax = 2 ** (bits - 1) - 1
    for param in model.parameters():
        if not param.dtype.is_floating_point:
            continue
        scale = param.abs().max() / qmax
        if scale == 0:
            continue
        q = (param / scale).round().clamp(-qmax - 1, qmax)
        param.copy_(q * scale)


def load_model_and_tokenizer(model_id: str, quant_bits: int | None = None):
    """Load tokenizer + model (eval mode, hidden-state capture enabled).

    `model_id` is a hub name or a local directory. Load failures of any
    kind surface as ModelLoadError with the underlying reason.
    """
    from transformers import AutoModel, AutoTokenizer

    try:
        tokenizer = AutoTokenizer.from_pretrained(model_id)
        model = AutoModel.from_pretrained(model_id)
    except Exception as exc:
        raise ModelLoadError(f"cannot load model {model_id!r}: {exc}") from exc
    model.eval()
    if quant_bits is not None:
        quantize_weights(model, quant_bits)
    return tokenizer, model


def truncate_layers(model, k_cut: int) -> None:
    """Physically drop transformer layers above k_cut (keeps 1..k_cut).

    Only encoder stacks exposing `encoder.layer` (BERT-style) are
    supported; the hidden-state tuple then has exactly k_cut + 1 entries.
    """
    encoder = getattr(model, "encoder", None)
    layers = getattr(encoder, "layer", None)
    if layers is None:
        raise ModelLoadError(
            f"prune plan unsupported for {type(model).__name__}: no encoder.layer stack"
        )
    if not (0 < k_cut <= len(layers)):
        raise ValueError(f"k_cut {k_cut} out of range for {len(layers)} layers")
    encoder.layer = layers[:k_cut]
    model.config.num_hidden_layers = k_cut
