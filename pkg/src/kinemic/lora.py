"""Low-rank adapters over the student's transformer linears.

Adapters wrap the attention projections and both feed-forward maps of every
block.  The up-projection starts at zero, so a freshly adapted student is an
exact functional copy of its base weights; only the adapter factors, the
action embedding and the mining encoder ever receive gradients.
"""

from __future__ import annotations

import warnings

import torch
from torch import nn

from .denoiser import DenoiserModel

DEFAULT_RANK = 16
DEFAULT_ALPHA = 32.0
DEFAULT_DROPOUT = 0.1

ADAPTED_ATTRS = ("q", "k", "v", "o", "ff1", "ff2")


class LoraLinear(nn.Module):
    """y = base(x) + (alpha / rank) * B A dropout(x), with B zero-initialized."""

    def __init__(
        self,
        base: nn.Linear,
        rank: int = DEFAULT_RANK,
        alpha: float = DEFAULT_ALPHA,
        dropout: float = DEFAULT_DROPOUT,
        target: str = "",
    ):
        super().__init__()
        d_out, d_in = base.weight.shape
        if rank >= min(d_in, d_out):
            warnings.warn(
                f"rank {rank} >= min({d_in}, {d_out}); adapter is not low-rank",
                stacklevel=2,
            )
        self.base = base
        for p in self.base.parameters():
            p.requires_grad_(False)
        self.rank = rank
        self.alpha = alpha
        self.scaling = alpha / rank
        self.target = target
        self.lora_a = nn.Parameter(torch.randn(rank, d_in) * 0.02)
        self.lora_b = nn.Parameter(torch.zeros(d_out, rank))
        self.lora_dropout = nn.Dropout(dropout)
        self.enabled = True

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = nn.functional.linear(x, self.base.weight, self.base.bias)
        if self.enabled:
            delta = self.lora_dropout(x) @ self.lora_a.t() @ self.lora_b.t()
            y = y + self.scaling * delta
        return y

    def delta_matrix(self) -> torch.Tensor:
        """Dense equivalent of the adapter update (for rank checks)."""
        return self.scaling * (self.lora_b @ self.lora_a)


def inject_adapters(
    model: DenoiserModel,
    rank: int = DEFAULT_RANK,
    alpha: float = DEFAULT_ALPHA,
    dropout: float = DEFAULT_DROPOUT,
) -> int:
    """Wrap every block linear with an adapter; returns adapter count."""
    count = 0
    for b, blk in enumerate(model.blocks):
        for attr in ADAPTED_ATTRS:
            base = getattr(blk, attr)
            if isinstance(base, LoraLinear):
                raise ValueError(f"block {b} {attr} already adapted")
            setattr(
                blk, attr,
                LoraLinear(base, rank, alpha, dropout, target=f"blocks.{b}.{attr}"),
            )
            count += 1
    return count


def set_adapters_enabled(model: DenoiserModel, enabled: bool) -> None:
    for mod in model.modules():
        if isinstance(mod, LoraLinear):
            mod.enabled = enabled


def adapter_parameters(model: DenoiserModel) -> dict[str, nn.Parameter]:
    return {
        name: p
        for name, p in model.named_parameters()
        if name.endswith(("lora_a", "lora_b"))
    }


def freeze_for_adaptation(student: DenoiserModel) -> None:
    """Freeze everything except adapters and the action embedding."""
    for name, p in student.named_parameters():
        p.requires_grad_(
            name.endswith(("lora_a", "lora_b")) or name.startswith("action_table")
        )


def trainable_parameters(
    model: DenoiserModel, mic: nn.Module | None = None
) -> dict[str, nn.Parameter]:
    """Exactly the parameters fine-tuning may update: adapter factors, the
    action embedding table, and (when given) the mining encoder."""
    out = {}
    for name, p in model.named_parameters():
        if name.endswith(("lora_a", "lora_b")) or name.startswith("action_table"):
            out[name] = p
    if mic is not None:
        for name, p in mic.named_parameters():
            out[f"mic.{name}"] = p
    return out
