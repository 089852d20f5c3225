"""Transformer denoiser with dual conditioning streams.

The model predicts the clean feature sequence from its noised version.  A
single conditioning token — the sum of timestep, text and (for the student)
action embeddings — is prepended to the projected frame tokens; frames get
sinusoidal position encodings.  The teacher carries no action table; a
student is built by copying teacher weights and attaching a fresh action
embedding, so with the action modality dropped both produce identical
outputs until fine-tuning moves the adapters.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import (
    InvalidArgumentError,
    UnsupportedConditioningError,
)
from .features import FeatureSequence, layout_for_dim
from .schedule import NoiseSchedule, posterior_step


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int
    width: int = 128
    heads: int = 4
    blocks: int = 8
    ffn_mult: int = 4
    max_len: int = 196
    text_dim: int = 512
    action_count: int | None = None
    dropout: float = 0.0
    zero_init_output: bool = False

    def to_dict(self) -> dict:
        return {
            "feature_dim": self.feature_dim,
            "width": self.width,
            "heads": self.heads,
            "blocks": self.blocks,
            "ffn_mult": self.ffn_mult,
            "max_len": self.max_len,
            "text_dim": self.text_dim,
            "action_count": self.action_count,
            "dropout": self.dropout,
            "zero_init_output": self.zero_init_output,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ConditioningSignal:
    """What the denoiser is told about the sequence it should recover."""

    timestep: int
    text_embedding: np.ndarray | None = None
    action_id: int | None = None

    def drop(self, text: bool = False, action: bool = False) -> "ConditioningSignal":
        return ConditioningSignal(
            timestep=self.timestep,
            text_embedding=None if text else self.text_embedding,
            action_id=None if action else self.action_id,
        )


@dataclass
class DenoiserOutput:
    """x0_hat plus the per-frame features other components consume.

    ``frame_tokens`` feed the mining encoder and ``pre_projection`` is the
    distillation target; in this architecture both are the post-norm hidden
    states right before the output projection (one tensor, two roles).
    """

    x0_hat: torch.Tensor
    frame_tokens: torch.Tensor
    pre_projection: torch.Tensor


def sinusoidal_embedding(positions: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float32) / max(half - 1, 1)
    )
    args = positions.float()[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros(len(positions), 1)], dim=1)
    return emb


class EncoderBlock(nn.Module):
    """Pre-norm transformer block with individually addressable linears."""

    def __init__(self, width: int, heads: int, ffn_mult: int, dropout: float):
        super().__init__()
        if width % heads:
            raise InvalidArgumentError("width must be divisible by heads")
        self.heads = heads
        self.norm1 = nn.LayerNorm(width)
        self.q = nn.Linear(width, width)
        self.k = nn.Linear(width, width)
        self.v = nn.Linear(width, width)
        self.o = nn.Linear(width, width)
        self.norm2 = nn.LayerNorm(width)
        self.ff1 = nn.Linear(width, ffn_mult * width)
        self.ff2 = nn.Linear(ffn_mult * width, width)
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        b, n, w = x.shape
        h = self.heads
        y = self.norm1(x)
        q = self.q(y).view(b, n, h, w // h).transpose(1, 2)
        k = self.k(y).view(b, n, h, w // h).transpose(1, 2)
        v = self.v(y).view(b, n, h, w // h).transpose(1, 2)
        attn_mask = pad_mask[:, None, None, :]  # True = attend
        a = nn.functional.scaled_dot_product_attention(q, k, v, attn_mask=attn_mask)
        x = x + self.drop(self.o(a.transpose(1, 2).reshape(b, n, w)))
        x = x + self.drop(self.ff2(nn.functional.gelu(self.ff1(self.norm2(x)))))
        return x


class DenoiserModel(nn.Module):
    """Clean-sequence predictor over noised motion features."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        w = config.width
        self.proj_in = nn.Linear(config.feature_dim, w)
        self.blocks = nn.ModuleList(
            [
                EncoderBlock(w, config.heads, config.ffn_mult, config.dropout)
                for _ in range(config.blocks)
            ]
        )
        self.final_norm = nn.LayerNorm(w)
        self.proj_out = nn.Linear(w, config.feature_dim)
        if config.zero_init_output:
            nn.init.zeros_(self.proj_out.weight)
            nn.init.zeros_(self.proj_out.bias)
        self.time_lin1 = nn.Linear(w, w)
        self.time_lin2 = nn.Linear(w, w)
        self.text_proj = nn.Linear(config.text_dim, w)
        if config.action_count is not None:
            self.action_table = nn.Embedding(config.action_count, w)
            nn.init.normal_(self.action_table.weight, std=0.02)
        else:
            self.action_table = None
        pos = sinusoidal_embedding(torch.arange(config.max_len), w)
        self.register_buffer("pos_table", pos, persistent=False)

    @property
    def has_action_conditioning(self) -> bool:
        return self.action_table is not None

    def timestep_embedding(self, timesteps: torch.Tensor) -> torch.Tensor:
        emb = sinusoidal_embedding(timesteps, self.config.width)
        return self.time_lin2(torch.nn.functional.silu(self.time_lin1(emb)))

    def conditioning_token(
        self,
        timesteps: torch.Tensor,          # (B,) long
        text_emb: torch.Tensor | None,    # (B, text_dim) rows may be unused
        text_present: torch.Tensor,       # (B,) bool
        action_ids: torch.Tensor,         # (B,) long, -1 = absent
    ) -> torch.Tensor:
        """Additive fusion: timestep + text (if present) + action (if present)."""
        tok = self.timestep_embedding(timesteps)
        if text_emb is not None:
            proj = self.text_proj(text_emb.float())
            tok = tok + proj * text_present[:, None].float()
        if (action_ids >= 0).any():
            if self.action_table is None:
                raise UnsupportedConditioningError(
                    "action conditioning on a model without an action table"
                )
            act = self.action_table(action_ids.clamp(min=0))
            tok = tok + act * (action_ids >= 0)[:, None].float()
        return tok

    def forward(
        self,
        x_t: torch.Tensor,               # (B, n, d)
        timesteps: torch.Tensor,         # (B,)
        text_emb: torch.Tensor | None,
        text_present: torch.Tensor,
        action_ids: torch.Tensor,
        frame_mask: torch.Tensor,        # (B, n) bool, True = valid
    ) -> DenoiserOutput:
        b, n, d = x_t.shape
        if d != self.config.feature_dim:
            raise InvalidArgumentError(
                f"feature dim {d} != model dim {self.config.feature_dim}"
            )
        if n > self.config.max_len:
            raise InvalidArgumentError(f"length {n} exceeds max {self.config.max_len}")
        cond = self.conditioning_token(timesteps, text_emb, text_present, action_ids)
        tokens = self.proj_in(x_t) + self.pos_table[:n][None]
        tokens = torch.cat([cond[:, None, :], tokens], dim=1)
        pad = torch.cat(
            [torch.ones(b, 1, dtype=torch.bool, device=x_t.device), frame_mask], dim=1
        )
        for blk in self.blocks:
            tokens = blk(tokens, pad)
        hidden = self.final_norm(tokens[:, 1:])
        hidden = hidden * frame_mask[:, :, None]
        x0_hat = self.proj_out(hidden) * frame_mask[:, :, None]
        return DenoiserOutput(x0_hat=x0_hat, frame_tokens=hidden, pre_projection=hidden)


def student_from_teacher(teacher: DenoiserModel, action_count: int) -> DenoiserModel:
    """Copy of the teacher with a fresh action embedding attached."""
    cfg = ModelConfig(
        **{**teacher.config.to_dict(), "action_count": action_count}
    )
    student = DenoiserModel(cfg)
    missing = student.load_state_dict(teacher.state_dict(), strict=False)
    unexpected = [k for k in missing.missing_keys if not k.startswith("action_table")]
    if unexpected or missing.unexpected_keys:
        raise InvalidArgumentError(
            f"teacher/student weight mismatch: {unexpected}, {missing.unexpected_keys}"
        )
    return student


def _encode_cond(model, cond: ConditioningSignal, device):
    text = cond.text_embedding
    text_emb = None
    text_present = torch.zeros(1, dtype=torch.bool)
    if text is not None:
        vec = np.asarray(getattr(text, "vector", text), dtype=np.float32)
        text_emb = torch.from_numpy(vec)[None]
        text_present = torch.ones(1, dtype=torch.bool)
    action = torch.full((1,), -1 if cond.action_id is None else cond.action_id,
                        dtype=torch.long)
    if cond.action_id is not None and not model.has_action_conditioning:
        raise UnsupportedConditioningError(
            "action conditioning on a model without an action table"
        )
    return text_emb, text_present, action


def denoise(
    model: DenoiserModel,
    x_t: torch.Tensor,
    cond: ConditioningSignal,
    mask: torch.Tensor | None = None,
) -> DenoiserOutput:
    """Single-sequence denoising pass; ``mask`` marks valid frames."""
    if x_t.ndim != 2:
        raise InvalidArgumentError("x_t must be (n, d)")
    n = x_t.shape[0]
    if mask is None:
        mask = torch.ones(n, dtype=torch.bool)
    text_emb, text_present, action = _encode_cond(model, cond, x_t.device)
    t = torch.tensor([cond.timestep], dtype=torch.long)
    out = model(x_t[None], t, text_emb, text_present, action, mask[None])
    return DenoiserOutput(
        x0_hat=out.x0_hat[0], frame_tokens=out.frame_tokens[0],
        pre_projection=out.pre_projection[0],
    )


def apply_cfg(x0_cond: torch.Tensor, x0_uncond: torch.Tensor, scale: float):
    """Guided prediction: uncond + scale * (cond - uncond)."""
    if x0_cond.shape != x0_uncond.shape:
        raise InvalidArgumentError("guidance branch shapes differ")
    return x0_uncond + scale * (x0_cond - x0_uncond)


def drop_conditions(
    cond: ConditioningSignal,
    p_text: float,
    p_action: float,
    rng: torch.Generator,
) -> ConditioningSignal:
    """Independently null each modality; draws text first, then action."""
    if not (0.0 <= p_text <= 1.0 and 0.0 <= p_action <= 1.0):
        raise InvalidArgumentError("drop probabilities must be in [0, 1]")
    draws = torch.rand(2, generator=rng)
    return cond.drop(
        text=bool(draws[0] < p_text), action=bool(draws[1] < p_action)
    )


def _batch_conditioning(model, conds: list[ConditioningSignal]):
    b = len(conds)
    text_dim = model.config.text_dim
    text_emb = torch.zeros(b, text_dim)
    text_present = torch.zeros(b, dtype=torch.bool)
    action_ids = torch.full((b,), -1, dtype=torch.long)
    for i, c in enumerate(conds):
        if c.text_embedding is not None:
            vec = np.asarray(
                getattr(c.text_embedding, "vector", c.text_embedding), dtype=np.float32
            )
            text_emb[i] = torch.from_numpy(vec)
            text_present[i] = True
        if c.action_id is not None:
            if not model.has_action_conditioning:
                raise UnsupportedConditioningError(
                    "action conditioning on a model without an action table"
                )
            action_ids[i] = c.action_id
    return text_emb, text_present, action_ids


@torch.no_grad()
def sample_batch(
    model: DenoiserModel,
    conds: list[ConditioningSignal],
    lengths: list[int],
    schedule: NoiseSchedule,
    seeds: list[int],
    guidance_scale: float = 2.5,
    cfg_drop: str = "both",
) -> list[torch.Tensor]:
    """Ancestral sampling for a batch of independently seeded sequences.

    Each sequence draws its noise from its own generator, so the result for
    a given (cond, length, seed) does not depend on what else is in the
    batch composition-wise; the guided and unconditional branches run as one
    doubled forward pass.
    """
    if not (len(conds) == len(lengths) == len(seeds)):
        raise InvalidArgumentError("conds, lengths and seeds must align")
    if cfg_drop not in ("both", "text", "action"):
        raise InvalidArgumentError(f"unknown cfg_drop {cfg_drop!r}")
    if any(n < 2 for n in lengths):
        raise InvalidArgumentError("length must be >= 2")
    model.eval()
    b = len(conds)
    d = model.config.feature_dim
    n_max = max(lengths)
    gens = [torch.Generator().manual_seed(s) for s in seeds]
    x = torch.zeros(b, n_max, d)
    mask = torch.zeros(b, n_max, dtype=torch.bool)
    for i, (n, g) in enumerate(zip(lengths, gens)):
        x[i, :n] = torch.randn(n, d, generator=g)
        mask[i, :n] = True
    unconds = [
        c.drop(text=cfg_drop in ("both", "text"), action=cfg_drop in ("both", "action"))
        for c in conds
    ]
    use_cfg = guidance_scale != 1.0
    branch = conds + unconds if use_cfg else conds
    text_emb, text_present, action_ids = _batch_conditioning(model, branch)
    for t in range(schedule.T, 0, -1):
        timesteps = torch.full((len(branch),), t, dtype=torch.long)
        x_in = torch.cat([x, x], dim=0) if use_cfg else x
        m_in = torch.cat([mask, mask], dim=0) if use_cfg else mask
        out = model(x_in, timesteps, text_emb, text_present, action_ids, m_in)
        if use_cfg:
            x0_hat = apply_cfg(out.x0_hat[:b], out.x0_hat[b:], guidance_scale)
        else:
            x0_hat = out.x0_hat
        if t > 1:
            noise = torch.zeros(b, n_max, d)
            for i, (n, g) in enumerate(zip(lengths, gens)):
                noise[i, :n] = torch.randn(n, d, generator=g)
        else:
            noise = None
        x = posterior_step(x, x0_hat, t, schedule, noise)
        x = x * mask[:, :, None]
    return [x[i, :n].clone() for i, n in enumerate(lengths)]


@torch.no_grad()
def sample(
    model: DenoiserModel,
    cond: ConditioningSignal,
    length: int,
    schedule: NoiseSchedule,
    seed: int,
    guidance_scale: float = 2.5,
    cfg_drop: str = "both",
    stats=None,
    fps: float | None = None,
    topology=None,
) -> FeatureSequence:
    """Ancestral sampling from pure noise, deterministic per seed.

    ``cfg_drop`` picks which modalities the unconditional branch drops
    (``both``, ``text`` or ``action``).  If feature statistics are given the
    output is mapped back to raw feature units.
    """
    out = sample_batch(
        model, [cond], [length], schedule, [seed], guidance_scale, cfg_drop
    )[0]
    arr = out.numpy().astype(np.float64)
    if stats is not None:
        arr = stats.denormalize(arr)
    return FeatureSequence(
        data=arr, layout=layout_for_dim(model.config.feature_dim), fps=fps,
        topology=topology,
    )
