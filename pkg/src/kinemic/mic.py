"""Context encoder, attention-based window mining, and window quality.

A bidirectional GRU with additive attention turns a sequence of frame
tokens into one latent vector plus a per-frame attention trace.  The trace
drives mining: the contiguous window of a given length with the largest
attention mass is extracted from the source sequence and reused as a
pseudo-labeled training clip.  A cosine-based score in [0, 1] between the
target latent and the (detached) window latent gates how much the window
losses count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import (
    EmptySequenceError,
    InvalidArgumentError,
    UndefinedSimilarityError,
)
from .features import FeatureSequence
from .kernels import best_window

DEFAULT_HIDDEN = 128
DEFAULT_LATENT = 128


@dataclass
class AttentionTrace:
    """Non-negative weights over the valid frames, summing to 1."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.shape[0] < 1:
            raise InvalidArgumentError("trace must be a non-empty 1D array")
        if (w < -1e-8).any() or abs(w.sum() - 1.0) > 1e-5:
            raise InvalidArgumentError("weights must be >= 0 and sum to 1")
        self.weights = w

    def __len__(self) -> int:
        return self.weights.shape[0]


@dataclass
class MinedWindow:
    """A contiguous source slice chosen by attention mass."""

    start: int
    length: int
    score: float
    dww: float | None = None

    def __post_init__(self):
        if self.start < 0 or self.length < 1:
            raise InvalidArgumentError("window start/length out of range")
        if not 0.0 <= self.score <= 1.0 + 1e-9:
            raise InvalidArgumentError(f"score {self.score} outside [0, 1]")
        if self.dww is not None and not 0.0 <= self.dww <= 1.0:
            raise InvalidArgumentError(f"dww {self.dww} outside [0, 1]")

    def to_dict(self) -> dict:
        return {
            "start": self.start,
            "length": self.length,
            "score": self.score,
            "dww": self.dww,
        }


class MicEncoder(nn.Module):
    """biGRU + additive attention + linear head producing context latents."""

    def __init__(
        self,
        input_dim: int,
        hidden: int = DEFAULT_HIDDEN,
        latent_dim: int = DEFAULT_LATENT,
    ):
        super().__init__()
        self.gru = nn.GRU(input_dim, hidden, batch_first=True, bidirectional=True)
        self.attn_proj = nn.Linear(2 * hidden, 2 * hidden)
        self.attn_score = nn.Linear(2 * hidden, 1, bias=False)
        self.out = nn.Linear(2 * hidden, latent_dim)

    def attention_weights(self, states: torch.Tensor, mask: torch.Tensor):
        """Masked additive-attention softmax over per-frame states."""
        scores = self.attn_score(torch.tanh(self.attn_proj(states))).squeeze(-1)
        scores = scores.masked_fill(~mask, float("-inf"))
        return torch.softmax(scores, dim=-1)

    def forward(self, tokens: torch.Tensor, mask: torch.Tensor):
        """tokens (B, n, h), mask (B, n) prefix-form -> latents (B, z), weights (B, n)."""
        if tokens.ndim != 3 or mask.shape != tokens.shape[:2]:
            raise InvalidArgumentError("tokens must be (B, n, h) with (B, n) mask")
        lengths = mask.sum(dim=1)
        if (lengths == 0).any():
            raise EmptySequenceError("a sequence in the batch has no valid frames")
        n = tokens.shape[1]
        expect = torch.arange(n, device=mask.device)[None] < lengths[:, None]
        if not torch.equal(expect, mask):
            raise InvalidArgumentError("mask must be prefix-form (valid frames first)")
        packed = nn.utils.rnn.pack_padded_sequence(
            tokens, lengths.cpu(), batch_first=True, enforce_sorted=False
        )
        states, _ = self.gru(packed)
        states, _ = nn.utils.rnn.pad_packed_sequence(
            states, batch_first=True, total_length=n
        )
        weights = self.attention_weights(states, mask)
        latents = self.out(torch.einsum("bn,bnh->bh", weights, states))
        return latents, weights


def encode_latent(mic: MicEncoder, frame_tokens: torch.Tensor, mask=None):
    """One sequence -> (latent tensor, AttentionTrace over its valid frames)."""
    if frame_tokens.ndim != 2:
        raise InvalidArgumentError("frame_tokens must be (n, h)")
    n = frame_tokens.shape[0]
    if mask is None:
        mask = torch.ones(n, dtype=torch.bool)
    latents, weights = mic(frame_tokens[None], mask[None])
    valid = int(mask.sum())
    trace = AttentionTrace(weights[0, :valid].detach().numpy().astype(np.float64))
    return latents[0], trace


def mine_window(trace: AttentionTrace, m: int) -> MinedWindow:
    """Leftmost length-m window with maximal attention mass (clamped to the
    whole sequence when m >= n)."""
    if m < 1:
        raise InvalidArgumentError("window length must be >= 1")
    n = len(trace)
    if n == 0:
        raise InvalidArgumentError("empty attention trace")
    if m >= n:
        return MinedWindow(start=0, length=n, score=1.0)
    start, score = best_window(trace.weights, m)
    return MinedWindow(start=start, length=m, score=float(np.clip(score, 0.0, 1.0)))


def extract_window(x_p: FeatureSequence, window: MinedWindow) -> FeatureSequence:
    """Contiguous frame slice carrying provenance of where it came from."""
    n = x_p.n_frames
    if window.start + window.length > n:
        raise InvalidArgumentError(
            f"window [{window.start}, {window.start + window.length}) "
            f"exceeds sequence length {n}"
        )
    provenance = dict(x_p.provenance)
    provenance.update(
        {"window_source": x_p.provenance.get("source_id"), "window_start": window.start}
    )
    return FeatureSequence(
        data=x_p.data[window.start : window.start + window.length].copy(),
        layout=x_p.layout,
        fps=x_p.fps,
        topology=x_p.topology,
        provenance=provenance,
    )


def dww(z_target, z_window) -> float:
    """Window quality in [0, 1]: (1 + cosine) / 2 of the two latents.

    The window latent must come in detached; the score is a plain float so
    no gradient ever reaches the mining encoder through it.
    """
    a = np.asarray(
        z_target.detach().numpy() if torch.is_tensor(z_target) else z_target,
        dtype=np.float64,
    )
    b = np.asarray(
        z_window.detach().numpy() if torch.is_tensor(z_window) else z_window,
        dtype=np.float64,
    )
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise UndefinedSimilarityError("window quality with a zero-norm latent")
    cos = float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))
    return (1.0 + cos) / 2.0
