"""Loss terms for the teacher-student adaptation.

Four ingredients: a soft-nearest-neighbors contrastive loss aligning target
latents with their retrieved source latents, masked MSE reconstruction on
the target clip and on the mined window (both under target conditioning),
frame-aligned feature distillation over the window, and a total that gates
the two window terms by the window quality score.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import InvalidArgumentError, TrainingDivergenceError

DEFAULT_TAU = 0.07


@dataclass(frozen=True)
class LossWeights:
    rec_target: float = 1.0
    contrastive: float = 1.0
    rec_window: float = 1.0
    distill: float = 1.0

    def __post_init__(self):
        for name in ("rec_target", "contrastive", "rec_window", "distill"):
            v = getattr(self, name)
            if not (v >= 0.0 and v == v):
                raise InvalidArgumentError(f"weight {name}={v} must be finite and >= 0")

    def to_dict(self) -> dict:
        return {
            "rec_target": self.rec_target,
            "contrastive": self.contrastive,
            "rec_window": self.rec_window,
            "distill": self.distill,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        return cls(**d)


@dataclass
class LossBreakdown:
    """Per-term values plus the gated total."""

    contrastive: float
    rec_target: float
    rec_window: float
    distill: float
    dww_value: float
    total: float

    def to_dict(self) -> dict:
        return {
            "contrastive": _as_float(self.contrastive),
            "rec_target": _as_float(self.rec_target),
            "rec_window": _as_float(self.rec_window),
            "distill": _as_float(self.distill),
            "dww_value": _as_float(self.dww_value),
            "total": _as_float(self.total),
        }


def _as_float(v) -> float:
    return float(v.detach()) if torch.is_tensor(v) else float(v)


def _cosine_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    a = a / a.norm(dim=1, keepdim=True).clamp_min(1e-12)
    b = b / b.norm(dim=1, keepdim=True).clamp_min(1e-12)
    return a @ b.t()


def snn_loss(
    z_targets: torch.Tensor,
    z_priors: torch.Tensor,
    positive_sets,
    tau: float = DEFAULT_TAU,
) -> torch.Tensor:
    """Soft-nearest-neighbors loss over a batch of (target, prior) latents.

    Each anchor i contributes -log of the softmax mass its positive priors
    hold against the whole prior batch at temperature tau.  Anchors with an
    empty positive set are skipped and the sum rescaled by batch/contributing
    so magnitudes stay comparable.
    """
    if tau <= 0:
        raise InvalidArgumentError("tau must be positive")
    b = z_targets.shape[0]
    if z_priors.shape[0] != b or len(positive_sets) != b:
        raise InvalidArgumentError("targets, priors and positive sets must align")
    sims = _cosine_matrix(z_targets, z_priors) / tau
    terms = []
    for i, positives in enumerate(positive_sets):
        idx = sorted(positives)
        if not idx:
            continue
        if idx[0] < 0 or idx[-1] >= b:
            raise InvalidArgumentError(f"positive set {i} out of range")
        log_pos = torch.logsumexp(sims[i, idx], dim=0)
        log_all = torch.logsumexp(sims[i], dim=0)
        terms.append(log_all - log_pos)
    if not terms:
        return z_targets.sum() * 0.0
    total = torch.stack(terms).sum()
    if len(terms) < b:
        total = total * (b / len(terms))
    return total


def rec_loss(
    x0: torch.Tensor, x0_hat: torch.Tensor, mask: torch.Tensor | None = None
) -> torch.Tensor:
    """Masked mean squared error over valid frames and channels."""
    if x0.shape != x0_hat.shape:
        raise InvalidArgumentError(
            f"shape mismatch {tuple(x0.shape)} vs {tuple(x0_hat.shape)}"
        )
    diff = (x0 - x0_hat) ** 2
    if mask is None:
        return diff.mean()
    if mask.shape != x0.shape[:-1]:
        raise InvalidArgumentError("mask must cover the frame axes")
    m = mask.float()
    denom = m.sum() * x0.shape[-1]
    if denom == 0:
        raise InvalidArgumentError("mask selects no frames")
    return (diff * m[..., None]).sum() / denom


def distill_loss(
    u_student: torch.Tensor,
    u_teacher: torch.Tensor,
    start: int,
    m: int,
) -> torch.Tensor:
    """Mean over the window of squared feature distance, frame j of the
    student aligned with teacher frame start + j.  The teacher features are
    treated as constants."""
    if m < 1:
        raise InvalidArgumentError("window length must be >= 1")
    if u_student.shape[0] < m:
        raise InvalidArgumentError("student features shorter than window")
    if start < 0 or start + m > u_teacher.shape[0]:
        raise InvalidArgumentError(
            f"window [{start}, {start + m}) exceeds teacher features "
            f"({u_teacher.shape[0]} frames)"
        )
    teacher = u_teacher[start : start + m].detach()
    diff = u_student[:m] - teacher
    return diff.pow(2).sum(dim=-1).mean()


def total_loss(
    contrastive,
    rec_target,
    rec_window,
    distill,
    weights: LossWeights,
    dww_value: float,
) -> LossBreakdown:
    """Gated combination: the window terms count in proportion to dww."""
    parts = {
        "contrastive": contrastive,
        "rec_target": rec_target,
        "rec_window": rec_window,
        "distill": distill,
    }
    for name, value in parts.items():
        v = _as_float(value)
        if v != v or v in (float("inf"), float("-inf")):
            raise TrainingDivergenceError(f"loss term {name} is non-finite ({v})")
    total = (
        weights.rec_target * rec_target
        + weights.contrastive * contrastive
        + dww_value * (weights.rec_window * rec_window + weights.distill * distill)
    )
    return LossBreakdown(
        contrastive=contrastive,
        rec_target=rec_target,
        rec_window=rec_window,
        distill=distill,
        dww_value=dww_value,
        total=total,
    )
