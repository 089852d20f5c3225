"""Small spatio-temporal graph classifier over joint positions.

Stand-in for the usual skeleton-action evaluators at desk scale: two
graph-convolution + temporal-convolution blocks over the joint tree, global
pooling, linear head.  Sequences are reconstructed to positions, root-
centered per frame, and linearly resampled to a fixed frame count.  The
pooled penultimate features double as the embedding space for the
distribution metrics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .datasets import LabeledSample
from .errors import InvalidDatasetError
from .features import from_features
from .motion import SkeletonTopology


@dataclass(frozen=True)
class ClassifierConfig:
    hidden: int = 32
    feature_dim: int = 64
    temporal_kernel: int = 5
    target_frames: int = 48
    epochs: int = 60
    min_steps: int = 400  # small train sets get extra epochs up to this
    batch_size: int = 32
    lr: float = 5e-3
    weight_decay: float = 1e-4

    def to_dict(self) -> dict:
        return {
            "hidden": self.hidden,
            "feature_dim": self.feature_dim,
            "temporal_kernel": self.temporal_kernel,
            "target_frames": self.target_frames,
            "epochs": self.epochs,
            "min_steps": self.min_steps,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "weight_decay": self.weight_decay,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierConfig":
        return cls(**d)


def normalized_adjacency(topology: SkeletonTopology) -> torch.Tensor:
    j = topology.joint_count
    a = torch.eye(j)
    for child in range(1, j):
        parent = int(topology.parent_index[child])
        a[child, parent] = a[parent, child] = 1.0
    deg = a.sum(dim=1)
    d_inv_sqrt = torch.diag(deg.pow(-0.5))
    return d_inv_sqrt @ a @ d_inv_sqrt


def sample_to_positions(sample: LabeledSample, target_frames: int) -> np.ndarray:
    """(target_frames, J, 3) root-centered positions at a fixed length."""
    seq = from_features(sample.motion)
    pos = seq.frames.copy()
    center = pos[:, 0].copy()
    center[:, 1] = 0.0  # keep height information
    pos = pos - center[:, None, :]
    n = pos.shape[0]
    src = np.arange(n)
    dst = np.linspace(0.0, n - 1.0, target_frames)
    flat = pos.reshape(n, -1)
    out = np.stack([np.interp(dst, src, flat[:, c]) for c in range(flat.shape[1])], axis=1)
    return out.reshape(target_frames, pos.shape[1], 3)


class _Block(nn.Module):
    def __init__(self, c_in, c_out, kernel, stride):
        super().__init__()
        self.spatial = nn.Linear(c_in, c_out)
        pad = kernel // 2
        self.temporal = nn.Conv2d(
            c_out, c_out, (kernel, 1), stride=(stride, 1), padding=(pad, 0)
        )

    def forward(self, x, adj):
        # x: (B, T, J, C)
        x = torch.einsum("ij,btjc->btic", adj, x)
        x = torch.relu(self.spatial(x))
        x = x.permute(0, 3, 1, 2)  # (B, C, T, J)
        x = torch.relu(self.temporal(x))
        return x.permute(0, 2, 3, 1)


class MotionClassifier(nn.Module):
    def __init__(self, topology: SkeletonTopology, classes: list[str],
                 cfg: ClassifierConfig):
        super().__init__()
        self.cfg = cfg
        self.classes = list(classes)
        self.register_buffer("adj", normalized_adjacency(topology))
        self.block1 = _Block(3, cfg.hidden, cfg.temporal_kernel, 1)
        self.block2 = _Block(cfg.hidden, cfg.feature_dim, cfg.temporal_kernel, 2)
        self.head = nn.Linear(cfg.feature_dim, len(classes))

    def penultimate(self, x: torch.Tensor) -> torch.Tensor:
        # x: (B, T, J, 3)
        x = self.block1(x, self.adj)
        x = self.block2(x, self.adj)
        return x.mean(dim=(1, 2))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.penultimate(x))


def _as_batch(samples: list[LabeledSample], classes: list[str],
              target_frames: int):
    label_ids = {c: i for i, c in enumerate(classes)}
    xs = np.stack([sample_to_positions(s, target_frames) for s in samples])
    ys = np.array([label_ids[s.label] for s in samples], dtype=np.int64)
    return torch.from_numpy(xs.astype(np.float32)), torch.from_numpy(ys)


def train_classifier(
    train_set: list[LabeledSample],
    cfg: ClassifierConfig,
    seed: int,
    test_set: list[LabeledSample],
    classes: list[str] | None = None,
) -> tuple[MotionClassifier, float]:
    """Fit on train_set, return (classifier, top-1 accuracy on test_set)."""
    if classes is None:
        classes = sorted({s.label for s in test_set})
    present = {s.label for s in train_set}
    missing = set(classes) - present
    if missing:
        raise InvalidDatasetError(f"classes missing from train set: {sorted(missing)}")
    topology = train_set[0].motion.topology
    if topology is None:
        raise InvalidDatasetError("samples lack skeleton topology")

    torch.manual_seed(seed)
    model = MotionClassifier(topology, classes, cfg)
    x_train, y_train = _as_batch(train_set, classes, cfg.target_frames)
    x_test, y_test = _as_batch(test_set, classes, cfg.target_frames)

    opt = torch.optim.AdamW(
        model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay
    )
    rng = np.random.default_rng(seed)
    n = len(train_set)
    steps_per_epoch = max(1, -(-n // cfg.batch_size))
    epochs = max(cfg.epochs, -(-cfg.min_steps // steps_per_epoch))
    model.train()
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            logits = model(x_train[idx])
            loss = nn.functional.cross_entropy(logits, y_train[idx])
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
    model.eval()
    with torch.no_grad():
        pred = model(x_test).argmax(dim=1)
        accuracy = float((pred == y_test).float().mean())
    return model, accuracy


@torch.no_grad()
def embed_samples(
    model: MotionClassifier, samples: list[LabeledSample]
) -> np.ndarray:
    """Penultimate-layer features, (N, feature_dim)."""
    model.eval()
    xs = np.stack(
        [sample_to_positions(s, model.cfg.target_frames) for s in samples]
    )
    feats = model.penultimate(torch.from_numpy(xs.astype(np.float32)))
    return feats.numpy().astype(np.float64)
