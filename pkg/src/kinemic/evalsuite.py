"""Synthetic-data generation and the downstream evaluation harness.

Covers: class-conditional dataset generation from a trained generator
checkpoint, classifier-based accuracy with seed repetition (median reported
for comparisons, mean/std for analysis), distribution spread metrics in the
classifier's penultimate feature space, the incremental-real-data
scalability experiment, and a mining-quality probe that scores mined
windows against the toy corpus's known window placements.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from .checkpoints import LoadedCheckpoint
from .classifier import ClassifierConfig, embed_samples, train_classifier
from .datasets import LabeledSample
from .denoiser import ConditioningSignal, sample_batch
from .errors import InvalidArgumentError, InvalidDatasetError
from .features import FeatureSequence, layout_for_dim
from .mic import MicEncoder, mine_window, AttentionTrace
from .textspace import label_to_prompt

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalProtocol:
    real_count: int = 30
    synthetic_count: int = 1152
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    diversity_subset: int = 100
    multimodality_pairs: int = 10
    generation_batch: int = 64
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)

    def to_dict(self) -> dict:
        return {
            "real_count": self.real_count,
            "synthetic_count": self.synthetic_count,
            "seeds": list(self.seeds),
            "diversity_subset": self.diversity_subset,
            "multimodality_pairs": self.multimodality_pairs,
            "generation_batch": self.generation_batch,
            "classifier": self.classifier.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalProtocol":
        d = dict(d)
        if "seeds" in d:
            d["seeds"] = tuple(d["seeds"])
        if "classifier" in d:
            d["classifier"] = ClassifierConfig.from_dict(d["classifier"])
        return cls(**d)


@dataclass
class EvalReport:
    mode: str
    per_seed_accuracy: list[float]
    median_accuracy: float
    mean_accuracy: float
    std_accuracy: float
    diversity: float | None = None
    multimodality: float | None = None

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "per_seed_accuracy": self.per_seed_accuracy,
            "median_accuracy": self.median_accuracy,
            "mean_accuracy": self.mean_accuracy,
            "std_accuracy": self.std_accuracy,
            "diversity": self.diversity,
            "multimodality": self.multimodality,
        }


def summarize_accuracies(mode: str, accuracies: list[float]) -> EvalReport:
    arr = np.asarray(accuracies, dtype=np.float64)
    return EvalReport(
        mode=mode,
        per_seed_accuracy=[float(a) for a in arr],
        median_accuracy=float(np.median(arr)),
        mean_accuracy=float(arr.mean()),
        std_accuracy=float(arr.std()),
    )


def empirical_length_sampler(support: list[LabeledSample]):
    """Draw generation lengths from the support set's length distribution."""
    lengths = np.array([s.motion.n_frames for s in support], dtype=np.int64)

    def sampler(rng: np.random.Generator) -> int:
        return int(lengths[int(rng.integers(len(lengths)))])

    return sampler


def generate_dataset(
    checkpoint: LoadedCheckpoint,
    labels: list[str],
    per_class_count: int,
    length_sampler,
    seed: int,
    encoder,
    guidance_scale: float = 2.5,
    batch_size: int = 64,
) -> list[LabeledSample]:
    """Class-conditional samples, uniform per class, deterministic per seed.

    Conditioning follows the checkpoint: label-conditioned generators get
    the action id plus the templated prompt text; text-only generators get
    just the prompt.
    """
    if per_class_count < 0:
        raise InvalidArgumentError("per_class_count must be >= 0")
    if per_class_count == 0:
        return []
    default_conditioning = "text" if checkpoint.kind == "teacher" else "action_text"
    conditioning = checkpoint.extra.get("conditioning", default_conditioning)
    ck_labels = checkpoint.labels
    if conditioning == "action_text":
        if ck_labels is None:
            raise InvalidArgumentError("checkpoint carries no label set")
        for label in labels:
            if label not in ck_labels:
                raise InvalidArgumentError(
                    f"label {label!r} unknown to checkpoint (has {ck_labels})"
                )
    rng = np.random.default_rng(seed)
    topology = checkpoint.topology()
    fps = checkpoint.fps

    jobs = []
    for label in labels:
        prompt_vec = encoder.encode(label_to_prompt(label)).vector
        action_id = ck_labels.index(label) if conditioning == "action_text" else None
        for i in range(per_class_count):
            length = int(length_sampler(rng))
            jobs.append(
                (
                    label,
                    ConditioningSignal(
                        timestep=0, text_embedding=prompt_vec, action_id=action_id
                    ),
                    length,
                )
            )
    out: list[LabeledSample] = []
    layout = layout_for_dim(checkpoint.model.config.feature_dim)
    for lo in range(0, len(jobs), batch_size):
        chunk = jobs[lo : lo + batch_size]
        seeds = [seed + 1000 + lo + i for i in range(len(chunk))]
        tensors = sample_batch(
            checkpoint.model,
            [c for _, c, _ in chunk],
            [n for _, _, n in chunk],
            checkpoint.schedule,
            seeds,
            guidance_scale=guidance_scale,
        )
        for (label, _, _), arr in zip(chunk, tensors):
            data = checkpoint.stats.denormalize(arr.numpy().astype(np.float64))
            idx = len(out)
            feat = FeatureSequence(
                data=data, layout=layout, fps=fps, topology=topology,
                provenance={"generated": True, "seed": seed, "index": idx},
            )
            out.append(
                LabeledSample(motion=feat, label=label, sample_id=f"gen-{idx:05d}")
            )
    return out


def diversity(features: np.ndarray, subset: int, rng: np.random.Generator) -> float:
    """Mean distance over ``subset`` random disjoint feature pairs."""
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if subset < 1:
        raise InvalidArgumentError("subset size must be >= 1")
    if n < 2 * subset:
        raise InvalidArgumentError(
            f"need at least {2 * subset} samples for {subset} disjoint pairs"
        )
    perm = rng.permutation(n)
    a = features[perm[:subset]]
    b = features[perm[subset : 2 * subset]]
    return float(np.linalg.norm(a - b, axis=1).mean())


def effective_diversity_subset(n_samples: int, requested: int = 100) -> int:
    return requested if n_samples >= 2 * requested else n_samples // 2


def multimodality(
    features_by_condition: dict[str, np.ndarray],
    pairs_per_condition: int,
    rng: np.random.Generator,
) -> float:
    """Mean within-condition pair distance, averaged over conditions."""
    if pairs_per_condition < 1:
        raise InvalidArgumentError("pairs_per_condition must be >= 1")
    means = []
    for cond in sorted(features_by_condition):
        feats = np.asarray(features_by_condition[cond], dtype=np.float64)
        if feats.shape[0] < 2:
            logger.warning("condition %r has < 2 samples; skipped", cond)
            continue
        dists = []
        for _ in range(pairs_per_condition):
            i, j = rng.choice(feats.shape[0], size=2, replace=False)
            dists.append(float(np.linalg.norm(feats[i] - feats[j])))
        means.append(float(np.mean(dists)))
    if not means:
        raise InvalidArgumentError("no condition has at least 2 samples")
    return float(np.mean(means))


def evaluate_augmentation(
    mode: str,
    real: list[LabeledSample],
    synthetic: list[LabeledSample],
    test: list[LabeledSample],
    protocol: EvalProtocol,
    classes: list[str],
    evaluator=None,
    metrics_rng_seed: int = 0,
) -> EvalReport:
    """Accuracy over protocol seeds on real+synthetic, plus spread metrics
    of the synthetic set in the evaluator's feature space."""
    train_set = list(real) + list(synthetic)
    accs = []
    for s in protocol.seeds:
        _, acc = train_classifier(
            train_set, protocol.classifier, s, test, classes
        )
        accs.append(acc)
    report = summarize_accuracies(mode, accs)
    if synthetic and evaluator is not None:
        feats = embed_samples(evaluator, synthetic)
        rng = np.random.default_rng(metrics_rng_seed)
        subset = effective_diversity_subset(len(synthetic), protocol.diversity_subset)
        report.diversity = diversity(feats, subset, rng)
        by_cond = {}
        for samp, f in zip(synthetic, feats):
            by_cond.setdefault(samp.label, []).append(f)
        report.multimodality = multimodality(
            {c: np.stack(v) for c, v in by_cond.items()},
            protocol.multimodality_pairs,
            rng,
        )
    return report


def scalability_curve(
    real_counts: list[int],
    support_pool: list[LabeledSample],
    synthetic: list[LabeledSample],
    test: list[LabeledSample],
    protocol: EvalProtocol,
    classes: list[str],
    classifier_fn=train_classifier,
) -> list[dict]:
    """Accuracy vs. number of real samples, with and without augmentation.

    ``real_counts`` are total real-sample counts (balanced per class, so each
    must divide by the class count).  Rows come back sorted by count with
    one entry per (count, augmented) condition.
    """
    if sorted(real_counts) != list(real_counts):
        raise InvalidArgumentError("real_counts must be ascending")
    by_class: dict[str, list[LabeledSample]] = {}
    for s in support_pool:
        by_class.setdefault(s.label, []).append(s)
    rows = []
    for count in real_counts:
        if count % len(classes):
            raise InvalidArgumentError(
                f"count {count} not divisible by {len(classes)} classes"
            )
        per_class = count // len(classes)
        if any(len(by_class.get(c, [])) < per_class for c in classes):
            raise InvalidArgumentError(
                f"count {count} exceeds available real data"
            )
        subset = [s for c in classes for s in by_class[c][:per_class]]
        for augmented in (False, True):
            train_set = subset + (list(synthetic) if augmented else [])
            accs = []
            for s in protocol.seeds:
                _, acc = classifier_fn(
                    train_set, protocol.classifier, s, test, classes
                )
                accs.append(acc)
            summary = summarize_accuracies("aug" if augmented else "real", accs)
            rows.append(
                {
                    "real_count": count,
                    "augmented": augmented,
                    "median_accuracy": summary.median_accuracy,
                    "mean_accuracy": summary.mean_accuracy,
                    "std_accuracy": summary.std_accuracy,
                    "per_seed_accuracy": summary.per_seed_accuracy,
                }
            )
    return rows


def plot_scalability(rows: list[dict], path) -> None:
    """Accuracy-vs-real-count curve (matplotlib required)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for augmented, label, color in (
        (False, "real only", "tab:red"),
        (True, "real + synthetic", "tab:blue"),
    ):
        pts = [r for r in rows if r["augmented"] == augmented]
        xs = [r["real_count"] for r in pts]
        ys = [100 * r["median_accuracy"] for r in pts]
        err = [100 * r["std_accuracy"] for r in pts]
        ax.errorbar(xs, ys, yerr=err, marker="o", label=label, color=color)
    ax.set_xlabel("real training samples")
    ax.set_ylabel("median top-1 accuracy (%)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def temporal_iou(start_a: int, len_a: int, start_b: int, len_b: int) -> float:
    lo = max(start_a, start_b)
    hi = min(start_a + len_a, start_b + len_b)
    inter = max(0, hi - lo)
    union = len_a + len_b - inter
    return inter / union if union else 0.0


def mining_quality(records, truth, last_steps: int | None = None) -> dict:
    """Temporal IoU of mined windows against the toy ground truth.

    ``records`` are training step records; ``last_steps`` restricts to the
    final portion of training.
    """
    truth_by_id = {t.source_id: t for t in truth}
    if not truth_by_id:
        raise InvalidDatasetError("no ground-truth windows supplied")
    if last_steps is not None and records:
        cutoff = max(r.step for r in records) - last_steps + 1
        records = [r for r in records if r.step >= cutoff]
    per_class: dict[str, list[float]] = {}
    for rec in records:
        for pair in rec.pairs:
            sid = pair.get("source_id")
            if sid is None:
                continue
            if sid not in truth_by_id:
                raise InvalidDatasetError(
                    f"source {sid!r} has no ground-truth window (non-toy data?)"
                )
            t = truth_by_id[sid]
            iou = temporal_iou(
                pair["window_start"], pair["window_length"],
                t.window_start, t.window_length,
            )
            per_class.setdefault(t.embedded_class, []).append(iou)
    if not per_class:
        raise InvalidDatasetError("records contain no mined windows")
    all_ious = [v for vals in per_class.values() for v in vals]
    return {
        "overall_median": float(np.median(all_ious)),
        "overall_mean": float(np.mean(all_ious)),
        "count": len(all_ious),
        "per_class": {
            label: {
                "median": float(np.median(vals)),
                "mean": float(np.mean(vals)),
                "count": len(vals),
            }
            for label, vals in sorted(per_class.items())
        },
    }


@torch.no_grad()
def mining_probe(
    teacher_model,
    stats,
    schedule,
    mic: MicEncoder,
    pairs,
    encoder,
    t_probe: int | None = None,
    noise_seed: int = 0,
) -> list[dict]:
    """Mine a window for every (target, source) pair at a fixed timestep.

    Used to compare mining quality between MIC states (e.g. untrained vs
    trained) under identical conditions.
    """
    if t_probe is None:
        t_probe = max(1, schedule.T // 20)
    gen = torch.Generator().manual_seed(noise_seed)
    ab = schedule.alpha_bar[t_probe]
    out = []
    for target, source in pairs:
        row = stats.normalize(source.motion.data).astype(np.float32)
        x0 = torch.from_numpy(row)[None]
        noise = torch.randn(x0.shape, generator=gen)
        x_t = float(np.sqrt(ab)) * x0 + float(np.sqrt(1.0 - ab)) * noise
        mask = torch.ones(1, x0.shape[1], dtype=torch.bool)
        cap = torch.from_numpy(
            np.asarray(encoder.encode(source.caption).vector, dtype=np.float32)
        )[None]
        tokens = teacher_model(
            x_t,
            torch.tensor([t_probe]),
            cap,
            torch.ones(1, dtype=torch.bool),
            torch.full((1,), -1),
            mask,
        ).frame_tokens
        _, weights = mic(tokens, mask)
        trace = AttentionTrace(
            weights[0].numpy().astype(np.float64)
            / max(float(weights[0].sum()), 1e-12)
        )
        m = min(target.motion.n_frames, source.motion.n_frames)
        window = mine_window(trace, m)
        out.append(
            {
                "target_id": target.sample_id,
                "source_id": source.source_id,
                "window_start": window.start,
                "window_length": window.length,
                "window_score": window.score,
            }
        )
    return out
