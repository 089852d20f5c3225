"""Procedural toy corpus with known ground truth.

Three parametric action classes animate an 8-joint stick figure.  Target
samples are short atomic clips (label-conditioned domain); source samples
are longer idle sequences with exactly one atomic clip blended in at a
recorded window, captioned by a template grammar with per-class synonym
pools and shared distractor phrases.  Both domains are observed through the
same additive coordinate noise.  Window placement, class parameters and
caption wording are all drawn from a single seeded generator, so a
(config, seed) pair maps to a bit-identical corpus.

The deliberate mischief: synonym pools share a few words across classes
("side", "kick", "spot"), so text retrieval occasionally pairs a label with
an off-class source sequence.  That is what the window-quality gate in the
training loop is for.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datasets import CaptionedSample, LabeledSample
from .errors import InvalidConfigError
from .features import to_features
from .motion import MotionSequence, normalize, toy_skeleton
from .toy_motions import (
    CLASS_BANDS,
    apply_class_offsets,
    idle_sway,
    nuisance_params,
)

DEFAULT_CLASSES = ("run on spot", "side kick", "stretch")


@dataclass(frozen=True)
class ToyConfig:
    class_names: tuple[str, ...] = DEFAULT_CLASSES
    shots_per_class: int = 10
    source_count: int = 120
    source_length_range: tuple[int, int] = (48, 140)
    target_length_range: tuple[int, int] = (24, 40)
    fps: float = 20.0
    noise_std: float = 0.06
    sway_amp: float = 0.02
    blend_frames: int = 4

    def __post_init__(self):
        if not self.class_names:
            raise InvalidConfigError("need at least one class")
        unknown = set(self.class_names) - set(CLASS_BANDS)
        if unknown:
            raise InvalidConfigError(f"no generator for classes {sorted(unknown)}")
        s_lo, s_hi = self.source_length_range
        t_lo, t_hi = self.target_length_range
        if not (0 < t_lo <= t_hi and 0 < s_lo <= s_hi):
            raise InvalidConfigError("length ranges must be positive and ordered")
        if t_hi > s_lo:
            raise InvalidConfigError(
                "embedded windows must fit every source sequence: "
                f"target max {t_hi} > source min {s_lo}"
            )
        if self.shots_per_class < 1 or self.source_count < 1:
            raise InvalidConfigError("counts must be positive")

    def to_dict(self) -> dict:
        return {
            "class_names": list(self.class_names),
            "shots_per_class": self.shots_per_class,
            "source_count": self.source_count,
            "source_length_range": list(self.source_length_range),
            "target_length_range": list(self.target_length_range),
            "fps": self.fps,
            "noise_std": self.noise_std,
            "sway_amp": self.sway_amp,
            "blend_frames": self.blend_frames,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToyConfig":
        d = dict(d)
        for key in ("class_names",):
            if key in d:
                d[key] = tuple(d[key])
        for key in ("source_length_range", "target_length_range"):
            if key in d:
                d[key] = tuple(int(x) for x in d[key])
        return cls(**d)


@dataclass
class ToyGroundTruth:
    """Where each source sequence hides its atomic clip."""

    source_id: str
    embedded_class: str
    window_start: int
    window_length: int
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "source_id": self.source_id,
            "embedded_class": self.embedded_class,
            "window_start": self.window_start,
            "window_length": self.window_length,
            "params": self.params,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ToyGroundTruth":
        return cls(
            source_id=d["source_id"],
            embedded_class=d["embedded_class"],
            window_start=int(d["window_start"]),
            window_length=int(d["window_length"]),
            params=d.get("params", {}),
        )


_CAPTION_POOLS = {
    "run on spot": (
        "a person does a quick run on the spot",
        "a man does a light run on the spot",
        "someone is running in place",
        "a person does a short run staying on the spot",
        "a person runs on the spot kicking their heels up",
        "a steady run in place with relaxed arms",
    ),
    "side kick": (
        "a person does a side kick",
        "a man performs a powerful kick to the side",
        "someone kicks out sideways with one leg",
        "a martial artist throws a side kick and holds balance",
        "a person does a kick to the side and returns to standing",
        "a quick kick sideways keeping the arms steady",
    ),
    "stretch": (
        "a person does a full body stretch",
        "a man does a stretch with both arms overhead",
        "someone reaches up in a long stretch",
        "a person does a slow stretch to the side",
        "a person does an upward stretch standing on the spot",
        "a gentle stretch with the arms raised high",
    ),
}

_DISTRACTORS = (
    "",
    " in a small room",
    " for a few seconds",
    " with a steady rhythm",
    " while staying in place",
)


def _caption_for(label: str, rng: np.random.Generator) -> str:
    pool = _CAPTION_POOLS[label]
    base = pool[int(rng.integers(len(pool)))]
    return base + _DISTRACTORS[int(rng.integers(len(_DISTRACTORS)))]


def _draw_params(label: str, rng: np.random.Generator) -> dict:
    band = CLASS_BANDS[label]
    params = {
        "freq": float(rng.uniform(*band["freq"])),
        "amp": float(rng.uniform(*band["amp"])),
        "phase": float(rng.uniform(0.0, 2.0 * np.pi)),
        "style": float(rng.uniform(0.6, 1.4)),
        "side": int(rng.integers(2)) * 2 - 1,
    }
    params.update(nuisance_params(rng))
    return params


def _finish(positions: np.ndarray, cfg: ToyConfig, noisy: bool, rng: np.random.Generator):
    if noisy and cfg.noise_std > 0:
        positions = positions + rng.normal(0.0, cfg.noise_std, positions.shape)
    seq = MotionSequence(positions, cfg.fps, toy_skeleton())
    return to_features(normalize(seq))


def _atomic_clip(label: str, length: int, cfg: ToyConfig, rng: np.random.Generator):
    """(positions, params) for one atomic action clip."""
    params = _draw_params(label, rng)
    top = toy_skeleton()
    t = np.arange(length) / cfg.fps
    positions = np.tile(_rest_pose(top), (length, 1, 1))
    positions += idle_sway(length, top.joint_count, cfg.fps, cfg.sway_amp, rng)
    positions += apply_class_offsets(label, t, top, params)
    return positions, params


def _rest_pose(top) -> np.ndarray:
    # rebuild the rest pose from rest directions and reference lengths
    pose = np.zeros((top.joint_count, 3))
    pose[0] = (0.0, 0.9, 0.0)
    for j in top.topological_order():
        p = int(top.parent_index[j])
        pose[j] = pose[p] + top.reference_bone_lengths[j] * top.rest_directions[j]
    return pose


def _blend_envelope(total: int, start: int, length: int, ramp: int) -> np.ndarray:
    env = np.zeros(total)
    ramp = max(1, min(ramp, length // 2))
    window = np.ones(length)
    fade = 0.5 - 0.5 * np.cos(np.pi * (np.arange(ramp) + 1) / (ramp + 1))
    window[:ramp] = fade
    window[length - ramp :] = fade[::-1]
    env[start : start + length] = window
    return env


def generate_toy_corpus(cfg: ToyConfig, seed: int):
    """Build (sources, targets, truth) deterministically from (cfg, seed)."""
    rng = np.random.default_rng(seed)
    top = toy_skeleton()
    classes = list(cfg.class_names)
    n_cls = len(classes)

    sources: list[CaptionedSample] = []
    truth: list[ToyGroundTruth] = []
    # balanced class assignment, shuffled deterministically
    assign = np.array([i % n_cls for i in range(cfg.source_count)])
    rng.shuffle(assign)
    s_lo, s_hi = cfg.source_length_range
    t_lo, t_hi = cfg.target_length_range
    for i in range(cfg.source_count):
        label = classes[int(assign[i])]
        length = int(rng.integers(s_lo, s_hi + 1))
        win_len = int(rng.integers(t_lo, t_hi + 1))
        win_start = int(rng.integers(0, length - win_len + 1))
        params = _draw_params(label, rng)

        t = np.arange(length) / cfg.fps
        positions = np.tile(_rest_pose(top), (length, 1, 1))
        positions += idle_sway(length, top.joint_count, cfg.fps, cfg.sway_amp, rng)
        offsets = apply_class_offsets(label, t, top, params)
        env = _blend_envelope(length, win_start, win_len, cfg.blend_frames)
        positions += offsets * env[:, None, None]

        source_id = f"src-{i:04d}"
        caption = _caption_for(label, rng)
        feat = _finish(positions, cfg, noisy=True, rng=rng)
        feat.provenance = {"source_id": source_id}
        sources.append(
            CaptionedSample(motion=feat, caption=caption, source_id=source_id)
        )
        truth.append(
            ToyGroundTruth(
                source_id=source_id,
                embedded_class=label,
                window_start=win_start,
                window_length=win_len,
                params=params,
            )
        )

    targets: list[LabeledSample] = []
    for c, label in enumerate(classes):
        for s in range(cfg.shots_per_class):
            length = int(rng.integers(t_lo, t_hi + 1))
            positions, params = _atomic_clip(label, length, cfg, rng)
            feat = _finish(positions, cfg, noisy=True, rng=rng)
            sample_id = f"tgt-{c}-{s:04d}"
            feat.provenance = {"sample_id": sample_id, "params": params}
            targets.append(
                LabeledSample(motion=feat, label=label, sample_id=sample_id)
            )

    return sources, targets, truth


def generate_test_split(cfg: ToyConfig, seed: int, per_class: int):
    """Fresh labeled samples for classifier evaluation, disjoint by seed."""
    rng = np.random.default_rng(seed)
    out: list[LabeledSample] = []
    for c, label in enumerate(cfg.class_names):
        for s in range(per_class):
            t_lo, t_hi = cfg.target_length_range
            length = int(rng.integers(t_lo, t_hi + 1))
            positions, params = _atomic_clip(label, length, cfg, rng)
            feat = _finish(positions, cfg, noisy=True, rng=rng)
            sample_id = f"test-{c}-{s:04d}"
            feat.provenance = {"sample_id": sample_id, "params": params}
            out.append(LabeledSample(motion=feat, label=label, sample_id=sample_id))
    return out
