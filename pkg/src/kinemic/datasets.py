"""Sample containers and on-disk dataset handling.

Datasets live in a directory holding ``data.bin`` (little-endian arrays) and
``meta.json`` (per-sample records, feature layout, skeleton, fps, format
version).  A loader for the common motion-capture research layout
(per-sample ``.npy`` feature file plus a caption text file) is provided for
users bringing their own data; nothing is bundled.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError, InvalidDataError
from .features import FeatureLayout, FeatureSequence
from .io import load_dataset_dir, read_json, save_dataset_dir, write_json
from .motion import SkeletonTopology


@dataclass
class CaptionedSample:
    """Source-domain pair: motion plus free-form description."""

    motion: FeatureSequence
    caption: str
    source_id: str

    def __post_init__(self):
        if not self.caption:
            raise InvalidArgumentError("caption must be non-empty")


@dataclass
class LabeledSample:
    """Target-domain pair: motion plus discrete action label."""

    motion: FeatureSequence
    label: str
    sample_id: str


def _common_meta(samples) -> dict:
    first = samples[0].motion
    meta = {
        "joint_count": first.layout.joint_count,
        "fps": first.fps,
        "topology": first.topology.to_dict() if first.topology is not None else None,
    }
    for s in samples:
        if s.motion.layout.joint_count != meta["joint_count"]:
            raise InvalidDataError("mixed feature layouts in one dataset")
    return meta


def save_captioned(path, samples: list[CaptionedSample]) -> None:
    if not samples:
        raise InvalidArgumentError("refusing to write an empty dataset")
    arrays = {s.source_id: s.motion.data for s in samples}
    meta = _common_meta(samples)
    meta["kind"] = "captioned"
    meta["samples"] = [
        {"id": s.source_id, "caption": s.caption, "provenance": s.motion.provenance}
        for s in samples
    ]
    save_dataset_dir(path, arrays, meta)


def save_labeled(path, samples: list[LabeledSample]) -> None:
    if not samples:
        raise InvalidArgumentError("refusing to write an empty dataset")
    arrays = {s.sample_id: s.motion.data for s in samples}
    meta = _common_meta(samples)
    meta["kind"] = "labeled"
    meta["samples"] = [
        {"id": s.sample_id, "label": s.label, "provenance": s.motion.provenance}
        for s in samples
    ]
    save_dataset_dir(path, arrays, meta)


def _decode(arrays, meta):
    layout = FeatureLayout(meta["joint_count"])
    topology = (
        SkeletonTopology.from_dict(meta["topology"]) if meta.get("topology") else None
    )
    out = []
    for rec in meta["samples"]:
        feat = FeatureSequence(
            data=arrays[rec["id"]],
            layout=layout,
            fps=meta.get("fps"),
            topology=topology,
            provenance=rec.get("provenance") or {},
        )
        out.append((rec, feat))
    return out


def load_captioned(path) -> list[CaptionedSample]:
    arrays, meta = load_dataset_dir(path)
    if meta.get("kind") != "captioned":
        raise InvalidDataError(f"{path}: expected a captioned dataset")
    return [
        CaptionedSample(motion=feat, caption=rec["caption"], source_id=rec["id"])
        for rec, feat in _decode(arrays, meta)
    ]


def load_labeled(path) -> list[LabeledSample]:
    arrays, meta = load_dataset_dir(path)
    if meta.get("kind") != "labeled":
        raise InvalidDataError(f"{path}: expected a labeled dataset")
    return [
        LabeledSample(motion=feat, label=rec["label"], sample_id=rec["id"])
        for rec, feat in _decode(arrays, meta)
    ]


def save_truth(path, truth) -> None:
    write_json(path, {"version": 1, "windows": [t.to_dict() for t in truth]})


def load_truth(path):
    from .toy import ToyGroundTruth

    doc = read_json(path)
    return [ToyGroundTruth.from_dict(d) for d in doc["windows"]]


def load_feature_caption_dir(
    root, joint_count: int = 22, fps: float = 20.0, limit: int | None = None
) -> list[CaptionedSample]:
    """Load a research-layout dataset: ``<root>/new_joint_vecs/<id>.npy``
    feature matrices with ``<root>/texts/<id>.txt`` caption files.

    Caption files may carry one annotation per line with ``#``-separated
    fields; the first field of the first line is used.
    """
    root = Path(root)
    vec_dir = root / "new_joint_vecs"
    text_dir = root / "texts"
    if not vec_dir.is_dir():
        raise InvalidDataError(f"{vec_dir} not found")
    layout = FeatureLayout(joint_count)
    samples = []
    for npy in sorted(vec_dir.glob("*.npy")):
        data = np.load(npy)
        if data.ndim != 2 or data.shape[1] != layout.total_dim:
            raise InvalidDataError(
                f"{npy.name}: expected (n, {layout.total_dim}) features, got {data.shape}"
            )
        caption_file = text_dir / (npy.stem + ".txt")
        if not caption_file.exists():
            raise InvalidDataError(f"missing caption file for {npy.name}")
        first_line = caption_file.read_text("utf-8").strip().splitlines()[0]
        caption = first_line.split("#")[0].strip()
        feat = FeatureSequence(data=data, layout=layout, fps=fps, topology=None)
        samples.append(
            CaptionedSample(motion=feat, caption=caption, source_id=npy.stem)
        )
        if limit is not None and len(samples) >= limit:
            break
    return samples
