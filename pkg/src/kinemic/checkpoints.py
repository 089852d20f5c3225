"""Checkpoint serialization.

A checkpoint is a single bundle file carrying the denoiser state (adapter
factors included under their own names, so they can be disabled or stripped
at load time), the mining encoder state when present, and the metadata
needed to regenerate: model/schedule configs, feature statistics, label
list, skeleton, fps, and training provenance.
"""

from __future__ import annotations

import numpy as np
import torch

from .denoiser import DenoiserModel, ModelConfig
from .errors import InvalidDataError
from .features import FeatureStats
from .io import load_bundle, save_bundle
from .lora import inject_adapters, set_adapters_enabled
from .mic import MicEncoder
from .motion import SkeletonTopology
from .schedule import NoiseSchedule


def _state_arrays(module: torch.nn.Module, prefix: str = "") -> dict[str, np.ndarray]:
    out = {}
    for name, tensor in sorted(module.state_dict().items()):
        out[prefix + name] = tensor.detach().cpu().numpy()
    return out


def save_checkpoint(
    path,
    model: DenoiserModel,
    *,
    kind: str,
    stats: FeatureStats,
    schedule: NoiseSchedule,
    labels: list[str] | None = None,
    mic: MicEncoder | None = None,
    lora_config: dict | None = None,
    extra: dict | None = None,
) -> None:
    arrays = _state_arrays(model, "model.")
    if mic is not None:
        arrays.update(_state_arrays(mic, "mic."))
    meta = {
        "kind": kind,
        "model_config": model.config.to_dict(),
        "schedule": schedule.to_dict(),
        "stats": stats.to_dict(),
        "labels": labels,
        "lora": lora_config,
        "mic": (
            {
                "input_dim": mic.gru.input_size,
                "hidden": mic.gru.hidden_size,
                "latent_dim": mic.out.out_features,
            }
            if mic is not None
            else None
        ),
        "extra": extra or {},
    }
    save_bundle(path, arrays, meta)


class LoadedCheckpoint:
    def __init__(self, model, stats, schedule, meta, mic=None):
        self.model = model
        self.stats = stats
        self.schedule = schedule
        self.meta = meta
        self.mic = mic

    @property
    def kind(self) -> str:
        return self.meta["kind"]

    @property
    def labels(self) -> list[str] | None:
        return self.meta.get("labels")

    @property
    def extra(self) -> dict:
        return self.meta.get("extra", {})

    def topology(self) -> SkeletonTopology | None:
        top = self.extra.get("topology")
        return SkeletonTopology.from_dict(top) if top else None

    @property
    def fps(self) -> float | None:
        return self.extra.get("fps")


def load_checkpoint(path, disable_adapters: bool = False) -> LoadedCheckpoint:
    arrays, meta = load_bundle(path)
    config = ModelConfig.from_dict(meta["model_config"])
    model = DenoiserModel(config)
    if meta.get("lora"):
        inject_adapters(
            model,
            rank=meta["lora"]["rank"],
            alpha=meta["lora"]["alpha"],
            dropout=meta["lora"]["dropout"],
        )
    state = {
        name[len("model.") :]: torch.from_numpy(arr.copy())
        for name, arr in arrays.items()
        if name.startswith("model.")
    }
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise InvalidDataError(f"{path}: state mismatch: {exc}") from exc
    model.eval()
    if disable_adapters:
        set_adapters_enabled(model, False)
    mic = None
    if meta.get("mic"):
        mic = MicEncoder(**meta["mic"])
        mic_state = {
            name[len("mic.") :]: torch.from_numpy(arr.copy())
            for name, arr in arrays.items()
            if name.startswith("mic.")
        }
        mic.load_state_dict(mic_state)
        mic.eval()
    return LoadedCheckpoint(
        model=model,
        stats=FeatureStats.from_dict(meta["stats"]),
        schedule=NoiseSchedule.from_dict(meta["schedule"]),
        meta=meta,
        mic=mic,
    )
