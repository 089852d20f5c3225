"""Training loops: teacher pretraining and few-shot student adaptation.

The adaptation step, per retrieved (target, source) pair: share one noise
draw across both sequences at a common random timestep, run the frozen
teacher on the noised source and the adapted student on the noised target,
align the two streams' context latents contrastively (detached from both
denoisers, so only the mining encoder learns from it), mine the
highest-attention source window of the target's length, re-noise that
window with the matching slice of the shared noise, train the student to
reconstruct both clips under the same (possibly dropout-reduced) target
conditioning, distill the teacher's window features, and gate the two
window terms by the detached latent-similarity quality score.

Per-pair quality gating makes the step total
``mean_i(rec_i) + con + mean_i(dww_i * (rec_w_i + dist_i))``; the logged
step row reports the effective scalar gate (the rec/distill-weighted mean
of the per-pair scores), which keeps the breakdown identity exact while the
per-pair scores live in the step record.

RNG streams (all seeded from the config): partner choice uses a NumPy
generator; timesteps, noise and modality dropout each use their own torch
generator, consumed in support-set order within a step; adapter dropout
uses torch's global RNG, seeded once at loop start.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .checkpoints import LoadedCheckpoint, save_checkpoint
from .datasets import CaptionedSample, LabeledSample
from .denoiser import DenoiserModel, ModelConfig, student_from_teacher
from .errors import (
    InvalidArgumentError,
    InvalidConfigError,
    TrainingDivergenceError,
)
from .features import FeatureStats
from .io import dump_json_bytes
from .lora import freeze_for_adaptation, inject_adapters, trainable_parameters
from .mic import MicEncoder, dww as window_quality
from .objectives import LossWeights, rec_loss, snn_loss, total_loss
from .kernels import best_window
from .schedule import NoiseSchedule
from .textspace import SoftPairIndex, label_to_prompt

logger = logging.getLogger(__name__)

METRICS_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ModeSpec:
    trains: bool = True
    from_teacher: bool = True
    lora: bool = True
    uses_mic: bool = True
    distill_on: bool = True
    dww_dynamic: bool = True


MODES = {
    "kinemic_full": ModeSpec(),
    "kinemic_base": ModeSpec(distill_on=False, dww_dynamic=False),
    "kinemic_dist": ModeSpec(distill_on=True, dww_dynamic=False),
    "kinemic_dww": ModeSpec(distill_on=False, dww_dynamic=True),
    "lora_only": ModeSpec(uses_mic=False, distill_on=False, dww_dynamic=False),
    "scratch": ModeSpec(
        from_teacher=False, lora=False, uses_mic=False, distill_on=False,
        dww_dynamic=False,
    ),
    "pretrained_only": ModeSpec(
        trains=False, lora=False, uses_mic=False, distill_on=False,
        dww_dynamic=False,
    ),
}


@dataclass(frozen=True)
class PretrainConfig:
    """Source-corpus pretraining of the text-conditioned denoiser."""

    steps: int = 4000
    batch_size: int = 16
    lr: float = 1e-3
    warmup_steps: int = 100
    final_lr_fraction: float = 0.1
    grad_clip: float = 1.0
    p_drop_text: float = 0.1
    diffusion_steps: int = 100
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 0

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "batch_size": self.batch_size,
            "lr": self.lr,
            "warmup_steps": self.warmup_steps,
            "final_lr_fraction": self.final_lr_fraction,
            "grad_clip": self.grad_clip,
            "p_drop_text": self.p_drop_text,
            "diffusion_steps": self.diffusion_steps,
            "seed": self.seed,
            "log_every": self.log_every,
            "checkpoint_every": self.checkpoint_every,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PretrainConfig":
        return cls(**d)

    def lr_at(self, step: int) -> float:
        """Linear warmup then cosine decay to a floor fraction."""
        if self.warmup_steps and step < self.warmup_steps:
            return self.lr * (step + 1) / self.warmup_steps
        span = max(1, self.steps - self.warmup_steps)
        progress = min(1.0, (step - self.warmup_steps) / span)
        lo = self.lr * self.final_lr_fraction
        return lo + 0.5 * (self.lr - lo) * (1.0 + math.cos(math.pi * progress))


@dataclass(frozen=True)
class TrainConfig:
    """Few-shot adaptation hyperparameters."""

    steps: int = 5000
    lr: float = 2e-5
    grad_clip: float = 1.0
    diffusion_steps: int = 100
    guidance_scale: float = 2.5
    p_drop_text: float = 0.1
    p_drop_action: float = 0.1
    k: int = 250
    tau: float = 0.07
    weights: LossWeights = field(default_factory=LossWeights)
    mode: str = "kinemic_full"
    seed: int = 0
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    lora_rank: int = 16
    lora_alpha: float = 32.0
    lora_dropout: float = 0.1
    mic_hidden: int = 128
    mic_latent: int = 128
    checkpoint_every: int = 0
    window_shares_conditioning_drops: bool = True
    mining_timestep: int | None = None
    mining_override: str = "attention"
    log_every: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise InvalidConfigError(
                f"unknown mode {self.mode!r}; choose from {sorted(MODES)}"
            )
        if self.mining_override not in ("attention", "ground_truth", "random"):
            raise InvalidConfigError(
                f"unknown mining_override {self.mining_override!r}"
            )
        for name in ("steps", "diffusion_steps"):
            if getattr(self, name) < 1:
                raise InvalidConfigError(f"{name} must be >= 1")
        for name in ("lr", "grad_clip", "tau"):
            if getattr(self, name) <= 0:
                raise InvalidConfigError(f"{name} must be positive")
        for name in ("p_drop_text", "p_drop_action"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidConfigError(f"{name} must be in [0, 1]")

    @property
    def spec(self) -> ModeSpec:
        return MODES[self.mode]

    def to_dict(self) -> dict:
        d = {
            name: getattr(self, name)
            for name in (
                "steps", "lr", "grad_clip", "diffusion_steps", "guidance_scale",
                "p_drop_text", "p_drop_action", "k", "tau", "mode", "seed",
                "weight_decay", "beta1", "beta2", "lora_rank", "lora_alpha",
                "lora_dropout", "mic_hidden", "mic_latent", "checkpoint_every",
                "window_shares_conditioning_drops", "mining_timestep",
                "mining_override", "log_every",
            )
        }
        d["weights"] = self.weights.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "weights" in d:
            d["weights"] = LossWeights.from_dict(d["weights"])
        return cls(**d)


@dataclass
class TrainData:
    """Everything the adaptation loop consumes."""

    support: list[LabeledSample]
    labels: list[str]
    encoder: object
    sources: list[CaptionedSample] | None = None
    index: SoftPairIndex | None = None
    teacher: LoadedCheckpoint | None = None
    truth: list | None = None
    fps: float | None = None
    topology_dict: dict | None = None


@dataclass
class TrainStepRecord:
    step: int
    pairs: list[dict]
    losses: dict
    grad_norm: float

    def to_dict(self) -> dict:
        return {
            "schema": METRICS_SCHEMA_VERSION,
            "step": self.step,
            "pairs": self.pairs,
            "losses": self.losses,
            "grad_norm": self.grad_norm,
        }


def pair_batch(
    support: list[LabeledSample],
    index: SoftPairIndex,
    sources_by_id: dict[str, CaptionedSample],
    rng: np.random.Generator,
) -> list[tuple[LabeledSample, CaptionedSample]]:
    """Each support sample once, partnered with a uniform draw from its
    label's soft-positive list."""
    out = []
    for sample in support:
        try:
            candidates = index.sources_for(sample.label)
        except InvalidArgumentError as exc:
            raise InvalidConfigError(str(exc)) from exc
        sid = candidates[int(rng.integers(len(candidates)))][0]
        if sid not in sources_by_id:
            raise InvalidConfigError(f"index references unknown source {sid!r}")
        out.append((sample, sources_by_id[sid]))
    return out


def _pad_batch(rows: list[np.ndarray]) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack variable-length (n_i, d) arrays into padded float32 tensors."""
    n_max = max(r.shape[0] for r in rows)
    d = rows[0].shape[1]
    x = torch.zeros(len(rows), n_max, d)
    mask = torch.zeros(len(rows), n_max, dtype=torch.bool)
    for i, r in enumerate(rows):
        n = r.shape[0]
        x[i, :n] = torch.from_numpy(np.ascontiguousarray(r, dtype=np.float32))
        mask[i, :n] = True
    return x, mask


def _per_pair_rec(x0, x0_hat, mask) -> torch.Tensor:
    """(B,) per-sequence masked MSE."""
    diff = (x0 - x0_hat) ** 2
    m = mask.float()
    denom = m.sum(dim=1) * x0.shape[-1]
    return (diff * m[:, :, None]).sum(dim=(1, 2)) / denom


class _AdaptationState:
    """Mutable pieces of one adaptation run."""

    def __init__(self, cfg: TrainConfig, data: TrainData):
        self.cfg = cfg
        self.data = data
        spec = cfg.spec
        torch.manual_seed(cfg.seed)

        if spec.from_teacher:
            if data.teacher is None:
                raise InvalidConfigError(f"mode {cfg.mode} needs a teacher checkpoint")
            teacher = data.teacher.model
            teacher.eval()
            for p in teacher.parameters():
                p.requires_grad_(False)
            self.teacher = teacher
            self.stats = data.teacher.stats
            self.schedule = data.teacher.schedule
            if self.schedule.T != cfg.diffusion_steps:
                logger.warning(
                    "config diffusion_steps=%d overridden by teacher schedule T=%d",
                    cfg.diffusion_steps, self.schedule.T,
                )
            self.student = student_from_teacher(teacher, len(data.labels))
            if spec.lora:
                inject_adapters(
                    self.student, cfg.lora_rank, cfg.lora_alpha, cfg.lora_dropout
                )
                freeze_for_adaptation(self.student)
        else:
            self.teacher = None
            self.stats = FeatureStats.fit([s.motion.data for s in data.support])
            self.schedule = NoiseSchedule(T=cfg.diffusion_steps)
            dim = data.support[0].motion.dim
            model_cfg = ModelConfig(feature_dim=dim, action_count=len(data.labels))
            self.student = DenoiserModel(model_cfg)
            for p in self.student.parameters():
                p.requires_grad_(True)

        self.mic = None
        if spec.uses_mic:
            if data.sources is None or data.index is None:
                raise InvalidConfigError(f"mode {cfg.mode} needs sources and an index")
            self.mic = MicEncoder(
                input_dim=self.student.config.width,
                hidden=cfg.mic_hidden,
                latent_dim=cfg.mic_latent,
            )

        if spec.lora:
            trainables = trainable_parameters(self.student, self.mic)
            adapter = [p for n, p in trainables.items() if "lora_" in n]
            rest = [p for n, p in trainables.items() if "lora_" not in n]
            groups = [
                {"params": adapter, "weight_decay": cfg.weight_decay},
                {"params": rest, "weight_decay": 0.0},
            ]
            self.trainables = trainables
        else:
            params = dict(self.student.named_parameters())
            if self.mic is not None:
                params.update(
                    {f"mic.{n}": p for n, p in self.mic.named_parameters()}
                )
            groups = [{"params": list(params.values()), "weight_decay": 0.0}]
            self.trainables = params
        self.optimizer = torch.optim.AdamW(
            groups, lr=cfg.lr, betas=(cfg.beta1, cfg.beta2)
        )

        self.np_rng = np.random.default_rng(cfg.seed)
        self.gen_t = torch.Generator().manual_seed(cfg.seed + 1)
        self.gen_noise = torch.Generator().manual_seed(cfg.seed + 2)
        self.gen_drop = torch.Generator().manual_seed(cfg.seed + 3)

        self.sources_by_id = {
            s.source_id: s for s in (data.sources or [])
        }
        self.caption_vecs = {
            s.source_id: np.asarray(
                data.encoder.encode(s.caption).vector, dtype=np.float32
            )
            for s in (data.sources or [])
        }
        self.prompt_vecs = {
            label: np.asarray(
                data.encoder.encode(label_to_prompt(label)).vector, dtype=np.float32
            )
            for label in data.labels
        }
        self.label_ids = {label: i for i, label in enumerate(data.labels)}
        self.truth_by_id = {
            t.source_id: t for t in (data.truth or [])
        }

    def normalized(self, sample) -> np.ndarray:
        return self.stats.normalize(sample.motion.data)


def _adaptation_step(
    state: _AdaptationState, step: int, capture: dict | None = None
) -> tuple[torch.Tensor, TrainStepRecord]:
    cfg = state.cfg
    spec = cfg.spec
    data = state.data
    support = data.support
    b = len(support)
    T = state.schedule.T
    ab = state.schedule.alpha_bar
    uses_window = spec.uses_mic

    if uses_window:
        pairs = pair_batch(support, data.index, state.sources_by_id, state.np_rng)
    else:
        pairs = [(s, None) for s in support]

    # per-pair draws, in support order: timestep, shared noise, modality drops
    ts, noises, drops = [], [], []
    for tgt, src in pairs:
        n_t = tgt.motion.n_frames
        n_p = src.motion.n_frames if src is not None else 0
        t_i = int(torch.randint(1, T + 1, (1,), generator=state.gen_t))
        noise = torch.randn(
            max(n_t, n_p), tgt.motion.dim, generator=state.gen_noise
        )
        dr = torch.rand(2, generator=state.gen_drop)
        ts.append(t_i)
        noises.append(noise)
        drops.append(
            (bool(dr[0] < cfg.p_drop_text), bool(dr[1] < cfg.p_drop_action))
        )

    # target batch
    tgt_rows = [state.normalized(t) for t, _ in pairs]
    x0_t, mask_t = _pad_batch(tgt_rows)
    sqrt_ab = torch.tensor([math.sqrt(ab[t]) for t in ts], dtype=torch.float32)
    sqrt_1mab = torch.tensor(
        [math.sqrt(1.0 - ab[t]) for t in ts], dtype=torch.float32
    )
    noise_t = torch.zeros_like(x0_t)
    for i, (tgt, _) in enumerate(pairs):
        noise_t[i, : tgt.motion.n_frames] = noises[i][: tgt.motion.n_frames]
    x_t = sqrt_ab[:, None, None] * x0_t + sqrt_1mab[:, None, None] * noise_t
    x_t = x_t * mask_t[:, :, None]

    text_dim = state.student.config.text_dim
    text_emb = torch.zeros(b, text_dim)
    text_present = torch.zeros(b, dtype=torch.bool)
    action_ids = torch.full((b,), -1, dtype=torch.long)
    for i, (tgt, _) in enumerate(pairs):
        text_drop, action_drop = drops[i]
        if not text_drop:
            text_emb[i] = torch.from_numpy(state.prompt_vecs[tgt.label])
            text_present[i] = True
        if not action_drop:
            action_ids[i] = state.label_ids[tgt.label]

    timesteps = torch.tensor(ts, dtype=torch.long)
    state.student.train()
    out_t = state.student(x_t, timesteps, text_emb, text_present, action_ids, mask_t)
    rec_t_each = _per_pair_rec(x0_t, out_t.x0_hat, mask_t)
    rec_t = rec_t_each.mean()

    zero = out_t.x0_hat.sum() * 0.0
    con = zero
    rec_w = zero
    dist = zero
    dww_eff = 0.0
    pair_records = []
    window_term = zero
    rec_w_each = None
    dist_each = None

    if uses_window:
        src_rows = [state.normalized(s) for _, s in pairs]
        x0_p, mask_p = _pad_batch(src_rows)
        noise_p = torch.zeros_like(x0_p)
        for i, (_, src) in enumerate(pairs):
            noise_p[i, : src.motion.n_frames] = noises[i][: src.motion.n_frames]
        x_p = sqrt_ab[:, None, None] * x0_p + sqrt_1mab[:, None, None] * noise_p
        x_p = x_p * mask_p[:, :, None]

        cap_emb = torch.stack(
            [torch.from_numpy(state.caption_vecs[s.source_id]) for _, s in pairs]
        )
        cap_present = torch.ones(b, dtype=torch.bool)
        no_action = torch.full((b,), -1, dtype=torch.long)
        with torch.no_grad():
            out_p = state.teacher(
                x_p, timesteps, cap_emb, cap_present, no_action, mask_p
            )

        z_p, attn_p = state.mic(out_p.frame_tokens.detach(), mask_p)
        z_t, _ = state.mic(out_t.frame_tokens.detach(), mask_t)
        pos_sets = [
            {j for j, (other, _) in enumerate(pairs) if other.label == tgt.label}
            for tgt, _ in pairs
        ]
        con = snn_loss(z_t, z_p, pos_sets, cfg.tau)

        # mining trace: the step's own teacher attention by default, or a
        # dedicated low-noise pass when a fixed mining timestep is configured
        if cfg.mining_timestep is not None:
            t_fix = torch.full((b,), int(cfg.mining_timestep), dtype=torch.long)
            sqrt_ab_f = math.sqrt(ab[int(cfg.mining_timestep)])
            sqrt_1mab_f = math.sqrt(1.0 - ab[int(cfg.mining_timestep)])
            x_p_fix = (sqrt_ab_f * x0_p + sqrt_1mab_f * noise_p) * mask_p[:, :, None]
            with torch.no_grad():
                out_fix = state.teacher(
                    x_p_fix, t_fix, cap_emb, cap_present, no_action, mask_p
                )
            _, attn_mine = state.mic(out_fix.frame_tokens.detach(), mask_p)
        else:
            attn_mine = attn_p

        windows = []
        for i, (tgt, src) in enumerate(pairs):
            n_p = src.motion.n_frames
            m = min(tgt.motion.n_frames, n_p)
            if cfg.mining_override == "ground_truth":
                truth = state.truth_by_id.get(src.source_id)
                if truth is None:
                    raise InvalidConfigError(
                        f"no ground-truth window for source {src.source_id!r}"
                    )
                start = min(truth.window_start, n_p - m)
                score = float(
                    attn_mine[i, start : start + m].detach().sum().clamp(0.0, 1.0)
                )
            elif cfg.mining_override == "random":
                start = int(state.np_rng.integers(0, n_p - m + 1))
                score = float(
                    attn_mine[i, start : start + m].detach().sum().clamp(0.0, 1.0)
                )
            else:
                trace = attn_mine[i, :n_p].detach().numpy().astype(np.float64)
                if m >= n_p:
                    start, score = 0, 1.0
                else:
                    start, raw = best_window(trace, m)
                    score = float(np.clip(raw, 0.0, 1.0))
            windows.append((start, m, score))

        # window batch re-noised with the matching slice of the shared noise
        w_rows = []
        w_noise_rows = []
        for i, (_, src) in enumerate(pairs):
            start, m, _ = windows[i]
            w_rows.append(src_rows[i][start : start + m])
            w_noise_rows.append(noise_p[i, start : start + m])
        x0_w, mask_w = _pad_batch(w_rows)
        noise_w = torch.zeros_like(x0_w)
        for i, rows in enumerate(w_noise_rows):
            noise_w[i, : rows.shape[0]] = rows
        x_w = sqrt_ab[:, None, None] * x0_w + sqrt_1mab[:, None, None] * noise_w
        x_w = x_w * mask_w[:, :, None]

        if cfg.window_shares_conditioning_drops:
            w_text_emb, w_text_present, w_action = text_emb, text_present, action_ids
        else:
            w_text_emb = torch.stack(
                [torch.from_numpy(state.prompt_vecs[t.label]) for t, _ in pairs]
            )
            w_text_present = torch.ones(b, dtype=torch.bool)
            w_action = torch.tensor(
                [state.label_ids[t.label] for t, _ in pairs], dtype=torch.long
            )
        out_w = state.student(
            x_w, timesteps, w_text_emb, w_text_present, w_action, mask_w
        )
        rec_w_each = _per_pair_rec(x0_w, out_w.x0_hat, mask_w)
        rec_w = rec_w_each.mean()

        dist_terms = []
        for i in range(b):
            start, m, _ = windows[i]
            teacher_slice = out_p.frame_tokens[i, start : start + m].detach()
            student_slice = out_w.frame_tokens[i, :m]
            dist_terms.append(
                (student_slice - teacher_slice).pow(2).sum(dim=-1).mean()
            )
        dist_each = torch.stack(dist_terms)
        dist = dist_each.mean()

        if spec.dww_dynamic:
            with torch.no_grad():
                win_tok_rows = [
                    out_p.frame_tokens[i, s : s + m] for i, (s, m, _) in enumerate(windows)
                ]
                m_max = max(m for _, m, _ in windows)
                tok_w = torch.zeros(b, m_max, win_tok_rows[0].shape[-1])
                mask_wt = torch.zeros(b, m_max, dtype=torch.bool)
                for i, rows in enumerate(win_tok_rows):
                    tok_w[i, : rows.shape[0]] = rows
                    mask_wt[i, : rows.shape[0]] = True
                z_w, _ = state.mic(tok_w, mask_wt)
                dww_each = [
                    window_quality(z_t[i].detach(), z_w[i]) for i in range(b)
                ]
        else:
            dww_each = [1.0] * b

        lam3, lam4 = cfg.weights.rec_window, (
            cfg.weights.distill if spec.distill_on else 0.0
        )
        gates = torch.tensor(dww_each, dtype=torch.float32)
        window_each = lam3 * rec_w_each + lam4 * dist_each
        window_term = (gates * window_each).mean()
        denom = float((lam3 * rec_w_each + lam4 * dist_each).mean().detach())
        dww_eff = (
            float(window_term.detach()) / denom if denom > 0 else float(gates.mean())
        )

        for i, (tgt, src) in enumerate(pairs):
            start, m, score = windows[i]
            pair_records.append(
                {
                    "target_id": tgt.sample_id,
                    "source_id": src.source_id,
                    "t": ts[i],
                    "window_start": start,
                    "window_length": m,
                    "window_score": score,
                    "dww": float(dww_each[i]),
                }
            )
    else:
        for i, (tgt, _) in enumerate(pairs):
            pair_records.append(
                {"target_id": tgt.sample_id, "source_id": None, "t": ts[i]}
            )

    if capture is not None:
        capture.update(
            {
                "pairs": pairs,
                "ts": ts,
                "noises": noises,
                "drops": drops,
                "noise_t": noise_t,
                "mask_t": mask_t,
            }
        )
        if uses_window:
            capture.update(
                {
                    "noise_p": noise_p,
                    "noise_w": noise_w,
                    "windows": windows,
                    "mask_w": mask_w,
                    "dww_each": list(dww_each),
                }
            )

    lam_dist = cfg.weights.distill if spec.distill_on else 0.0
    loss = (
        cfg.weights.rec_target * rec_t
        + cfg.weights.contrastive * con
        + window_term
    )
    breakdown = total_loss(
        contrastive=float(con.detach()),
        rec_target=float(rec_t.detach()),
        rec_window=float(rec_w.detach()) if uses_window else 0.0,
        distill=float(dist.detach()) if uses_window else 0.0,
        weights=replace(cfg.weights, distill=lam_dist),
        dww_value=dww_eff,
    )
    record = TrainStepRecord(
        step=step,
        pairs=pair_records,
        losses=breakdown.to_dict(),
        grad_norm=0.0,
    )
    return loss, record


def train(
    cfg: TrainConfig,
    data: TrainData,
    out_dir,
) -> tuple[Path, list[TrainStepRecord]]:
    """Run the configured mode; returns (checkpoint path, step records)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "student.kmct"
    spec = cfg.spec

    if not data.support and spec.trains:
        raise InvalidConfigError("support set is empty")
    if spec.uses_mic and data.index is not None:
        for label in data.labels:
            data.index.sources_for(label)  # raises on missing labels

    if not spec.trains:
        if data.teacher is None:
            raise InvalidConfigError("pretrained_only needs a teacher checkpoint")
        save_checkpoint(
            ckpt_path,
            data.teacher.model,
            kind="generator",
            stats=data.teacher.stats,
            schedule=data.teacher.schedule,
            labels=data.labels,
            lora_config=None,
            extra={
                "mode": cfg.mode,
                "conditioning": "text",
                "train_config": cfg.to_dict(),
                "fps": data.fps,
                "topology": data.topology_dict,
            },
        )
        return ckpt_path, []

    state = _AdaptationState(cfg, data)
    records: list[TrainStepRecord] = []
    metrics_path = out_dir / "metrics.jsonl"
    # the mining encoder's contrastive gradients are much larger and spikier
    # than the student's reconstruction gradients, so each group gets its own
    # clip budget; otherwise contrastive spikes starve the student update
    student_tensors = [
        p for n, p in state.trainables.items() if not n.startswith("mic.")
    ]
    mic_tensors = [p for n, p in state.trainables.items() if n.startswith("mic.")]

    with open(metrics_path, "wb") as metrics:
        for step in range(cfg.steps):
            state.optimizer.zero_grad(set_to_none=True)
            try:
                loss, record = _adaptation_step(state, step)
            except TrainingDivergenceError as exc:
                diag = {"schema": METRICS_SCHEMA_VERSION, "step": step,
                        "error": str(exc)}
                metrics.write(dump_json_bytes(diag) + b"\n")
                raise
            loss.backward()
            grad_norm = torch.nn.utils.clip_grad_norm_(
                student_tensors, cfg.grad_clip
            )
            if mic_tensors:
                torch.nn.utils.clip_grad_norm_(mic_tensors, cfg.grad_clip)
            record.grad_norm = float(grad_norm)
            state.optimizer.step()
            records.append(record)
            if step % cfg.log_every == 0 or step == cfg.steps - 1:
                metrics.write(dump_json_bytes(record.to_dict()) + b"\n")
            if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
                _save_student(
                    out_dir / f"student_{step + 1:06d}.kmct", state, cfg, data
                )

    _save_student(ckpt_path, state, cfg, data)
    return ckpt_path, records


def _save_student(path, state: _AdaptationState, cfg: TrainConfig, data: TrainData):
    lora_config = (
        {"rank": cfg.lora_rank, "alpha": cfg.lora_alpha, "dropout": cfg.lora_dropout}
        if cfg.spec.lora
        else None
    )
    save_checkpoint(
        path,
        state.student,
        kind="generator",
        stats=state.stats,
        schedule=state.schedule,
        labels=data.labels,
        mic=state.mic,
        lora_config=lora_config,
        extra={
            "mode": cfg.mode,
            "conditioning": "action_text",
            "train_config": cfg.to_dict(),
            "fps": data.fps,
            "topology": data.topology_dict,
        },
    )


def pretrain_teacher(
    cfg: PretrainConfig,
    sources: list[CaptionedSample],
    encoder,
    out_path,
    fps: float | None = None,
    topology_dict: dict | None = None,
    model_config: ModelConfig | None = None,
) -> Path:
    """Train the text-conditioned denoiser on the captioned source corpus."""
    if not sources:
        raise InvalidConfigError("source corpus is empty")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)

    dim = sources[0].motion.dim
    if model_config is None:
        model_config = ModelConfig(feature_dim=dim)
    if model_config.action_count is not None:
        raise InvalidConfigError("teacher must not have an action table")
    model = DenoiserModel(model_config)
    stats = FeatureStats.fit([s.motion.data for s in sources])
    schedule = NoiseSchedule(T=cfg.diffusion_steps)
    rows = [
        np.ascontiguousarray(stats.normalize(s.motion.data), dtype=np.float32)
        for s in sources
    ]
    caption_vecs = [
        np.asarray(encoder.encode(s.caption).vector, dtype=np.float32)
        for s in sources
    ]

    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.lr)
    np_rng = np.random.default_rng(cfg.seed)
    gen_t = torch.Generator().manual_seed(cfg.seed + 1)
    gen_noise = torch.Generator().manual_seed(cfg.seed + 2)
    gen_drop = torch.Generator().manual_seed(cfg.seed + 3)
    ab = schedule.alpha_bar
    model.train()

    def _save(path):
        save_checkpoint(
            path,
            model,
            kind="teacher",
            stats=stats,
            schedule=schedule,
            labels=None,
            extra={
                "pretrain_config": cfg.to_dict(),
                "encoder": encoder.name,
                "fps": fps,
                "topology": topology_dict,
            },
        )

    for step in range(cfg.steps):
        for group in optimizer.param_groups:
            group["lr"] = cfg.lr_at(step)
        idx = np_rng.choice(len(rows), size=min(cfg.batch_size, len(rows)),
                            replace=False)
        batch = [rows[i] for i in idx]
        x0, mask = _pad_batch(batch)
        bsz = len(batch)
        ts = torch.randint(1, schedule.T + 1, (bsz,), generator=gen_t)
        noise = torch.zeros_like(x0)
        for i, r in enumerate(batch):
            noise[i, : r.shape[0]] = torch.randn(
                r.shape[0], dim, generator=gen_noise
            )
        sqrt_ab = torch.tensor([math.sqrt(ab[int(t)]) for t in ts])
        sqrt_1mab = torch.tensor([math.sqrt(1.0 - ab[int(t)]) for t in ts])
        x_t = (
            sqrt_ab[:, None, None].float() * x0
            + sqrt_1mab[:, None, None].float() * noise
        ) * mask[:, :, None]

        keep = torch.rand(bsz, generator=gen_drop) >= cfg.p_drop_text
        text_emb = torch.zeros(bsz, model_config.text_dim)
        for i, j in enumerate(idx):
            text_emb[i] = torch.from_numpy(caption_vecs[j])
        out = model(x_t, ts, text_emb, keep, torch.full((bsz,), -1), mask)
        loss = rec_loss(x0, out.x0_hat, mask)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        optimizer.step()
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            logger.info("pretrain step %d loss %.4f", step, float(loss.detach()))
        if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            model.eval()
            _save(out_path.parent / f"{out_path.stem}_{step + 1:06d}{out_path.suffix}")
            model.train()

    model.eval()
    _save(out_path)
    return out_path
