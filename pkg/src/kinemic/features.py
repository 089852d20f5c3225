"""Model-facing motion features.

A pose sequence becomes an n x d matrix of per-frame channels:

* root (4): yaw velocity, planar velocity in the facing-aligned frame (x, z),
  root height
* root-relative joint positions, (J-1) x 3, in the facing-aligned frame
* continuous 6D joint rotations, (J-1) x 6, fit per bone against the rest
  direction
* joint velocities, J x 3, facing-aligned
* foot contact flags, 4

For 22 joints this gives the usual 263 channels.  Positions are
authoritative on reconstruction: the rotation channels are re-derived and
may differ after a round trip.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, InvalidDataError, TooShortError
from .motion import MotionSequence, SkeletonTopology, facing_angle, rot_y

DEFAULT_CONTACT_SPEED = 0.002  # meters per frame
DEFAULT_CONTACT_HEIGHT = 0.05  # meters


@dataclass(frozen=True)
class FeatureLayout:
    """Channel layout for a J-joint skeleton."""

    joint_count: int

    def __post_init__(self):
        if self.joint_count < 2:
            raise InvalidArgumentError("need at least 2 joints")

    @property
    def root_dim(self) -> int:
        return 4

    @property
    def ric_dim(self) -> int:
        return (self.joint_count - 1) * 3

    @property
    def rot_dim(self) -> int:
        return (self.joint_count - 1) * 6

    @property
    def vel_dim(self) -> int:
        return self.joint_count * 3

    @property
    def contact_dim(self) -> int:
        return 4

    @property
    def total_dim(self) -> int:
        return (
            self.root_dim + self.ric_dim + self.rot_dim + self.vel_dim + self.contact_dim
        )

    @property
    def root_slice(self) -> slice:
        return slice(0, 4)

    @property
    def ric_slice(self) -> slice:
        return slice(4, 4 + self.ric_dim)

    @property
    def rot_slice(self) -> slice:
        start = 4 + self.ric_dim
        return slice(start, start + self.rot_dim)

    @property
    def vel_slice(self) -> slice:
        start = 4 + self.ric_dim + self.rot_dim
        return slice(start, start + self.vel_dim)

    @property
    def contact_slice(self) -> slice:
        return slice(self.total_dim - 4, self.total_dim)


@dataclass
class FeatureSequence:
    """n x d feature matrix plus everything needed to invert it."""

    data: np.ndarray
    layout: FeatureLayout
    fps: float | None = None
    topology: SkeletonTopology | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[1] != self.layout.total_dim:
            raise InvalidArgumentError(
                f"data must be (n, {self.layout.total_dim}), got {data.shape}"
            )
        if not np.isfinite(data).all():
            raise InvalidDataError("features contain non-finite values")
        self.data = data

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


def layout_for_dim(d: int) -> FeatureLayout:
    """Invert the channel-count formula (d = 12 J - 1)."""
    if (d + 1) % 12:
        raise InvalidArgumentError(f"{d} is not a valid feature dimension")
    return FeatureLayout((d + 1) // 12)


@dataclass
class FeatureStats:
    """Per-channel mean/std used to map features to model space and back."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, feature_arrays, std_floor: float = 1e-3) -> "FeatureStats":
        stacked = np.concatenate([np.asarray(a) for a in feature_arrays], axis=0)
        return cls(
            mean=stacked.mean(axis=0),
            std=np.maximum(stacked.std(axis=0), std_floor),
        )

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean

    def to_dict(self) -> dict:
        return {
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureStats":
        return cls(
            mean=np.asarray(d["mean"], dtype=np.float64),
            std=np.asarray(d["std"], dtype=np.float64),
        )


def _rotation_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimal rotation matrix sending unit vector a onto unit vector b."""
    c = float(np.dot(a, b))
    axis = np.cross(a, b)
    s = float(np.linalg.norm(axis))
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        # opposite directions: rotate by pi about any perpendicular
        perp = np.cross(a, np.array([1.0, 0.0, 0.0]))
        if np.linalg.norm(perp) < 1e-8:
            perp = np.cross(a, np.array([0.0, 1.0, 0.0]))
        perp /= np.linalg.norm(perp)
        k = _skew(perp)
        return np.eye(3) + 2.0 * (k @ k)
    axis = axis / s
    k = _skew(axis)
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array(
        [[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]]
    )


def _wrap_angle(a: np.ndarray) -> np.ndarray:
    return (a + np.pi) % (2.0 * np.pi) - np.pi


def _facing_angles(frames: np.ndarray, topology: SkeletonTopology) -> np.ndarray:
    """Per-frame yaw; a degenerate frame reuses the previous frame's value."""
    n = frames.shape[0]
    theta = np.zeros(n)
    for t in range(n):
        try:
            theta[t] = facing_angle(frames[t], topology)
        except Exception:
            theta[t] = theta[t - 1] if t > 0 else 0.0
    return theta


def to_features(
    seq: MotionSequence,
    contact_speed_threshold: float = DEFAULT_CONTACT_SPEED,
    contact_height_threshold: float = DEFAULT_CONTACT_HEIGHT,
) -> FeatureSequence:
    """Extract per-frame feature channels from a normalized sequence.

    Velocities need at least two frames.  The final frame repeats the
    previous frame's velocity channels so the output keeps n rows.
    """
    if seq.n_frames < 2:
        raise TooShortError("need at least 2 frames to compute velocities")
    top = seq.topology
    j = top.joint_count
    layout = FeatureLayout(j)
    frames = seq.frames
    n = seq.n_frames

    theta = _facing_angles(frames, top)
    rot_vel = np.empty(n)
    rot_vel[:-1] = _wrap_angle(np.diff(theta))
    rot_vel[-1] = rot_vel[-2]

    inv_rots = np.stack([rot_y(-th) for th in theta])  # (n, 3, 3)

    root = frames[:, 0]
    droot = np.empty((n, 3))
    droot[:-1] = root[1:] - root[:-1]
    droot[-1] = droot[-2]
    droot_local = np.einsum("nij,nj->ni", inv_rots, droot)

    root_feats = np.stack(
        [rot_vel, droot_local[:, 0], droot_local[:, 2], root[:, 1]], axis=1
    )

    anchor = root.copy()
    anchor[:, 1] = 0.0
    rel = frames[:, 1:] - anchor[:, None, :]
    ric = np.einsum("nij,nkj->nki", inv_rots, rel).reshape(n, -1)

    if top.rest_directions is not None:
        rest = top.rest_directions
    else:
        d0 = frames[0, 1:] - frames[0, top.parent_index[1:]]
        nd0 = np.linalg.norm(d0, axis=1, keepdims=True)
        rest = np.concatenate(
            [[np.array([0.0, 1.0, 0.0])], np.where(nd0 > 1e-12, d0 / np.maximum(nd0, 1e-12), [0.0, 1.0, 0.0])]
        )
    bone = frames[:, 1:] - frames[:, top.parent_index[1:]]
    bone_local = np.einsum("nij,nkj->nki", inv_rots, bone)
    rot6d = np.zeros((n, j - 1, 6))
    for k in range(1, j):
        r0 = rest[k]
        for t in range(n):
            d = bone_local[t, k - 1]
            nr = np.linalg.norm(d)
            rot = _rotation_between(r0, d / nr) if nr > 1e-12 else np.eye(3)
            rot6d[t, k - 1, :3] = rot[:, 0]
            rot6d[t, k - 1, 3:] = rot[:, 1]
    rot6d = rot6d.reshape(n, -1)

    dpos = np.empty_like(frames)
    dpos[:-1] = frames[1:] - frames[:-1]
    dpos[-1] = dpos[-2]
    vel = np.einsum("nij,nkj->nki", inv_rots, dpos).reshape(n, -1)

    speeds = np.linalg.norm(dpos, axis=2)  # (n, J)
    contact_ids = np.resize(np.asarray(top.foot_joint_ids, dtype=int), 4)
    contacts = (
        (speeds[:, contact_ids] < contact_speed_threshold)
        & (frames[:, contact_ids, 1] < contact_height_threshold)
    ).astype(np.float64)

    data = np.concatenate([root_feats, ric, rot6d, vel, contacts], axis=1)
    return FeatureSequence(data=data, layout=layout, fps=seq.fps, topology=top)


def from_features(feat: FeatureSequence) -> MotionSequence:
    """Rebuild joint positions from the root and relative-position channels.

    Rotation channels are ignored (positions are authoritative); velocity
    channels are implied by the rebuilt positions.
    """
    if feat.topology is None or feat.fps is None:
        raise InvalidArgumentError(
            "feature sequence lacks topology/fps needed for reconstruction"
        )
    if not np.isfinite(feat.data).all():
        raise InvalidDataError("features contain non-finite values")
    layout = feat.layout
    data = feat.data
    n = data.shape[0]
    j = layout.joint_count

    rot_vel = data[:, 0]
    theta = np.zeros(n)
    theta[1:] = np.cumsum(rot_vel[:-1])
    rots = np.stack([rot_y(th) for th in theta])

    droot_local = np.stack(
        [data[:, 1], np.zeros(n), data[:, 2]], axis=1
    )
    droot = np.einsum("nij,nj->ni", rots, droot_local)
    root = np.zeros((n, 3))
    root[1:, 0] = np.cumsum(droot[:-1, 0])
    root[1:, 2] = np.cumsum(droot[:-1, 2])
    root[:, 1] = data[:, 3]

    ric = data[:, layout.ric_slice].reshape(n, j - 1, 3)
    rel = np.einsum("nij,nkj->nki", rots, ric)
    anchor = root.copy()
    anchor[:, 1] = 0.0
    joints = rel + anchor[:, None, :]

    frames = np.concatenate([root[:, None, :], joints], axis=1)
    return MotionSequence(frames=frames, fps=feat.fps, topology=feat.topology)
