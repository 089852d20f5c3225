"""Skeleton topology and raw motion sequences.

Positions are meters in a y-up right-handed frame; a character facing +Z has
its left side toward +X.  Preprocessing follows the usual motion-capture
recipe: constant bone lengths, root-centered start, frame-0 facing aligned
to +Z, feet resting on the floor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DegeneratePoseError,
    InvalidArgumentError,
    InvalidTopologyError,
)
from .kernels import rescale_bones

_UP = np.array([0.0, 1.0, 0.0])


@dataclass(frozen=True)
class SkeletonTopology:
    """Rooted joint tree plus the per-skeleton constants preprocessing needs.

    ``parent_index[0]`` is -1 (root).  ``orientation_joint_ids`` is the
    (left hip, right hip, left shoulder, right shoulder) quadruple used to
    measure facing; ``reference_bone_lengths``/``rest_directions`` are
    per-joint (root entries unused) and drive bone-length normalization and
    the 6D rotation channels.
    """

    joint_count: int
    parent_index: np.ndarray
    joint_names: tuple[str, ...]
    foot_joint_ids: tuple[int, ...]
    orientation_joint_ids: tuple[int, int, int, int] | None = None
    reference_bone_lengths: np.ndarray | None = None
    rest_directions: np.ndarray | None = None

    def __post_init__(self):
        parents = np.asarray(self.parent_index, dtype=np.int64)
        object.__setattr__(self, "parent_index", parents)
        j = self.joint_count
        if j < 1 or parents.shape != (j,):
            raise InvalidTopologyError("parent_index length must equal joint_count")
        if parents[0] not in (-1, 0):
            raise InvalidTopologyError("joint 0 must be the root")
        if len(self.joint_names) != j:
            raise InvalidTopologyError("joint_names length must equal joint_count")
        for f in self.foot_joint_ids:
            if not 0 <= f < j:
                raise InvalidTopologyError(f"foot joint {f} out of range")
        # every joint must reach the root without cycles
        for start in range(1, j):
            seen = set()
            cur = start
            while cur != 0:
                if cur in seen or not 0 <= cur < j:
                    raise InvalidTopologyError(f"joint {start} does not reach root")
                seen.add(cur)
                cur = int(parents[cur])
        if self.reference_bone_lengths is not None:
            ref = np.asarray(self.reference_bone_lengths, dtype=np.float64)
            if ref.shape != (j,):
                raise InvalidTopologyError("reference_bone_lengths must be per-joint")
            object.__setattr__(self, "reference_bone_lengths", ref)
        if self.rest_directions is not None:
            rd = np.asarray(self.rest_directions, dtype=np.float64)
            if rd.shape != (j, 3):
                raise InvalidTopologyError("rest_directions must be (J, 3)")
            object.__setattr__(self, "rest_directions", rd)

    def topological_order(self) -> np.ndarray:
        """Non-root joints ordered parents-before-children."""
        order = []
        placed = {0}
        remaining = set(range(1, self.joint_count))
        while remaining:
            progress = False
            for jnt in sorted(remaining):
                if int(self.parent_index[jnt]) in placed:
                    order.append(jnt)
                    placed.add(jnt)
                    remaining.discard(jnt)
                    progress = True
                    break
            if not progress:
                raise InvalidTopologyError("cyclic parent graph")
        return np.asarray(order, dtype=np.int64)

    def to_dict(self) -> dict:
        return {
            "joint_count": self.joint_count,
            "parent_index": [int(p) for p in self.parent_index],
            "joint_names": list(self.joint_names),
            "foot_joint_ids": list(self.foot_joint_ids),
            "orientation_joint_ids": (
                list(self.orientation_joint_ids)
                if self.orientation_joint_ids is not None
                else None
            ),
            "reference_bone_lengths": (
                [float(x) for x in self.reference_bone_lengths]
                if self.reference_bone_lengths is not None
                else None
            ),
            "rest_directions": (
                [[float(x) for x in row] for row in self.rest_directions]
                if self.rest_directions is not None
                else None
            ),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SkeletonTopology":
        return cls(
            joint_count=d["joint_count"],
            parent_index=np.asarray(d["parent_index"], dtype=np.int64),
            joint_names=tuple(d["joint_names"]),
            foot_joint_ids=tuple(d["foot_joint_ids"]),
            orientation_joint_ids=(
                tuple(d["orientation_joint_ids"])
                if d.get("orientation_joint_ids") is not None
                else None
            ),
            reference_bone_lengths=(
                np.asarray(d["reference_bone_lengths"], dtype=np.float64)
                if d.get("reference_bone_lengths") is not None
                else None
            ),
            rest_directions=(
                np.asarray(d["rest_directions"], dtype=np.float64)
                if d.get("rest_directions") is not None
                else None
            ),
        )


def _topology_from_rest(
    names,
    parents,
    rest_positions,
    foot_joint_ids,
    orientation_joint_ids,
) -> SkeletonTopology:
    rest = np.asarray(rest_positions, dtype=np.float64)
    parents = np.asarray(parents, dtype=np.int64)
    j = len(names)
    ref = np.zeros(j)
    dirs = np.zeros((j, 3))
    dirs[0] = _UP
    for k in range(1, j):
        off = rest[k] - rest[parents[k]]
        ref[k] = float(np.linalg.norm(off))
        dirs[k] = off / ref[k] if ref[k] > 0 else _UP
    return SkeletonTopology(
        joint_count=j,
        parent_index=parents,
        joint_names=tuple(names),
        foot_joint_ids=tuple(foot_joint_ids),
        orientation_joint_ids=orientation_joint_ids,
        reference_bone_lengths=ref,
        rest_directions=dirs,
    )


_TOY_NAMES = ("pelvis", "l_hip", "r_hip", "chest", "l_hand", "r_hand", "l_foot", "r_foot")
_TOY_PARENTS = (-1, 0, 0, 0, 3, 3, 1, 2)
_TOY_REST = (
    (0.00, 0.90, 0.00),   # pelvis
    (0.12, 0.85, 0.00),   # l_hip
    (-0.12, 0.85, 0.00),  # r_hip
    (0.00, 1.25, 0.00),   # chest
    (0.35, 1.35, 0.00),   # l_hand
    (-0.35, 1.35, 0.00),  # r_hand
    (0.12, 0.00, 0.00),   # l_foot
    (-0.12, 0.00, 0.00),  # r_foot
)


def toy_skeleton() -> SkeletonTopology:
    """8-joint stick figure used by the procedural corpus (feature dim 95)."""
    return _topology_from_rest(
        _TOY_NAMES,
        _TOY_PARENTS,
        _TOY_REST,
        foot_joint_ids=(6, 7),
        orientation_joint_ids=(1, 2, 1, 2),
    )


_SMPL_NAMES = (
    "pelvis", "l_hip", "r_hip", "spine1", "l_knee", "r_knee", "spine2",
    "l_ankle", "r_ankle", "spine3", "l_foot", "r_foot", "neck", "l_collar",
    "r_collar", "head", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow",
    "l_wrist", "r_wrist", "l_hand", "r_hand",
)
_SMPL_PARENTS = (
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18,
    19, 20, 21,
)
_SMPL_REST = (
    (0.00, 0.94, 0.00), (0.09, 0.87, 0.00), (-0.09, 0.87, 0.00),
    (0.00, 1.05, 0.00), (0.10, 0.49, 0.00), (-0.10, 0.49, 0.00),
    (0.00, 1.19, 0.00), (0.10, 0.08, 0.00), (-0.10, 0.08, 0.00),
    (0.00, 1.26, 0.00), (0.12, 0.02, 0.12), (-0.12, 0.02, 0.12),
    (0.00, 1.47, 0.00), (0.07, 1.40, 0.00), (-0.07, 1.40, 0.00),
    (0.00, 1.57, 0.00), (0.17, 1.42, 0.00), (-0.17, 1.42, 0.00),
    (0.43, 1.42, 0.00), (-0.43, 1.42, 0.00), (0.68, 1.42, 0.00),
    (-0.68, 1.42, 0.00), (0.77, 1.42, 0.00), (-0.77, 1.42, 0.00),
)


def smpl24_skeleton() -> SkeletonTopology:
    """SMPL-style 24-joint skeleton; dropping the two hand leaves gives the
    22-joint layout whose feature dimension is 263."""
    return _topology_from_rest(
        _SMPL_NAMES,
        _SMPL_PARENTS,
        _SMPL_REST,
        foot_joint_ids=(7, 8, 10, 11),
        orientation_joint_ids=(1, 2, 16, 17),
    )


SMPL_HAND_JOINT_IDS = (22, 23)


@dataclass
class MotionSequence:
    """n frames of 3D joint positions at a fixed frame rate."""

    frames: np.ndarray  # (n, J, 3) float64
    fps: float
    topology: SkeletonTopology

    def __post_init__(self):
        frames = np.asarray(self.frames, dtype=np.float64)
        if frames.ndim != 3 or frames.shape[1:] != (self.topology.joint_count, 3):
            raise InvalidArgumentError(
                f"frames must be (n, {self.topology.joint_count}, 3), got {frames.shape}"
            )
        if frames.shape[0] < 1:
            raise InvalidArgumentError("need at least one frame")
        if not np.isfinite(frames).all():
            raise InvalidArgumentError("frames contain non-finite values")
        if self.fps <= 0:
            raise InvalidArgumentError("fps must be positive")
        self.frames = frames

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


def rot_y(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def facing_angle(pose: np.ndarray, topology: SkeletonTopology) -> float:
    """Yaw of the body's forward direction; 0 means facing +Z.

    Raises DegeneratePoseError when the hip/shoulder axis projects to
    (almost) nothing in the ground plane.
    """
    if topology.orientation_joint_ids is None:
        return 0.0
    lh, rh, ls, rs = topology.orientation_joint_ids
    across = (pose[lh] - pose[rh]) + (pose[ls] - pose[rs])
    forward = np.cross(across, _UP)  # lies in the XZ plane
    norm = float(np.linalg.norm(forward))
    if norm < 1e-6:
        raise DegeneratePoseError("facing direction undefined for this pose")
    forward /= norm
    return float(np.arctan2(forward[0], forward[2]))


def downsample(seq: MotionSequence, dst_fps: float) -> MotionSequence:
    """Drop frames to reach dst_fps, keeping indices round(i * src/dst).

    Rounding is half-up, so frame 0 is always kept and kept indices are
    strictly increasing.
    """
    if dst_fps <= 0 or dst_fps > seq.fps:
        raise InvalidArgumentError(
            f"dst_fps must be in (0, {seq.fps}], got {dst_fps}"
        )
    if dst_fps == seq.fps:
        return MotionSequence(seq.frames.copy(), seq.fps, seq.topology)
    ratio = seq.fps / dst_fps
    n = seq.n_frames
    count = int(np.ceil(n / ratio)) + 2
    idx = np.floor(np.arange(count) * ratio + 0.5).astype(np.int64)
    idx = idx[idx < n]
    return MotionSequence(seq.frames[idx].copy(), dst_fps, seq.topology)


def drop_joints(seq: MotionSequence, keep) -> MotionSequence:
    """Restrict to a subtree of joints, re-indexing the topology.

    ``keep`` must contain the root and the parent of every kept joint.
    """
    keep = [int(k) for k in keep]
    top = seq.topology
    if len(set(keep)) != len(keep):
        raise InvalidTopologyError("keep list contains duplicates")
    keep_set = set(keep)
    if 0 not in keep_set:
        raise InvalidTopologyError("keep must contain the root joint")
    for j in keep:
        if not 0 <= j < top.joint_count:
            raise InvalidTopologyError(f"joint {j} out of range")
        if j != 0 and int(top.parent_index[j]) not in keep_set:
            raise InvalidTopologyError(
                f"keeping joint {j} but not its parent breaks the tree"
            )
    new_index = {old: new for new, old in enumerate(keep)}
    parents = np.array(
        [-1 if j == 0 else new_index[int(top.parent_index[j])] for j in keep],
        dtype=np.int64,
    )
    orient = None
    if top.orientation_joint_ids is not None and all(
        j in keep_set for j in top.orientation_joint_ids
    ):
        orient = tuple(new_index[j] for j in top.orientation_joint_ids)
    new_top = SkeletonTopology(
        joint_count=len(keep),
        parent_index=parents,
        joint_names=tuple(top.joint_names[j] for j in keep),
        foot_joint_ids=tuple(new_index[j] for j in top.foot_joint_ids if j in keep_set),
        orientation_joint_ids=orient,
        reference_bone_lengths=(
            top.reference_bone_lengths[keep]
            if top.reference_bone_lengths is not None
            else None
        ),
        rest_directions=(
            top.rest_directions[keep] if top.rest_directions is not None else None
        ),
    )
    return MotionSequence(seq.frames[:, keep].copy(), seq.fps, new_top)


def normalize(seq: MotionSequence) -> MotionSequence:
    """Canonical pose frame: reference bone lengths held constant across
    frames, frame-0 root over the origin, frame-0 facing +Z, feet on y=0.

    Idempotent, and invariant to rigid translations and rotations about the
    vertical axis of the input.
    """
    top = seq.topology
    frames = seq.frames

    if top.reference_bone_lengths is not None:
        ref = top.reference_bone_lengths
    else:
        diffs = frames[:, 1:] - frames[:, top.parent_index[1:]]
        ref = np.concatenate([[0.0], np.median(np.linalg.norm(diffs, axis=2), axis=0)])
    if top.rest_directions is not None:
        dirs = top.rest_directions
    else:
        d0 = frames[0, 1:] - frames[0, top.parent_index[1:]]
        n0 = np.linalg.norm(d0, axis=1, keepdims=True)
        dirs = np.concatenate([[_UP], np.where(n0 > 1e-12, d0 / np.maximum(n0, 1e-12), _UP)])
    order = top.topological_order()
    frames = rescale_bones(frames, top.parent_index, order, ref, dirs)

    # root of frame 0 to the origin (ground plane only)
    shift = frames[0, 0].copy()
    shift[1] = 0.0
    frames = frames - shift

    theta = facing_angle(frames[0], top)
    if abs(theta) > 0:
        frames = frames @ rot_y(-theta).T

    feet = list(top.foot_joint_ids) or list(range(top.joint_count))
    frames = frames.copy()
    frames[:, :, 1] -= frames[:, feet, 1].min()

    return MotionSequence(frames, seq.fps, top)
