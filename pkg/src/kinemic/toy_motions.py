"""Parametric joint-offset generators for the toy action classes.

Class motions rotate bones about their parents (legs swinging, arms
raising), so the signal survives bone-length normalization; whole-body
displacement (bobbing, rising on the toes) rides on the root.  Frequency,
angular amplitude, phase, style and body side vary per sample within a
class band.  Offsets are world-space displacements added to the rest pose.
"""

from __future__ import annotations

import numpy as np

# joint ids of the toy skeleton
PELVIS, L_HIP, R_HIP, CHEST, L_HAND, R_HAND, L_FOOT, R_FOOT = range(8)

CLASS_BANDS = {
    "run on spot": {"freq": (1.8, 2.8), "amp": (0.5, 1.0)},
    "side kick": {"freq": (1.2, 2.1), "amp": (0.6, 1.2)},
    "stretch": {"freq": (0.8, 1.4), "amp": (0.7, 1.3)},
}

_FIDGET_JOINTS = (CHEST, L_HAND, R_HAND, L_FOOT, R_FOOT)

# the joint coordinate carrying each class's dominant oscillation, used by
# frequency-recovery checks: (joint, axis); side-dependent entries use the
# left joint for side=+1
PROBE_CHANNEL = {
    "run on spot": (L_FOOT, 2),
    "side kick": (L_FOOT, 0),
    "stretch": (L_HAND, 1),
}


def idle_sway(
    length: int, joint_count: int, fps: float, amp: float, rng: np.random.Generator
) -> np.ndarray:
    """Small class-agnostic drift present in every sequence."""
    t = np.arange(length) / fps
    freqs = rng.uniform(0.2, 0.5, size=(joint_count, 3))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=(joint_count, 3))
    amps = rng.uniform(0.3, 1.0, size=(joint_count, 3)) * amp
    return amps * np.sin(
        2.0 * np.pi * freqs * t[:, None, None] + phases
    )


def _rot_x(theta: np.ndarray) -> np.ndarray:
    """(n, 3, 3) rotation matrices about the x axis."""
    c, s = np.cos(theta), np.sin(theta)
    out = np.zeros((len(theta), 3, 3))
    out[:, 0, 0] = 1.0
    out[:, 1, 1] = c
    out[:, 1, 2] = -s
    out[:, 2, 1] = s
    out[:, 2, 2] = c
    return out


def _rot_z(theta: np.ndarray) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    out = np.zeros((len(theta), 3, 3))
    out[:, 2, 2] = 1.0
    out[:, 0, 0] = c
    out[:, 0, 1] = -s
    out[:, 1, 0] = s
    out[:, 1, 1] = c
    return out


def _swing(offsets, topology, joint, rots):
    """Re-point bone parent->joint by per-frame rotations of its rest offset."""
    parent = int(topology.parent_index[joint])
    rest = topology.reference_bone_lengths[joint] * topology.rest_directions[joint]
    moved = np.einsum("nij,j->ni", rots, rest)
    offsets[:, joint] += moved - rest
    return offsets


def nuisance_params(rng: np.random.Generator) -> dict:
    """Per-sample coordination/posture/fidget draws shared by all classes.

    These dimensions vary freely within every class, so a handful of shots
    cannot pin down which variation is class-relevant.  The two fidget
    channels put oscillation energy on a random joint, in a random plane, at
    a random frequency, which defeats classification by marginal
    joint-energy statistics alone.
    """
    fidgets = []
    for _ in range(2):
        fidgets.append(
            {
                "joint": int(_FIDGET_JOINTS[int(rng.integers(len(_FIDGET_JOINTS)))]),
                "plane": ("x", "z")[int(rng.integers(2))],
                "freq": float(rng.uniform(0.5, 2.8)),
                "amp": float(rng.uniform(0.15, 0.6)),
                "phase": float(rng.uniform(0.0, 2.0 * np.pi)),
            }
        )
    return {
        "arm_ratio": float(rng.uniform(0.15, 0.9)),
        "arm_plane": ("x", "z")[int(rng.integers(2))],
        "off_phase": float(rng.uniform(0.75 * np.pi, 1.25 * np.pi)),
        "lean": float(rng.uniform(-0.2, 0.2)),
        "arm_base": float(rng.uniform(-0.3, 0.9)),
        "freq_jitter": float(rng.uniform(0.85, 1.15)),
        "leg_plane_mix": float(rng.uniform(0.0, 0.7)),
        "fidgets": fidgets,
    }


def _plane_rot(plane: str, theta: np.ndarray) -> np.ndarray:
    return _rot_x(theta) if plane == "x" else _rot_z(theta)


def apply_class_offsets(label: str, t: np.ndarray, topology, params: dict) -> np.ndarray:
    offsets = np.zeros((len(t), topology.joint_count, 3))
    w = 2.0 * np.pi * params["freq"] * t + params["phase"]
    a = params["amp"]  # angular amplitude, radians
    s = params["style"]
    side = params.get("side", 1)
    arm_ratio = params.get("arm_ratio", 0.5)
    arm_plane = params.get("arm_plane", "x")
    off = params.get("off_phase", np.pi)
    lean = params.get("lean", 0.0)
    arm_base = params.get("arm_base", 0.0)
    fj = params.get("freq_jitter", 1.0)
    w2 = w * fj  # secondary joint groups run slightly off-frequency
    ones = np.ones_like(w)

    # every class shares the others' joint groups at nuisance amplitudes, so
    # which-joints-move alone cannot separate classes; the discriminative
    # cues are the leg pattern (antiphase sinusoid vs one-sided burst vs
    # slow weight shift) and its frequency band
    if label == "run on spot":
        mix = params.get("leg_plane_mix", 0.0)
        for foot_j, ph in ((L_FOOT, 0.0), (R_FOOT, off)):
            theta = a * np.sin(w + ph)
            _swing(offsets, topology, foot_j,
                   _rot_z(mix * theta) @ _rot_x((1.0 - mix) * theta))
        arm = arm_ratio * a * s
        _swing(offsets, topology, L_HAND,
               _plane_rot(arm_plane, arm * np.sin(w2 + off)) @ _rot_z(arm_base * ones))
        _swing(offsets, topology, R_HAND,
               _plane_rot(arm_plane, arm * np.sin(w2)) @ _rot_z(-arm_base * ones))
        _swing(offsets, topology, CHEST, _rot_z(lean * ones))
        offsets[:, :, 1] += 0.03 * s * np.sin(2.0 * w)[:, None]  # body bob
    elif label == "side kick":
        kick = np.maximum(0.0, np.sin(w)) ** (1.0 + s)  # style softens bursts
        foot, other = (L_FOOT, R_FOOT) if side > 0 else (R_FOOT, L_FOOT)
        _swing(offsets, topology, foot, _rot_z(side * a * kick))
        _swing(offsets, topology, other, _rot_x(0.4 * a * np.sin(w2 + off)))
        _swing(offsets, topology, CHEST,
               _rot_z(-side * 0.15 * a * s * kick + lean))
        arm = 0.4 * arm_ratio * a * s
        _swing(offsets, topology, L_HAND,
               _plane_rot(arm_plane, arm * np.sin(w2 + off)) @ _rot_z(arm_base * ones))
        _swing(offsets, topology, R_HAND,
               _plane_rot(arm_plane, arm * np.sin(w2)) @ _rot_z(-arm_base * ones))
    elif label == "stretch":
        rise = 0.5 + 0.5 * np.sin(w)
        _swing(offsets, topology, L_HAND, _rot_z(a * s * rise + arm_base))
        _swing(offsets, topology, R_HAND, _rot_z(-(a * s * rise) - arm_base))
        _swing(offsets, topology, L_FOOT,
               _rot_x(0.3 * arm_ratio * a * np.sin(w2)))
        _swing(offsets, topology, R_FOOT,
               _rot_x(0.3 * arm_ratio * a * np.sin(w2 + off)))
        _swing(offsets, topology, CHEST, _rot_z(lean * ones))
        offsets[:, :, 1] += 0.03 * rise[:, None]  # rise on the toes
    else:
        raise KeyError(f"no generator for class {label!r}")

    for fid in params.get("fidgets", ()):
        theta = fid["amp"] * np.sin(2.0 * np.pi * fid["freq"] * t + fid["phase"])
        _swing(offsets, topology, fid["joint"], _plane_rot(fid["plane"], theta))
    return offsets


def probe_signal(label: str, positions: np.ndarray, side: int = 1) -> np.ndarray:
    """1D trajectory carrying the class's dominant oscillation."""
    joint, axis = PROBE_CHANNEL[label]
    if label == "side kick" and side < 0:
        joint = R_FOOT
    return positions[:, joint, axis]


def dominant_frequency(signal: np.ndarray, fps: float, f_lo=0.4, f_hi=3.5) -> float:
    """Least-squares sinusoid fit over a dense frequency grid.

    The basis includes a quadratic trend so slow envelope bumps do not
    swamp the oscillation; more robust than an FFT peak for short windows
    with fractional cycles.
    """
    x = signal - signal.mean()
    n = len(x)
    t = np.arange(n) / fps
    tc = t - t.mean()
    grid = np.arange(f_lo, f_hi, 0.005)
    trend = np.stack([np.ones(n), tc, tc * tc], axis=1)
    power = np.empty(len(grid))
    for i, f in enumerate(grid):
        c = np.cos(2.0 * np.pi * f * t)
        sN = np.sin(2.0 * np.pi * f * t)
        basis = np.concatenate([np.stack([c, sN], axis=1), trend], axis=1)
        coef, *_ = np.linalg.lstsq(basis, x, rcond=None)
        power[i] = coef[0] ** 2 + coef[1] ** 2
    return float(grid[int(np.argmax(power))])
