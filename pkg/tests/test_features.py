import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kinemic.errors import InvalidArgumentError, InvalidDataError, TooShortError
from kinemic.features import (
    FeatureLayout,
    FeatureSequence,
    FeatureStats,
    from_features,
    layout_for_dim,
    to_features,
)
from kinemic.motion import MotionSequence, normalize, toy_skeleton
from tests.test_motion import _toy_sequence


class TestLayout:
    def test_humanoid_22_is_263(self):
        assert FeatureLayout(22).total_dim == 263

    def test_toy_8_is_95(self):
        lay = FeatureLayout(8)
        assert (lay.root_dim, lay.ric_dim, lay.rot_dim, lay.vel_dim,
                lay.contact_dim) == (4, 21, 42, 24, 4)
        assert lay.total_dim == 95

    @given(j=st.integers(2, 100))
    def test_dimension_formula(self, j):
        lay = FeatureLayout(j)
        assert lay.total_dim == 4 + (j - 1) * 3 + (j - 1) * 6 + j * 3 + 4
        assert layout_for_dim(lay.total_dim).joint_count == j

    def test_rejects_single_joint(self):
        with pytest.raises(InvalidArgumentError):
            FeatureLayout(1)

    def test_layout_for_bad_dim(self):
        with pytest.raises(InvalidArgumentError):
            layout_for_dim(100)

    def test_slices_partition(self):
        lay = FeatureLayout(8)
        spans = [lay.root_slice, lay.ric_slice, lay.rot_slice, lay.vel_slice,
                 lay.contact_slice]
        covered = []
        for sl in spans:
            covered.extend(range(sl.start, sl.stop))
        assert covered == list(range(lay.total_dim))


class TestToFeatures:
    def test_dimension(self):
        feat = to_features(normalize(_toy_sequence()))
        assert feat.dim == 95
        assert feat.n_frames == 50

    def test_stationary_pose(self):
        top = toy_skeleton()
        from kinemic.toy import _rest_pose

        pose = _rest_pose(top)
        seq = normalize(MotionSequence(np.tile(pose, (6, 1, 1)), 20.0, top))
        feat = to_features(seq)
        lay = feat.layout
        assert np.allclose(feat.data[:, lay.vel_slice], 0.0)
        assert np.allclose(feat.data[:, lay.contact_slice], 1.0)
        assert np.allclose(feat.data[:, 0:3], 0.0)  # no root motion

    def test_contact_thresholds_parametric(self):
        seq = normalize(_toy_sequence())
        loose = to_features(seq, contact_speed_threshold=1e9,
                            contact_height_threshold=1e9)
        strict = to_features(seq, contact_speed_threshold=0.0)
        lay = loose.layout
        assert np.all(loose.data[:, lay.contact_slice] == 1.0)
        assert np.all(strict.data[:, lay.contact_slice] == 0.0)

    def test_too_short(self):
        top = toy_skeleton()
        from kinemic.toy import _rest_pose

        seq = MotionSequence(_rest_pose(top)[None], 20.0, top)
        with pytest.raises(TooShortError):
            to_features(seq)


class TestRoundTrip:
    def test_positions_within_tolerance(self):
        seq = normalize(_toy_sequence())
        feat = to_features(seq)
        back = from_features(feat)
        assert np.abs(back.frames - seq.frames).max() < 1e-3

    def test_feature_channels_round_trip(self):
        seq = normalize(_toy_sequence())
        feat = to_features(seq)
        feat2 = to_features(from_features(feat))
        lay = feat.layout
        for sl in (lay.root_slice, lay.ric_slice, lay.vel_slice):
            assert np.abs(feat.data[:, sl] - feat2.data[:, sl]).max() < 1e-3

    def test_zero_velocity_features_static(self):
        seq = normalize(_toy_sequence(8))
        feat = to_features(seq)
        lay = feat.layout
        data = feat.data.copy()
        data[:, 0:3] = 0.0
        data[:, lay.vel_slice] = 0.0
        data[:, lay.ric_slice] = data[0, lay.ric_slice]
        data[:, 3] = data[0, 3]
        static = from_features(
            FeatureSequence(data, lay, fps=feat.fps, topology=feat.topology)
        )
        assert np.abs(np.diff(static.frames, axis=0)).max() < 1e-12

    def test_sinusoid_amplitude_preserved(self):
        from kinemic.toy import _rest_pose
        from kinemic.toy_motions import apply_class_offsets

        top = toy_skeleton()
        n, fps, amp = 40, 20.0, 0.9
        pos = np.tile(_rest_pose(top), (n, 1, 1))
        pos += apply_class_offsets(
            "side kick", np.arange(n) / fps, top,
            {"freq": 1.5, "amp": amp, "phase": np.pi / 2, "style": 1.0, "side": 1},
        )
        seq = normalize(MotionSequence(pos, fps, top))
        back = from_features(to_features(seq))
        leg = top.reference_bone_lengths[6]
        swing = back.frames[:, 6, 0] - back.frames[:, 1, 0]
        got = np.arcsin(np.clip((swing.max() - swing.min()) / leg, -1, 1))
        assert abs(got - amp) / amp < 0.02

    def test_requires_topology(self):
        feat = to_features(normalize(_toy_sequence()))
        feat.topology = None
        with pytest.raises(InvalidArgumentError):
            from_features(feat)

    def test_nonfinite_rejected(self):
        lay = FeatureLayout(8)
        data = np.zeros((3, lay.total_dim))
        data[0, 0] = np.inf
        with pytest.raises(InvalidDataError):
            FeatureSequence(data, lay)


class TestFeatureStats:
    def test_normalize_round_trip(self):
        rng = np.random.default_rng(0)
        arrays = [rng.normal(size=(10, 5)) * 3 + 1 for _ in range(4)]
        stats = FeatureStats.fit(arrays)
        x = arrays[0]
        assert np.allclose(stats.denormalize(stats.normalize(x)), x)

    def test_std_floor(self):
        stats = FeatureStats.fit([np.zeros((10, 3))])
        assert (stats.std >= 1e-3).all()

    def test_dict_round_trip(self):
        stats = FeatureStats.fit([np.random.default_rng(1).normal(size=(5, 4))])
        back = FeatureStats.from_dict(stats.to_dict())
        assert np.allclose(back.mean, stats.mean)
        assert np.allclose(back.std, stats.std)
