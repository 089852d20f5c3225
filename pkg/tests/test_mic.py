import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from kinemic.errors import (
    EmptySequenceError,
    InvalidArgumentError,
    UndefinedSimilarityError,
)
from kinemic.mic import (
    AttentionTrace,
    MicEncoder,
    MinedWindow,
    dww,
    encode_latent,
    extract_window,
    mine_window,
)
from tests.conftest import random_feature_sequence


@pytest.fixture()
def mic():
    torch.manual_seed(0)
    return MicEncoder(input_dim=8, hidden=6, latent_dim=4)


class TestAttentionTrace:
    def test_valid(self):
        AttentionTrace(np.array([0.25, 0.25, 0.5]))

    def test_rejects_bad_sum(self):
        with pytest.raises(InvalidArgumentError):
            AttentionTrace(np.array([0.5, 0.6]))

    def test_rejects_negative(self):
        with pytest.raises(InvalidArgumentError):
            AttentionTrace(np.array([1.5, -0.5]))


class TestEncoder:
    def test_single_frame_gets_unit_attention(self, mic):
        latent, trace = encode_latent(mic, torch.randn(1, 8))
        assert np.allclose(trace.weights, [1.0])
        assert latent.shape == (4,)

    def test_scorer_is_position_free(self, mic):
        # identical recurrent states must receive identical attention
        states = torch.randn(1, 1, 12).repeat(1, 9, 1)
        weights = mic.attention_weights(states, torch.ones(1, 9, dtype=torch.bool))
        assert torch.allclose(weights, torch.full((1, 9), 1.0 / 9.0), atol=1e-7)

    def test_constant_input_near_uniform(self, mic):
        # recurrent transients keep this from being exactly uniform; the
        # attention head itself adds no positional preference
        tokens = torch.randn(1, 8).repeat(16, 1)
        _, trace = encode_latent(mic, tokens)
        assert trace.weights.max() / trace.weights.min() < 1.5

    def test_matches_unrolled_recurrence_oracle(self, mic):
        torch.manual_seed(5)
        tokens = torch.randn(7, 8)
        latent, trace = encode_latent(mic, tokens)

        def gru_direction(xs):
            p = dict(mic.gru.named_parameters())
            w_ih, w_hh = p["weight_ih_l0"], p["weight_hh_l0"]
            b_ih, b_hh = p["bias_ih_l0"], p["bias_hh_l0"]
            return _unroll(xs, w_ih, w_hh, b_ih, b_hh)

        def gru_reverse(xs):
            p = dict(mic.gru.named_parameters())
            w_ih, w_hh = p["weight_ih_l0_reverse"], p["weight_hh_l0_reverse"]
            b_ih, b_hh = p["bias_ih_l0_reverse"], p["bias_hh_l0_reverse"]
            return _unroll(xs, w_ih, w_hh, b_ih, b_hh)

        def _unroll(xs, w_ih, w_hh, b_ih, b_hh):
            h = torch.zeros(6)
            states = []
            for x in xs:
                gi = w_ih @ x + b_ih
                gh = w_hh @ h + b_hh
                r = torch.sigmoid(gi[0:6] + gh[0:6])
                z = torch.sigmoid(gi[6:12] + gh[6:12])
                n = torch.tanh(gi[12:18] + r * gh[12:18])
                h = (1 - z) * n + z * h
                states.append(h)
            return torch.stack(states)

        fwd = gru_direction(list(tokens))
        bwd = gru_reverse(list(reversed(list(tokens)))).flip(0)
        states = torch.cat([fwd, bwd], dim=1)
        scores = mic.attn_score(torch.tanh(mic.attn_proj(states))).squeeze(-1)
        weights = torch.softmax(scores, dim=0)
        expected_latent = mic.out(weights @ states)
        assert np.allclose(trace.weights, weights.detach().numpy(), atol=1e-5)
        assert torch.allclose(latent, expected_latent, atol=1e-5)

    def test_padding_tail_garbage_invariance(self, mic):
        tokens = torch.randn(2, 10, 8)
        mask = torch.zeros(2, 10, dtype=torch.bool)
        mask[:, :6] = True
        latents_a, weights_a = mic(tokens, mask)
        tokens_b = tokens.clone()
        tokens_b[:, 6:] = 123.0
        latents_b, weights_b = mic(tokens_b, mask)
        assert torch.equal(latents_a, latents_b)
        assert torch.equal(weights_a[:, :6], weights_b[:, :6])
        assert torch.equal(weights_a[:, 6:], torch.zeros(2, 4))

    def test_all_masked_rejected(self, mic):
        with pytest.raises(EmptySequenceError):
            mic(torch.randn(1, 4, 8), torch.zeros(1, 4, dtype=torch.bool))

    def test_non_prefix_mask_rejected(self, mic):
        mask = torch.tensor([[True, False, True, False]])
        with pytest.raises(InvalidArgumentError):
            mic(torch.randn(1, 4, 8), mask)

    def test_weights_sum_to_one(self, mic):
        tokens = torch.randn(3, 12, 8)
        mask = torch.zeros(3, 12, dtype=torch.bool)
        for i, n in enumerate((12, 5, 1)):
            mask[i, :n] = True
        _, weights = mic(tokens, mask)
        assert torch.allclose(weights.sum(dim=1), torch.ones(3), atol=1e-5)
        assert (weights >= 0).all()


class TestMineWindow:
    def test_uniform_tie_breaks_leftmost(self):
        trace = AttentionTrace(np.full(10, 0.1))
        window = mine_window(trace, 4)
        assert (window.start, window.length) == (0, 4)

    def test_single_spike(self):
        w = np.zeros(10)
        w[6] = 1.0
        window = mine_window(AttentionTrace(w), 3)
        assert window.start == 4
        assert window.score == pytest.approx(1.0)

    def test_clamps_to_whole_sequence(self):
        trace = AttentionTrace(np.full(5, 0.2))
        window = mine_window(trace, 9)
        assert (window.start, window.length, window.score) == (0, 5, 1.0)

    def test_invalid_args(self):
        trace = AttentionTrace(np.full(4, 0.25))
        with pytest.raises(InvalidArgumentError):
            mine_window(trace, 0)

    @given(
        weights=st.lists(
            st.floats(0.0, 1.0, allow_nan=False), min_size=1, max_size=64
        ),
        m_frac=st.floats(0.0, 1.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_matches_exhaustive_enumeration(self, weights, m_frac):
        raw = np.asarray(weights) + 1e-9
        raw = raw / raw.sum()
        n = len(raw)
        m = max(1, int(round(m_frac * n)))
        window = mine_window(AttentionTrace(raw), m)
        if m >= n:
            assert (window.start, window.length) == (0, n)
            return
        best_i, best = 0, None
        for i in range(n - m + 1):
            s = 0.0
            for k in range(i, i + m):
                s = s + float(raw[k])
            if best is None or s > best:
                best, best_i = s, i
        assert window.start == best_i


class TestExtractWindow:
    def test_identity_window(self):
        feat = random_feature_sequence(6)
        out = extract_window(feat, MinedWindow(start=0, length=6, score=1.0))
        assert np.array_equal(out.data, feat.data)

    def test_slice_exact(self):
        feat = random_feature_sequence(10)
        feat.provenance = {"source_id": "src-7"}
        out = extract_window(feat, MinedWindow(start=5, length=3, score=0.4))
        assert np.array_equal(out.data, feat.data[5:8])
        assert out.provenance["window_source"] == "src-7"
        assert out.provenance["window_start"] == 5

    def test_out_of_range(self):
        feat = random_feature_sequence(4)
        with pytest.raises(InvalidArgumentError):
            extract_window(feat, MinedWindow(start=3, length=4, score=0.1))

    def test_provenance_survives_serialization(self, tmp_path):
        from kinemic.datasets import load_captioned, save_captioned, CaptionedSample

        feat = random_feature_sequence(10)
        feat.provenance = {"source_id": "src-1"}
        window = extract_window(feat, MinedWindow(start=2, length=4, score=0.5))
        sample = CaptionedSample(motion=window, caption="c", source_id="w-0")
        save_captioned(tmp_path / "d", [sample])
        back = load_captioned(tmp_path / "d")[0]
        assert back.motion.provenance["window_start"] == 2
        assert back.motion.provenance["window_source"] == "src-1"


class TestDww:
    def test_identical_latents(self):
        z = torch.tensor([1.0, 2.0, 3.0])
        assert dww(z, z) == pytest.approx(1.0)

    def test_opposite_latents(self):
        z = torch.tensor([1.0, -2.0, 0.5])
        assert dww(z, -z) == pytest.approx(0.0)

    def test_orthogonal_latents(self):
        assert dww(torch.tensor([1.0, 0.0]), torch.tensor([0.0, 1.0])) == 0.5

    def test_zero_norm_rejected(self):
        with pytest.raises(UndefinedSimilarityError):
            dww(torch.zeros(3), torch.ones(3))

    @given(st.integers(0, 9999))
    @settings(max_examples=200, deadline=None)
    def test_bounds(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=6)
        b = rng.normal(size=6)
        value = dww(a, b)
        assert 0.0 <= value <= 1.0

    def test_monotone_in_cosine(self):
        base = np.array([1.0, 0.0])
        values = [
            dww(base, np.array([np.cos(t), np.sin(t)]))
            for t in np.linspace(0, np.pi, 9)
        ]
        assert values == sorted(values, reverse=True)

    def test_no_gradient_leaks(self, mic):
        tokens = torch.randn(1, 6, 8)
        mask = torch.ones(1, 6, dtype=torch.bool)
        latents, _ = mic(tokens, mask)
        value = dww(latents[0], latents[0] + 1.0)
        assert isinstance(value, float)
