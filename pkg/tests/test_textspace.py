import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kinemic.errors import (
    EncoderUnavailableError,
    InvalidArgumentError,
    UndefinedSimilarityError,
)
from kinemic.textspace import (
    HashedBagOfTokensEncoder,
    SoftPairIndex,
    TextEmbedding,
    build_soft_pairs,
    cosine_sim,
    get_encoder,
    label_to_prompt,
)
from tests.conftest import make_captioned


class TestPrompts:
    def test_side_kick(self):
        assert label_to_prompt("side kick") == "a person does a side kick"

    def test_empty_label_rejected(self):
        with pytest.raises(InvalidArgumentError):
            label_to_prompt("")
        with pytest.raises(InvalidArgumentError):
            label_to_prompt("   ")

    def test_template_applied_verbatim(self):
        assert (
            label_to_prompt("running on spot")
            == "a person does a running on spot"
        )

    def test_whitespace_and_case_normalized(self):
        assert label_to_prompt("Side  KICK") == "a person does a side kick"


class TestEncoder:
    def test_deterministic(self, encoder):
        a = encoder.encode("red fox jumps high")
        b = encoder.encode("red fox jumps high")
        assert np.array_equal(a.vector, b.vector)

    def test_unit_norm(self, encoder):
        for text in ("kick", "a long sentence about motion capture retargeting"):
            assert abs(np.linalg.norm(encoder.encode(text).vector) - 1.0) < 1e-6

    def test_token_overlap_orders_similarity(self, encoder):
        anchor = encoder.encode("red fox jumps")
        related = encoder.encode("red fox sleeps")
        unrelated = encoder.encode("blue whale sings")
        assert cosine_sim(anchor, related) > cosine_sim(anchor, unrelated)

    def test_empty_text_rejected(self, encoder):
        with pytest.raises(InvalidArgumentError):
            encoder.encode("")

    def test_registry(self):
        enc = get_encoder("hashed-bow")
        assert enc.name.startswith("hashed-bow")
        with pytest.raises(EncoderUnavailableError):
            get_encoder("clip-vit-b32")

    def test_embedding_norm_validated(self):
        with pytest.raises(InvalidArgumentError):
            TextEmbedding(np.array([1.0, 1.0]))


class TestCosine:
    def test_self_similarity(self, rng):
        v = rng.normal(size=8)
        v /= np.linalg.norm(v)
        assert cosine_sim(v, v) == pytest.approx(1.0)

    def test_opposite(self, rng):
        v = rng.normal(size=8)
        assert cosine_sim(v, -v) == pytest.approx(-1.0)

    def test_hand_value(self):
        a = np.array([1.0, 0.0])
        b = np.array([1.0, 1.0]) / np.sqrt(2.0)
        assert cosine_sim(a, b) == pytest.approx(0.7071, abs=1e-4)

    def test_zero_vector_rejected(self):
        with pytest.raises(UndefinedSimilarityError):
            cosine_sim(np.zeros(4), np.ones(4))

    def test_dim_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            cosine_sim(np.ones(3), np.ones(4))


def _corpus(captions):
    return [
        make_captioned(8, caption, f"s-{i:03d}", seed=i)
        for i, caption in enumerate(captions)
    ]


class TestSoftPairs:
    def test_literal_prompt_ranks_first(self, encoder):
        source = _corpus(
            ["a person does a side kick", "cooking dinner slowly", "red fox"]
        )
        index = build_soft_pairs(["side kick"], source, k=1, encoder=encoder)
        (sid, score), = index.sources_for("side kick")
        assert sid == "s-000"
        assert score == pytest.approx(1.0, abs=1e-9)

    def test_exact_list_length(self, encoder):
        source = _corpus([f"caption word{i}" for i in range(5)])
        index = build_soft_pairs(["kick"], source, k=9, encoder=encoder)
        assert len(index.sources_for("kick")) == 5  # min(k, |source|)

    def test_truncation_warns(self, encoder, caplog):
        source = _corpus(["alpha kick", "beta kick"])
        with caplog.at_level("WARNING"):
            build_soft_pairs(["kick"], source, k=10, encoder=encoder)
        assert any("truncating" in r.message for r in caplog.records)

    def test_matches_exhaustive_sort(self, encoder, rng):
        vocab = ["kick", "jump", "spin", "walk", "red", "blue", "fast", "slow"]
        captions = [
            " ".join(rng.choice(vocab, size=3, replace=False)) for _ in range(32)
        ]
        source = _corpus(captions)
        k = 8
        index = build_soft_pairs(["kick"], source, k=k, encoder=encoder)
        prompt = encoder.encode(label_to_prompt("kick"))
        scored = sorted(
            (
                (-cosine_sim(prompt, encoder.encode(s.caption)), s.source_id)
                for s in source
            ),
        )[:k]
        expected = [sid for _, sid in scored]
        assert [sid for sid, _ in index.sources_for("kick")] == expected

    def test_order_invariance(self, encoder):
        source = _corpus(["kick one", "kick two", "jump three", "kick four"])
        a = build_soft_pairs(["kick"], source, k=3, encoder=encoder)
        b = build_soft_pairs(["kick"], source[::-1], k=3, encoder=encoder)
        assert a.pairs == b.pairs

    def test_tie_break_by_id(self, encoder):
        source = _corpus(["same kick text", "same kick text", "other thing"])
        index = build_soft_pairs(["kick"], source, k=2, encoder=encoder)
        assert [sid for sid, _ in index.sources_for("kick")] == ["s-000", "s-001"]

    def test_scores_sorted_and_bounded(self, encoder, tiny_corpus):
        sources, _, _ = tiny_corpus
        index = build_soft_pairs(
            ["side kick", "stretch"], sources, k=6, encoder=encoder
        )
        for label in index.labels:
            scores = [s for _, s in index.sources_for(label)]
            assert all(-1.0 <= s <= 1.0 for s in scores)
            assert scores == sorted(scores, reverse=True)

    def test_rebuild_byte_identical(self, encoder, tmp_path, tiny_corpus):
        sources, _, _ = tiny_corpus
        for name in ("a.json", "b.json"):
            build_soft_pairs(
                ["side kick"], sources, k=4, encoder=encoder
            ).save(tmp_path / name)
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_save_load_round_trip(self, encoder, tmp_path, tiny_corpus):
        sources, _, _ = tiny_corpus
        index = build_soft_pairs(["stretch"], sources, k=4, encoder=encoder)
        index.save(tmp_path / "idx.json")
        back = SoftPairIndex.load(tmp_path / "idx.json")
        assert back.pairs == index.pairs
        assert back.k == index.k
        assert back.encoder == index.encoder

    def test_effective_dataset_size(self, encoder, tiny_corpus):
        sources, _, _ = tiny_corpus
        labels = ["run on spot", "side kick", "stretch"]
        k = 5
        index = build_soft_pairs(labels, sources, k=k, encoder=encoder)
        shots = 10
        assert index.effective_dataset_size(shots) == (shots + k) * len(labels)

    def test_invalid_k(self, encoder):
        with pytest.raises(InvalidArgumentError):
            build_soft_pairs(["kick"], _corpus(["a kick"]), k=0, encoder=encoder)

    def test_empty_source(self, encoder):
        with pytest.raises(InvalidArgumentError):
            build_soft_pairs(["kick"], [], k=1, encoder=encoder)

    def test_unknown_label_lookup(self, encoder):
        index = build_soft_pairs(["kick"], _corpus(["a kick"]), k=1, encoder=encoder)
        with pytest.raises(InvalidArgumentError):
            index.sources_for("unknown")
