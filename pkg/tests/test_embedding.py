"""Tests for the offline feature-hash embedder and the embed_texts contract."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codealign.embedding import HashingEmbedder, embed_texts, fnv1a_64
from codealign.errors import EmptyTextError

from oracle_fnv import reference_embedding, reference_fnv1a_64


class TestHashingEmbedder:
    def test_identical_texts_identical_vectors(self):
        emb = HashingEmbedder(384)
        vecs = embed_texts(["abc", "abc"], emb)
        assert np.array_equal(vecs[0], vecs[1])

    def test_empty_text_rejected(self):
        emb = HashingEmbedder(384)
        with pytest.raises(EmptyTextError):
            embed_texts([""], emb)

    def test_whitespace_only_rejected(self):
        emb = HashingEmbedder(384)
        with pytest.raises(EmptyTextError):
            embed_texts(["   \t\n"], emb)

    def test_punctuation_only_rejected(self):
        emb = HashingEmbedder(384)
        with pytest.raises(EmptyTextError) as exc_info:
            embed_texts(["!!! --- ???"], emb)
        assert exc_info.value.index == 0

    def test_hello_world_nonzero_coordinates(self):
        # the normative example: exactly the two hashed buckets are nonzero
        emb = HashingEmbedder(384)
        vec = embed_texts(["hello world"], emb)[0]
        h_hello = reference_fnv1a_64(b"hello")
        h_world = reference_fnv1a_64(b"world")
        expected_idx = sorted({h_hello % 384, h_world % 384})
        assert sorted(np.nonzero(vec)[0].tolist()) == expected_idx
        assert np.linalg.norm(vec) == pytest.approx(1.0, abs=1e-9)
        for h in (h_hello, h_world):
            sign = 1.0 if (h >> 63) == 0 else -1.0
            assert np.sign(vec[h % 384]) == sign or vec[h % 384] == 0

    def test_matches_reference_oracle(self):
        emb = HashingEmbedder(384)
        corpus = [
            "hello world",
            "The Quick Brown Fox Jumps Over the Lazy Dog",
            "def forward(self, x): return x + 1",
            "learning_rate = 0.001  # SGD momentum 0.9",
            "café déjà-vu naïve ünïcode",
            "a a a a a repeated tokens",
            "x" * 500,
        ]
        vecs = embed_texts(corpus, emb)
        for text, vec in zip(corpus, vecs):
            ref = reference_embedding(text, 384)
            assert ref is not None
            assert np.max(np.abs(vec - np.asarray(ref))) <= 1e-9

    def test_fnv_against_reference(self):
        for token in (b"", b"a", b"hello", "héllo".encode("utf-8"), b"0" * 64):
            assert fnv1a_64(token) == reference_fnv1a_64(token)

    def test_dim_respected(self):
        emb = HashingEmbedder(17)
        vec = embed_texts(["some words here"], emb)[0]
        assert vec.shape == (17,)

    def test_fingerprint(self):
        assert HashingEmbedder(384).fingerprint == "fnv1a-hash:384:1"
        assert HashingEmbedder(64).fingerprint == "fnv1a-hash:64:1"

    @settings(max_examples=80, deadline=None)
    @given(st.text(min_size=1, max_size=120))
    def test_pure_function_of_text(self, text):
        emb = HashingEmbedder(96)
        try:
            a = embed_texts([text], emb)
        except EmptyTextError:
            return
        b = embed_texts([text], HashingEmbedder(96))
        assert np.array_equal(a, b)
        assert np.linalg.norm(a[0]) == pytest.approx(1.0, abs=1e-6)

    def test_batch_order_preserved(self):
        emb = HashingEmbedder(384)
        batch = embed_texts(["alpha beta", "gamma delta"], emb)
        singles = [embed_texts(["alpha beta"], emb)[0],
                   embed_texts(["gamma delta"], emb)[0]]
        assert np.array_equal(batch[0], singles[0])
        assert np.array_equal(batch[1], singles[1])

    def test_empty_batch(self):
        assert embed_texts([], HashingEmbedder(8)).shape == (0, 8)
