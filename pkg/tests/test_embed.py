import hashlib
import math
import re

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from umr.datamodel import Category, Document, EnhancedRecord, Modality, Query, QueryKind, Side
from umr.embed import (SilentInputError, TokenHasher, TrainConfig, TrainPair, TrainingError,
                       TwoTowerModel, embed_document, embed_query, hash_embed, infonce_loss,
                       init_model, load_checkpoint, sample_hard_negatives, save_checkpoint,
                       tokenize, train)
from umr.embed.hashing import hash_embed_many
from umr.index import VectorIndex


def reference_hash_embed(text, seed, dim):
    """Scalar reference: lowercase, split on non-alphanumerics, keyed blake2b, signed bucket sum."""
    vec = [0.0] * dim
    key = bytes((seed >> (8 * i)) & 0xFF for i in range(8))
    for tok in re.split(r"[^0-9a-z]+", text.lower()):
        if not tok:
            continue
        d = hashlib.blake2b(tok.encode(), digest_size=16, key=key).digest()
        bucket = 0
        for i in range(8):
            bucket += d[i] << (8 * i)
        bucket %= dim
        vec[bucket] += 1.0 if d[8] % 2 == 1 else -1.0
    norm = math.sqrt(sum(x * x for x in vec))
    return [x / norm for x in vec] if norm else vec


def identity_model(dim=256, seed=42):
    eye = np.eye(dim)
    return TwoTowerModel(eye.copy(), eye.copy(), 0.07, hasher_seed=seed)


# hashing ------------------------------------------------------------------

@pytest.mark.parametrize("text, tokens", [
    ("Visual Context: c", ["visual", "context", "c"]),
    ("", []),
    ("shorter hair; more dogs", ["shorter", "hair", "more", "dogs"]),
    ("sky_blue viewpoint_aerial", ["sky", "blue", "viewpoint", "aerial"]),
])
def test_tokenize(text, tokens):
    assert tokenize(text) == tokens


def test_empty_text_is_zero_vector():
    assert not hash_embed("", TokenHasher()).any()


def test_repeated_token_collapses_under_normalisation():
    h = TokenHasher(seed=3)
    assert np.array_equal(hash_embed("dog dog", h), hash_embed("dog", h))


def test_reference_loop_seed_42():
    got = hash_embed("black dress flared sleeves", TokenHasher(seed=42, dim=256))
    want = reference_hash_embed("black dress flared sleeves", 42, 256)
    assert got.tolist() == want


@settings(max_examples=60, deadline=None)
@given(st.lists(st.text("abcdefgh xyz", min_size=1, max_size=6), max_size=12),
       st.integers(0, 2 ** 64 - 1), st.integers(2, 64))
def test_hash_matches_reference_and_is_a_bag(words, seed, dim):
    text = " ".join(words)
    h = TokenHasher(seed=seed, dim=dim)
    v = hash_embed(text, h)
    np.testing.assert_allclose(v, reference_hash_embed(text, seed, dim), rtol=0, atol=1e-15)
    assert np.array_equal(v, hash_embed(" ".join(reversed(words)), h))
    n = np.linalg.norm(v)
    assert n == 0 or abs(n - 1) <= 1e-9


def test_hasher_rejects_tiny_dimension():
    with pytest.raises(ValueError):
        TokenHasher(dim=1)


# embedding surfaces ---------------------------------------------------------

def test_identity_projection_equals_hash_embed():
    q = Query("q", Modality.TEXT, "T", QueryKind.PLAIN, frozenset({"d"}), text="red bicycle on grass")
    model = identity_model()
    want = reference_hash_embed("red bicycle on grass", 42, 256)
    np.testing.assert_allclose(embed_query(q, model), want, rtol=0, atol=1e-15)


def test_fixture_document_reference_vector():
    d = Document("d", Modality.IMAGE_TEXT, text="Lake Tarn", image_ref="x.jpg",
                 image_tokens=("sky_blue", "aerial"))
    want = reference_hash_embed("lake tarn sky blue aerial", 42, 256)
    np.testing.assert_allclose(embed_document(d, identity_model()), want, rtol=0, atol=1e-15)


def test_image_only_doc_uses_sidecar_bag():
    d = Document("d", Modality.IMAGE, image_ref="x.jpg", image_tokens=("sky_blue", "aerial"))
    np.testing.assert_allclose(embed_document(d, identity_model()),
                               reference_hash_embed("sky_blue aerial", 42, 256), atol=1e-15)


def test_enhanced_document_gains_attribute_mass():
    d = Document("d", Modality.IMAGE, image_ref="x.jpg", image_tokens=("sky_blue", "aerial"))
    rec = EnhancedRecord("d", Side.CORPUS, "striped tabby cat", Category.II, "corpus_caption", "m", "", False)
    model = identity_model()
    plain, rich = embed_document(d, model), embed_document(d, model, enhanced=rec)
    attr = hash_embed("striped tabby cat", model.hasher())
    assert abs(plain @ attr) < 1e-12 or (rich @ attr) > (plain @ attr)
    assert rich @ attr > 0.5


def test_enhanced_query_differs():
    q = Query("q", Modality.IMAGE_TEXT, "T", QueryKind.QA, frozenset({"d"}), text="When was it built?",
              image_ref="x.jpg")
    rec = EnhancedRecord("q", Side.QUERY, "When was the Tower Bridge built?", Category.III, "qa_rewrite", "m",
                         "", False)
    model = identity_model()
    assert not np.allclose(embed_query(q, model), embed_query(q, model, enhanced=rec))


def test_silent_input_raises():
    d = Document("d", Modality.IMAGE, image_ref="x.jpg")
    with pytest.raises(SilentInputError):
        embed_document(d, identity_model())


# loss and gradients ------------------------------------------------------------

def test_single_pair_loss_is_zero():
    model = init_model(16, 8, seed=1)
    rng = np.random.default_rng(0)
    res = infonce_loss(model, rng.random((1, 16)), rng.random((1, 16)))
    assert res.loss == pytest.approx(0.0, abs=1e-12)


def test_equal_logits_give_log_batch():
    model = TwoTowerModel(np.eye(4), np.eye(4))
    same = np.tile([1.0, 2.0, 0.0, 0.0], (4, 1))
    assert infonce_loss(model, same, same).loss == pytest.approx(math.log(4), abs=1e-12)


def test_hard_negative_equal_to_positive_gives_log_two():
    model = TwoTowerModel(np.eye(4), np.eye(4))
    v = np.array([[0.0, 1.0, 1.0, 0.0]])
    assert infonce_loss(model, v, v, extra_negatives=v).loss == pytest.approx(math.log(2), abs=1e-12)


def test_non_finite_input_rejected():
    model = init_model(8, 4)
    with pytest.raises(ValueError):
        infonce_loss(model, np.full((2, 8), np.nan), np.ones((2, 8)))


def fd_max_rel_error(model, Q, P, N=None, symmetric=False, h=1e-5):
    res = infonce_loss(model, Q, P, N, symmetric)
    worst = 0.0
    for name, grad in (("W_q", res.grad_q), ("W_d", res.grad_d)):
        W = getattr(model, name)
        num = np.zeros_like(W)
        for idx in np.ndindex(W.shape):
            old = W[idx]
            W[idx] = old + h
            up = infonce_loss(model, Q, P, N, symmetric).loss
            W[idx] = old - h
            down = infonce_loss(model, Q, P, N, symmetric).loss
            W[idx] = old
            num[idx] = (up - down) / (2 * h)
        worst = max(worst, np.max(np.abs(num - grad)) / max(np.max(np.abs(num)), 1e-12))
    return worst


def random_case(seed, b=5, dim=12, out=6, extras=0):
    rng = np.random.default_rng(seed)
    model = TwoTowerModel(rng.standard_normal((dim, out)), rng.standard_normal((dim, out)), tau=0.5)
    Q, P = rng.standard_normal((b, dim)), rng.standard_normal((b, dim))
    N = rng.standard_normal((extras, dim)) if extras else None
    return model, Q, P, N


@pytest.mark.parametrize("seed", range(10))
def test_gradients_match_finite_differences(seed):
    model, Q, P, N = random_case(seed, extras=seed % 3)
    assert fd_max_rel_error(model, Q, P, N, symmetric=bool(seed % 2)) < 1e-4


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(0, 4))
def test_loss_non_negative(seed, b, extras):
    model, Q, P, N = random_case(seed, b=b, extras=extras)
    assert infonce_loss(model, Q, P, N).loss >= -1e-12


def test_temperature_does_not_change_ranking():
    rng = np.random.default_rng(5)
    W = rng.standard_normal((16, 8))
    Q, D = rng.standard_normal((6, 16)), rng.standard_normal((20, 16))
    for tau in (0.01, 0.07, 3.0):
        m = TwoTowerModel(W, W, tau)
        assert np.array_equal(np.argmax(m.project_queries(Q) @ m.project_documents(D).T, axis=1),
                              np.argmax(TwoTowerModel(W, W, 1.0).project_queries(Q)
                                        @ TwoTowerModel(W, W, 1.0).project_documents(D).T, axis=1))
    a = infonce_loss(TwoTowerModel(W, W, 0.07), Q[:4], D[:4]).loss
    b = infonce_loss(TwoTowerModel(W, W, 1.0), Q[:4], D[:4]).loss
    assert a != b


# training ------------------------------------------------------------------------

def separable_pairs(n=200, seed=0):
    rng = np.random.default_rng(seed)
    vocab = [f"w{i}" for i in range(400)]
    pairs = []
    for i in range(n):
        words = list(rng.choice(vocab, size=4, replace=False))
        pairs.append(TrainPair(" ".join(words[:3]) + f" k{i}", " ".join(words[1:]) + f" k{i}"))
    return pairs


def test_zero_learning_rate_keeps_model():
    init = init_model(64, 32, seed=2)
    out = train(init, separable_pairs(40), config=TrainConfig(learning_rate=0.0, epochs=2))
    assert out == init


def test_zero_learning_rate_sgd_keeps_model():
    init = init_model(64, 32, seed=2)
    out = train(init, separable_pairs(40), config=TrainConfig(learning_rate=0.0, epochs=2, optimizer="sgd"))
    assert out == init


def test_training_is_deterministic():
    pairs = separable_pairs(60)
    cfg = TrainConfig(epochs=2, seed=9)
    a = train(init_model(64, 32), pairs, config=cfg)
    b = train(init_model(64, 32), pairs, config=cfg)
    assert a == b and a.history == b.history
    assert a != init_model(64, 32)


def test_training_reduces_loss_on_separable_set():
    model = train(init_model(), separable_pairs(200), config=TrainConfig(epochs=5))
    assert len(model.history) == 5
    assert model.history[-1] < model.history[0]


def test_zero_epochs_returns_copy():
    init = init_model(32, 16)
    out = train(init, [], config=TrainConfig(epochs=0))
    assert out == init and out is not init


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=-1)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises_training_error():
    init = init_model(64, 32)
    with pytest.raises(TrainingError, match="non-finite loss at epoch"):
        train(init, separable_pairs(40), config=TrainConfig(learning_rate=1e308, optimizer="sgd", tau=1e-300))


# hard negatives --------------------------------------------------------------------

def brute_force_negatives(q, positives, ids, M, n):
    scored = sorted(((-(float(sum(a * b for a, b in zip(row, q)))), d) for d, row in zip(ids, M)))
    return [d for _, d in scored if d not in positives][:n]


@pytest.mark.parametrize("seed", range(10))
def test_hard_negatives_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    ids = [f"doc{i:02d}" for i in rng.permutation(50)]
    M = rng.standard_normal((50, 8))
    q = rng.standard_normal(8)
    positives = set(rng.choice(ids, size=3, replace=False))
    n = int(rng.integers(1, 10))
    assert sample_hard_negatives(q, positives, VectorIndex(ids, M), n) == brute_force_negatives(q, positives, ids, M, n)


def test_hard_negatives_edge_cases():
    idx = VectorIndex(["p"], np.ones((1, 3)))
    assert sample_hard_negatives(np.ones(3), {"p"}, idx, 0) == []
    assert sample_hard_negatives(np.ones(3), {"p"}, idx, 5) == []


def test_hard_negatives_change_the_checkpoint():
    pairs = separable_pairs(60)
    pool = {"p": [(f"n{i}", p.positive) for i, p in enumerate(pairs)]}
    pairs = [TrainPair(p.query, p.positive, frozenset({f"n{i}"}), "p") for i, p in enumerate(pairs)]
    base = train(init_model(64, 32), pairs, pool, TrainConfig(epochs=2))
    hard = train(init_model(64, 32), pairs, pool, TrainConfig(epochs=2, hard_negatives_per_query=2))
    assert base != hard


# checkpoints -------------------------------------------------------------------------

def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    model = train(init_model(64, 32, seed=4), separable_pairs(40), config=TrainConfig(epochs=1))
    save_checkpoint(model, tmp_path / "m.json")
    back = load_checkpoint(tmp_path / "m.json")
    assert back == model and back.history == model.history
    H = hash_embed_many(["a b c", "d e"], model.hasher())
    assert np.array_equal(back.project_documents(H), model.project_documents(H))


def test_checkpoint_rejects_foreign_file(tmp_path):
    (tmp_path / "x.json").write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "x.json")
