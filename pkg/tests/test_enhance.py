import itertools
import threading

import pytest

from umr.datamodel import Category, Document, Modality, Query, QueryKind, Side
from umr.enhance import (DispatchStats, EnhancementCache, GatewayError, HttpGateway,
                         VlmGatewayConfig, cache_key, classify_corpus, dispatch_batch,
                         enhance_corpus, enhance_query, route)
from umr.enhance.gateway import request_body
from umr.enhance.prompts import build_corpus_caption_prompt
from umr.synth import MockServer, MockVlm


class ScriptedGateway:
    """Replies from a function of the prompt message; counts calls; can fail."""

    def __init__(self, reply=lambda msg: "a caption", fail_first: int = 0, max_retries: int = 2):
        self.config = VlmGatewayConfig(model_id="scripted", max_retries=max_retries, backoff_base=0.0)
        self.reply = reply
        self.calls = []
        self._fail = fail_first
        self._lock = threading.Lock()

    def complete(self, msg):
        with self._lock:
            self.calls.append(msg)
            if self._fail > 0:
                self._fail -= 1
                raise GatewayError("scripted failure")
        return self.reply(msg)


def doc_text(did="d1", text="Paris is the capital of France."):
    return Document(did, Modality.TEXT, text=text)


def doc_image(did="d2", ref="img/dress.jpg"):
    return Document(did, Modality.IMAGE, image_ref=ref)


def doc_pair(did="d3", text="t", ref="img/p.jpg"):
    return Document(did, Modality.IMAGE_TEXT, text=text, image_ref=ref)


def query(qid, modality, kind=QueryKind.PLAIN, text=None, ref=None):
    return Query(qid, modality, "T", kind, frozenset({"d1"}), text=text, image_ref=ref)


# routing ----------------------------------------------------------------

EXPECTED_ROUTES = {
    (Side.CORPUS, Modality.TEXT): (Category.I, "identity"),
    (Side.CORPUS, Modality.IMAGE): (Category.II, "corpus_caption"),
    (Side.CORPUS, Modality.IMAGE_TEXT): (Category.III, "corpus_caption"),
    (Side.QUERY, Modality.TEXT): (Category.I, "identity"),
    (Side.QUERY, Modality.IMAGE): (Category.II, "query_caption"),
}
EXPECTED_QUERY_PAIR = {
    QueryKind.PLAIN: "query_caption",
    QueryKind.QA: "qa_rewrite",
    QueryKind.MODIFICATION: "modification",
}


@pytest.mark.parametrize("side, modality, kind", list(itertools.product(Side, Modality, QueryKind)))
def test_routing_is_total(side, modality, kind):
    cat, tid = route(side, modality, kind)
    if (side, modality) in EXPECTED_ROUTES:
        assert (cat, tid) == EXPECTED_ROUTES[(side, modality)]
    else:
        assert (cat, tid) == (Category.III, EXPECTED_QUERY_PAIR[kind])


@pytest.mark.parametrize("doc, cat", [(doc_text(), Category.I), (doc_image(), Category.II),
                                      (doc_pair(), Category.III)])
def test_classify_corpus(doc, cat):
    assert classify_corpus(doc) is cat


# corpus enhancement -------------------------------------------------------

def test_text_doc_is_identity_and_never_calls_gateway():
    gw = ScriptedGateway()
    rec = enhance_corpus(doc_text(), gw, EnhancementCache())
    assert rec.enhanced_text == "Paris is the capital of France."
    assert rec.category is Category.I and not rec.fallback
    assert gw.calls == []


def test_image_doc_caption_replaces_text():
    gw = ScriptedGateway(lambda m: "black dress, flared sleeves")
    rec = enhance_corpus(doc_image(), gw, EnhancementCache())
    assert rec.enhanced_text == "black dress, flared sleeves"
    assert rec.category is Category.II and rec.template_id == "corpus_caption"


def test_image_text_doc_appends_visual_context():
    gw = ScriptedGateway(lambda m: "c")
    rec = enhance_corpus(doc_pair(text="t"), gw, EnhancementCache())
    assert rec.enhanced_text == "t\nVisual Context: c"


# query enhancement --------------------------------------------------------

PANDA = {"img/panda.jpg": {"canonical_name": "Giant Panda", "attribute_tokens": ["bamboo"],
                           "spurious_tokens": [], "kind": "animal"}}


def test_qa_rewrite_with_mock_oracle():
    rec = enhance_query(query("q", Modality.IMAGE_TEXT, QueryKind.QA, "When was it discovered?", "img/panda.jpg"),
                        MockVlm(PANDA), EnhancementCache())
    assert rec.enhanced_text == "When was the Giant Panda discovered?"
    assert rec.template_id == "qa_rewrite"


@pytest.mark.parametrize("text, expected", [
    ("Unlike the reference image, I want the target image to have shorter hair and more dogs",
     "shorter hair; more dogs"),
    ("Is shiny and silver with shorter sleeves.", "Shiny silver with shorter sleeves"),
    ("Remove the lemon.", "Remove lemon"),
])
def test_modification_distillation(text, expected):
    q = query("q", Modality.IMAGE_TEXT, QueryKind.MODIFICATION, text, "img/ref.jpg")
    rec = enhance_query(q, MockVlm({}), EnhancementCache())
    assert rec.enhanced_text == expected


def test_modification_message_has_no_image():
    gw = ScriptedGateway(lambda m: "x")
    enhance_query(query("q", Modality.IMAGE_TEXT, QueryKind.MODIFICATION, "make it red", "r.jpg"),
                  gw, EnhancementCache())
    assert gw.calls[0].images == ()


def test_text_query_identity_byte_exact():
    text = "  Odd   spacing, ünïcode\tand tabs  "
    rec = enhance_query(query("q", Modality.TEXT, text=text), ScriptedGateway(), EnhancementCache())
    assert rec.enhanced_text == text and rec.category is Category.I


def test_plain_image_text_query_appends_short_caption():
    gw = ScriptedGateway(lambda m: "cap")
    rec = enhance_query(query("q", Modality.IMAGE_TEXT, QueryKind.PLAIN, "find this", "a.jpg"),
                        gw, EnhancementCache())
    assert rec.enhanced_text == "find this\nVisual Context: cap"
    assert "Maximum 50 words" in gw.calls[0].text


# dispatch -----------------------------------------------------------------

def test_warm_cache_makes_zero_calls():
    docs = [doc_image(f"d{i}", f"img/{i}.jpg") for i in range(5)]
    cache = EnhancementCache()
    first = dispatch_batch(docs, ScriptedGateway(lambda m: m.images[0]), cache)
    gw = ScriptedGateway()
    stats = DispatchStats()
    again = dispatch_batch(docs, gw, cache, stats)
    assert gw.calls == [] and stats.cached == 5
    assert again == first


def test_duplicates_share_one_call():
    docs = [doc_image("a", "img/same.jpg"), doc_image("b", "img/same.jpg")]
    gw = ScriptedGateway(lambda m: "cap")
    recs = dispatch_batch(docs, gw, EnhancementCache())
    assert len(gw.calls) == 1
    assert [r.source_id for r in recs] == ["a", "b"]
    assert recs[0].enhanced_text == recs[1].enhanced_text


def test_failure_becomes_fallback_and_is_not_cached():
    gw = ScriptedGateway(fail_first=10, max_retries=1)
    cache = EnhancementCache()
    stats = DispatchStats()
    (rec,) = dispatch_batch([doc_pair(text="orig")], gw, cache, stats, sleep=lambda s: None)
    assert rec.fallback and rec.enhanced_text == "orig"
    assert stats.fallback == 1 and stats.calls == 2 and stats.retries == 1
    assert len(cache) == 0


def test_empty_reply_is_fallback():
    (rec,) = dispatch_batch([doc_image()], ScriptedGateway(lambda m: "   "), EnhancementCache())
    assert rec.fallback and rec.enhanced_text == ""


def test_backoff_schedule():
    sleeps = []
    gw = ScriptedGateway(fail_first=3, max_retries=3)
    gw.config = VlmGatewayConfig(model_id="s", max_retries=3, backoff_base=0.5)
    dispatch_batch([doc_image()], gw, EnhancementCache(), sleep=sleeps.append)
    assert sleeps == [0.5, 1.0, 2.0]


def test_cache_key_covers_inputs():
    base = cache_key("corpus_caption", "m", None, "a.jpg", ())
    assert base != cache_key("corpus_caption", "m2", None, "a.jpg", ())
    assert base != cache_key("query_caption", "m", None, "a.jpg", ())
    assert base != cache_key("corpus_caption", "m", None, "b.jpg", ())
    assert base != cache_key("corpus_caption", "m", None, "a.jpg", ("sky_blue",))
    assert base == cache_key("corpus_caption", "m", None, "a.jpg", ())


def test_disk_cache_survives_new_instance(tmp_path):
    doc = doc_image()
    dispatch_batch([doc], ScriptedGateway(lambda m: "cap"), EnhancementCache(tmp_path))
    gw = ScriptedGateway()
    (rec,) = dispatch_batch([doc], gw, EnhancementCache(tmp_path))
    assert gw.calls == [] and rec.enhanced_text == "cap"


def test_idempotent_with_warm_cache():
    q = query("q", Modality.IMAGE_TEXT, QueryKind.QA, "Where is it?", "img/panda.jpg")
    cache = EnhancementCache()
    a = enhance_query(q, MockVlm(PANDA), cache)
    b = enhance_query(q, MockVlm(PANDA), cache)
    assert a == b


# wire format ----------------------------------------------------------------

def test_request_body_shape():
    body = request_body(build_corpus_caption_prompt("x.jpg"), VlmGatewayConfig(model_id="m"))
    assert body["model"] == "m" and body["temperature"] == 0.0 and body["max_tokens"] == 256
    (msg,) = body["messages"]
    assert msg["role"] == "user"
    assert [p["type"] for p in msg["content"]] == ["text", "image_url", "text"]


@pytest.fixture
def server():
    with MockServer(MockVlm(PANDA)) as srv:
        yield srv


def test_http_gateway_retry_after_one_transient_failure(server):
    server.fail_next(1)
    cfg = VlmGatewayConfig(endpoint_url=server.url, model_id="mock", max_retries=3, backoff_base=0.0)
    stats = DispatchStats()
    q = query("q", Modality.IMAGE_TEXT, QueryKind.QA, "When was it discovered?", "img/panda.jpg")
    with HttpGateway(cfg) as gw:
        (rec,) = dispatch_batch([q], gw, EnhancementCache(), stats)
    assert rec.enhanced_text == "When was the Giant Panda discovered?" and not rec.fallback
    assert stats.retries == 1 and stats.calls == 2
    assert len(server.requests()) == 2


def test_http_gateway_total_failure_gives_fallback(server):
    server.fail_next(100)
    cfg = VlmGatewayConfig(endpoint_url=server.url, max_retries=1, backoff_base=0.0)
    with HttpGateway(cfg) as gw:
        (rec,) = dispatch_batch([doc_pair(text="keep me", ref="img/panda.jpg")], gw, EnhancementCache())
    assert rec.fallback and rec.enhanced_text == "keep me"


def test_bearer_token_from_environment(monkeypatch):
    monkeypatch.setenv("UMR_GATEWAY_TOKEN", "s3cret")
    with HttpGateway(VlmGatewayConfig()) as gw:
        assert gw._client.headers.get("Authorization") == "Bearer s3cret"
    monkeypatch.delenv("UMR_GATEWAY_TOKEN")
    with HttpGateway(VlmGatewayConfig()) as gw:
        assert "Authorization" not in gw._client.headers
