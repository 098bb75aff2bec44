"""Deterministic stand-in for the enhancer VLM, driven by the answer file."""
from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..enhance.gateway import GatewayError, VlmGatewayConfig
from ..enhance.prompts import IMAGE_MARKER, PromptMessage
from .world import DEFAULT_FILLERS, KINDS, SynthWorld

MOCK_MODEL_ID = "mock-vlm"

# filler verbs and pronouns/articles the modification prompt tells the model to drop
BANNED_WORDS = ("is", "has", "make", "change", "show", "put", "be",
                "it", "the", "a", "an", "my", "me", "them", "this")


class MockReplyError(GatewayError):
    pass


@dataclass(frozen=True)
class MockRequest:
    """Prompt text (image marker kept in place) and the attached image refs."""

    text: str
    images: tuple[str, ...] = ()

    @classmethod
    def from_message(cls, message: PromptMessage) -> "MockRequest":
        return cls(message.text, tuple(message.images))

    @classmethod
    def from_wire(cls, body: Mapping) -> "MockRequest":
        parts = body["messages"][-1]["content"]
        if isinstance(parts, str):
            return cls(parts)
        text, images = [], []
        for p in parts:
            if p.get("type") == "text":
                text.append(p["text"])
            elif p.get("type") == "image_url":
                text.append(IMAGE_MARKER)
                images.append(p["image_url"]["url"])
        return cls("".join(text), tuple(images))


def _between(text: str, start: str, end: str) -> str:
    i = text.rindex(start) + len(start)
    j = text.index(end, i)
    return text[i:j]


def _join_conjunctions(text: str) -> str:
    """'shiny and silver' -> 'shiny silver'; 'shorter hair and more dogs' -> 'shorter hair; more dogs'."""
    parts = re.split(r"\s+\band\b\s+", text, flags=re.IGNORECASE)
    out = parts[0]
    left = len(re.split(r"[;,]", parts[0])[-1].split())
    for p in parts[1:]:
        out += (" " if left <= 1 else "; ") + p
        left = len(re.split(r"[;,]", p)[0].split())
    return out


def distill_modification(text: str, fillers: Sequence[str] = DEFAULT_FILLERS) -> str:
    """Rule-based version of the modification prompt: drop fillers and banned words."""
    out = text
    for f in sorted(fillers, key=len, reverse=True):
        out = re.sub(re.escape(f), " ", out, flags=re.IGNORECASE)
    out = out.strip()
    capital = out[:1].isupper()
    banned = "|".join(BANNED_WORDS)
    out = re.sub(rf"\b(?:{banned})\b", " ", out, flags=re.IGNORECASE)
    out = re.sub(r"\s+", " ", out).strip(" ,.;:")
    out = re.sub(r"\s+([,.;:])", r"\1", out)
    out = _join_conjunctions(out)
    return out[:1].upper() + out[1:] if capital else out


def resolve_reference(question: str, name: str, kind: str | None) -> str:
    """Replace the first deictic phrase with ``the <name>``."""
    phrases = [f"this {kind}"] if kind else []
    phrases += [f"this {k}" for k in KINDS if k != kind] + ["this", "it"]
    for ph in phrases:
        pat = re.compile(rf"\b{re.escape(ph)}\b", re.IGNORECASE)
        if pat.search(question):
            return pat.sub(f"the {name}", question, count=1)
    return question


class MockVlm:
    """Implements the gateway contract; replies depend only on (answers, request, seed)."""

    def __init__(self, answers: Mapping[str, Mapping], caption_noise: float = 0.0, seed: int = 0,
                 filler_phrases: Sequence[str] = DEFAULT_FILLERS,
                 config: VlmGatewayConfig | None = None):
        self.answers = dict(answers)
        self.caption_noise = caption_noise
        self.seed = seed
        self.filler_phrases = tuple(filler_phrases)
        self.config = config or VlmGatewayConfig(endpoint_url="mock://", model_id=MOCK_MODEL_ID,
                                                 max_retries=0, max_in_flight=4, backoff_base=0.0)
        self._by_name = {Path(k).name: k for k in self.answers}

    @classmethod
    def from_benchmark(cls, bench_dir: str | os.PathLike, **kw) -> "MockVlm":
        bench = Path(bench_dir)
        answers = json.loads((bench / "answers.json").read_text(encoding="utf-8"))
        cfg = json.loads((bench / "world.json").read_text(encoding="utf-8"))["config"]
        return cls(answers, cfg["caption_noise"], cfg["seed"], cfg["filler_phrases"], **kw)

    @classmethod
    def from_world(cls, world: SynthWorld, answers: Mapping[str, Mapping], **kw) -> "MockVlm":
        c = world.config
        return cls(answers, c.caption_noise, c.seed, c.filler_phrases, **kw)

    def lookup(self, image: str) -> dict:
        ref = image[len("file://"):] if image.startswith("file://") else image
        if ref in self.answers:
            return self.answers[ref]
        key = self._by_name.get(Path(ref).name)
        if key is not None and ref.endswith(key):
            return self.answers[key]
        raise MockReplyError(f"unknown image {image!r}")

    def caption(self, image: str) -> str:
        ans = self.lookup(image)
        h = hashlib.sha256(f"{self.seed}|{Path(image).name}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(h[:8], "little"))
        attrs = [a for a in ans["attribute_tokens"] if rng.random() >= self.caption_noise]
        spurious = list(ans.get("spurious_tokens", ()))
        n_sp = min(len(spurious), 1 + int(rng.integers(2)))
        picked = [spurious[j] for j in sorted(rng.choice(len(spurious), size=n_sp, replace=False))] if n_sp else []
        return " ".join([ans["canonical_name"], *attrs, *picked])

    def reply(self, request: MockRequest) -> str:
        text = request.text
        if text.startswith("Task: Generate a precise, keyword-rich text entry"):
            if len(request.images) != 1:
                raise MockReplyError("caption request without exactly one image")
            return self.caption(request.images[0])
        if text.startswith("Task: Rewrite the user's question"):
            if len(request.images) != 1:
                raise MockReplyError("QA rewrite request without exactly one image")
            question = _between(text, "Current Task:\nQuery: ", "\nInput Image:")
            ans = self.lookup(request.images[0])
            return resolve_reference(question, ans["canonical_name"], ans.get("kind"))
        if text.startswith("Task: Extract the key semantic phrases"):
            return distill_modification(_between(text, "Current Input: ", "\nOutput:"), self.filler_phrases)
        raise MockReplyError("unrecognised prompt")

    def complete(self, message: PromptMessage) -> str:
        return self.reply(MockRequest.from_message(message))


def mock_vlm_reply(world: MockVlm, request: MockRequest | PromptMessage) -> str:
    if isinstance(request, PromptMessage):
        request = MockRequest.from_message(request)
    return world.reply(request)
