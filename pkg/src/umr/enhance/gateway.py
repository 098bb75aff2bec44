"""Client for chat-completions-compatible VLM endpoints."""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import httpx

from .prompts import PromptMessage

TOKEN_ENV = "UMR_GATEWAY_TOKEN"


class GatewayError(RuntimeError):
    pass


@dataclass(frozen=True)
class VlmGatewayConfig:
    endpoint_url: str = "http://127.0.0.1:8000/v1"
    model_id: str = "Qwen/Qwen3-VL-8B-Instruct"
    max_output_tokens: int = 256
    temperature: float = 0.0
    timeout: float = 120.0
    max_retries: int = 3
    max_in_flight: int = 8
    backoff_base: float = 0.5

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


class Gateway(Protocol):
    config: VlmGatewayConfig

    def complete(self, message: PromptMessage) -> str: ...


def request_body(message: PromptMessage, config: VlmGatewayConfig, image_url=None) -> dict:
    parts = message.content_parts(image_url) if image_url else message.content_parts()
    return {
        "model": config.model_id,
        "temperature": config.temperature,
        "max_tokens": config.max_output_tokens,
        "messages": [{"role": "user", "content": parts}],
    }


def reply_text(payload: dict) -> str:
    try:
        content = payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise GatewayError(f"unexpected reply shape: {exc!r}") from exc
    if isinstance(content, list):  # some servers return content parts
        content = "".join(p.get("text", "") for p in content if isinstance(p, dict))
    return content or ""


class HttpGateway:
    """POSTs prompts to ``{endpoint_url}/chat/completions``.

    Image references are sent as ``file://`` URLs, resolved against
    ``image_root`` when given. A bearer token is taken from
    ``UMR_GATEWAY_TOKEN`` if set.
    """

    def __init__(self, config: VlmGatewayConfig, image_root: str | os.PathLike | None = None,
                 token: str | None = None):
        self.config = config
        self.image_root = Path(image_root).resolve() if image_root else None
        token = token if token is not None else os.environ.get(TOKEN_ENV)
        headers = {"Authorization": f"Bearer {token}"} if token else {}
        self._client = httpx.Client(timeout=config.timeout, headers=headers)
        self.url = config.endpoint_url.rstrip("/") + "/chat/completions"

    def _image_url(self, ref: str) -> str:
        if ref.startswith(("data:", "http://", "https://", "file://")):
            return ref
        p = Path(ref)
        if self.image_root is not None and not p.is_absolute():
            p = self.image_root / p
        return "file://" + p.as_posix()

    def complete(self, message: PromptMessage) -> str:
        body = request_body(message, self.config, self._image_url)
        try:
            resp = self._client.post(self.url, json=body)
        except httpx.HTTPError as exc:
            raise GatewayError(f"request failed: {exc}") from exc
        if resp.status_code >= 400:
            raise GatewayError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        return reply_text(resp.json())

    def close(self) -> None:
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
