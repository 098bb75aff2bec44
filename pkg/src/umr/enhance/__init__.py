from .cache import EnhancementCache, cache_key
from .core import (VISUAL_CONTEXT, DispatchStats, assemble, classify_corpus,
                   classify_query, dispatch_batch, enhance_corpus, enhance_query,
                   route)
from .gateway import Gateway, GatewayError, HttpGateway, VlmGatewayConfig
from .prompts import (TEMPLATES, PromptMessage, PromptTemplate,
                      build_corpus_caption_prompt, build_modification_prompt,
                      build_qa_rewrite_prompt, build_query_caption_prompt)

__all__ = [
    "EnhancementCache", "cache_key", "VISUAL_CONTEXT", "DispatchStats", "assemble",
    "classify_corpus", "classify_query", "dispatch_batch", "enhance_corpus",
    "enhance_query", "route", "Gateway", "GatewayError", "HttpGateway",
    "VlmGatewayConfig", "TEMPLATES", "PromptMessage", "PromptTemplate",
    "build_corpus_caption_prompt", "build_modification_prompt",
    "build_qa_rewrite_prompt", "build_query_caption_prompt",
]
