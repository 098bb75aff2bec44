from .mock_vlm import (MOCK_MODEL_ID, MockReplyError, MockRequest, MockVlm,
                       distill_modification, mock_vlm_reply, resolve_reference)
from .server import MockServer, serve_mock
from .world import (SynthConfig, SynthWorld, emit_benchmark, generate_world,
                    spurious_vocabulary, world_from_json, world_to_json)

__all__ = [
    "MOCK_MODEL_ID", "MockReplyError", "MockRequest", "MockVlm", "distill_modification",
    "mock_vlm_reply", "resolve_reference", "MockServer", "serve_mock", "SynthConfig",
    "SynthWorld", "emit_benchmark", "generate_world", "spurious_vocabulary",
    "world_from_json", "world_to_json",
]
