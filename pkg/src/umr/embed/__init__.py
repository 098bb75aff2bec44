from .hashing import TokenHasher, hash_embed, hash_embed_many, normalize, tokenize
from .model import (SilentInputError, TwoTowerModel, document_surface, embed_document,
                    embed_documents, embed_queries, embed_query, init_model,
                    load_checkpoint, query_surface, save_checkpoint)
from .train import (LossResult, TrainConfig, TrainingError, TrainPair, infonce_loss,
                    sample_hard_negatives, train)

__all__ = [
    "TokenHasher", "hash_embed", "hash_embed_many", "normalize", "tokenize",
    "SilentInputError", "TwoTowerModel", "document_surface", "embed_document",
    "embed_documents", "embed_queries", "embed_query", "init_model", "load_checkpoint",
    "query_surface", "save_checkpoint", "LossResult", "TrainConfig", "TrainingError",
    "TrainPair", "infonce_loss", "sample_hard_negatives", "train",
]
