"""Contrastive training of the two-tower model."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .. import index as vindex
from .hashing import hash_embed_many
from .model import TwoTowerModel

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 32
    epochs: int = 5
    seed: int = 0
    tau: float = 0.07
    hard_negatives_per_query: int = 0
    optimizer: str = "adam"  # "adam" | "sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    symmetric: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.hard_negatives_per_query < 0:
            raise ValueError("hard_negatives_per_query must be >= 0")


class TrainPair(NamedTuple):
    query: str
    positive: str
    positive_ids: frozenset = frozenset()
    pool_id: str | None = None


class LossResult(NamedTuple):
    loss: float
    grad_q: np.ndarray
    grad_d: np.ndarray


def _unit(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, n, out=np.zeros_like(x), where=n > 0), n


def _unit_backward(grad: np.ndarray, unit: np.ndarray, norm: np.ndarray) -> np.ndarray:
    # d(x/|x|) projected off the radial direction; zero rows get zero gradient
    radial = np.sum(unit * grad, axis=1, keepdims=True)
    return np.divide(grad - unit * radial, norm, out=np.zeros_like(grad), where=norm > 0)


def _softmax_ce(S: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy with the diagonal as target, and d loss / d S."""
    m = S.max(axis=1, keepdims=True)
    E = np.exp(S - m)
    Z = E.sum(axis=1, keepdims=True)
    P = E / Z
    b = S.shape[0]
    idx = np.arange(b)
    loss = float(np.mean(np.log(Z[:, 0]) + m[:, 0] - S[idx, idx]))
    G = P.copy()
    G[idx, idx] -= 1.0
    return loss, G / b


def infonce_loss(model: TwoTowerModel, queries: np.ndarray, positives: np.ndarray,
                 extra_negatives: np.ndarray | None = None, symmetric: bool = False) -> LossResult:
    """In-batch InfoNCE on raw hashed vectors, with analytic gradients.

    Query i is scored against every positive in the batch plus all extra
    negatives; its own positive is the target. With ``symmetric`` the
    document-to-query direction over the in-batch block is added.
    """
    Q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    P = np.atleast_2d(np.asarray(positives, dtype=np.float64))
    if Q.shape[0] != P.shape[0] or Q.shape[0] < 1:
        raise ValueError("need matching, non-empty query and positive batches")
    D = P
    if extra_negatives is not None and len(extra_negatives):
        D = np.vstack([P, np.atleast_2d(np.asarray(extra_negatives, dtype=np.float64))])
    if not (np.isfinite(Q).all() and np.isfinite(D).all()):
        raise ValueError("non-finite input vectors")
    b = Q.shape[0]
    tau = model.tau

    A, na = _unit(Q @ model.W_q)
    B, nb = _unit(D @ model.W_d)
    S = A @ B.T / tau
    loss, G = _softmax_ce(S)
    if symmetric:
        loss2, G2 = _softmax_ce(S[:, :b].T)
        loss += loss2
        G[:, :b] += G2.T
    dA = G @ B / tau
    dB = G.T @ A / tau
    grad_q = Q.T @ _unit_backward(dA, A, na)
    grad_d = D.T @ _unit_backward(dB, B, nb)
    return LossResult(loss, grad_q, grad_d)


def sample_hard_negatives(query_vec: np.ndarray, positives, index: vindex.VectorIndex,
                          n: int) -> list[str]:
    """The n best-scoring documents that are not positives (all of them if fewer exist)."""
    if n <= 0:
        return []
    positives = set(positives)
    k = min(len(index), n + len(positives))
    hits = vindex.search(index, query_vec, k)
    return [d for d in hits.ids if d not in positives][:n]


class _Adam:
    def __init__(self, shape, cfg: TrainConfig):
        self.cfg = cfg
        self.m = [np.zeros(shape), np.zeros(shape)]
        self.v = [np.zeros(shape), np.zeros(shape)]
        self.t = 0

    def step(self, params, grads, lr):
        self.t += 1
        c = self.cfg
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = c.beta1 * self.m[i] + (1 - c.beta1) * g
            self.v[i] = c.beta2 * self.v[i] + (1 - c.beta2) * g * g
            mhat = self.m[i] / (1 - c.beta1 ** self.t)
            vhat = self.v[i] / (1 - c.beta2 ** self.t)
            p -= lr * mhat / (np.sqrt(vhat) + c.eps)


def _as_pair(p) -> TrainPair:
    return p if isinstance(p, TrainPair) else TrainPair(*p)


def train(model: TwoTowerModel, pairs: Sequence, negatives_pool: Mapping[str, Sequence[tuple[str, str]]] | None = None,
          config: TrainConfig = TrainConfig()) -> TwoTowerModel:
    """Train on (query surface, positive surface) pairs; returns a new model.

    Deterministic in ``config.seed``: the shuffle order comes from a seeded
    generator and no other randomness is used. With hard negatives enabled,
    each pair draws its top-scoring non-positives from ``negatives_pool[pool_id]``
    (a list of (did, surface)), re-mined at the start of every epoch.
    """
    pairs = [_as_pair(p) for p in pairs]
    model = model.copy()
    model.tau = config.tau
    if config.epochs == 0:
        return model
    if not pairs:
        raise ValueError("no training pairs")
    hasher = model.hasher()
    Qh = hash_embed_many([p.query for p in pairs], hasher)
    Ph = hash_embed_many([p.positive for p in pairs], hasher)

    use_hard = config.hard_negatives_per_query > 0 and negatives_pool
    pools = {}
    if use_hard:
        for pid, entries in negatives_pool.items():
            ids = [d for d, _ in entries]
            pools[pid] = (ids, hash_embed_many([s for _, s in entries], hasher))

    rng = np.random.default_rng(config.seed)
    opt = _Adam(model.W_q.shape, config) if config.optimizer == "adam" else None
    history = list(model.history)
    n = len(pairs)
    for epoch in range(config.epochs):
        hard: list[np.ndarray] = [np.empty((0, hasher.dim))] * n
        if use_hard:
            hard = _mine(model, pairs, Qh, pools, config.hard_negatives_per_query)
        order = rng.permutation(n)
        losses = []
        for step, start in enumerate(range(0, n, config.batch_size)):
            batch = order[start:start + config.batch_size]
            extras = np.vstack([hard[i] for i in batch]) if use_hard else None
            # overflow shows up as non-finite values, handled just below
            with np.errstate(over="ignore", invalid="ignore"):
                res = infonce_loss(model, Qh[batch], Ph[batch], extras, config.symmetric)
            if not np.isfinite(res.loss) or not (np.isfinite(res.grad_q).all() and np.isfinite(res.grad_d).all()):
                raise TrainingError(f"non-finite loss at epoch {epoch} step {step}")
            losses.append(res.loss)
            if opt is not None:
                opt.step([model.W_q, model.W_d], [res.grad_q, res.grad_d], config.learning_rate)
            else:
                model.W_q -= config.learning_rate * res.grad_q
                model.W_d -= config.learning_rate * res.grad_d
        history.append(float(np.mean(losses)))
        log.info("epoch %d mean loss %.6f", epoch, history[-1])
    model.history = tuple(history)
    return model


def _mine(model, pairs, Qh, pools, n_neg) -> list[np.ndarray]:
    indexes = {pid: vindex.VectorIndex(ids, model.project_documents(H)) for pid, (ids, H) in pools.items()}
    rows = {pid: {d: j for j, d in enumerate(ids)} for pid, (ids, _) in pools.items()}
    zq = model.project_queries(Qh)
    out = []
    for i, p in enumerate(pairs):
        if p.pool_id not in pools:
            out.append(np.empty((0, Qh.shape[1])))
            continue
        H = pools[p.pool_id][1]
        chosen = sample_hard_negatives(zq[i], p.positive_ids, indexes[p.pool_id], n_neg)
        out.append(H[[rows[p.pool_id][d] for d in chosen]] if chosen else np.empty((0, Qh.shape[1])))
    return out
