"""Hashed bag-of-words sentence encoder.

Stands in for a pre-trained sentence model: every token maps to a fixed
pseudo-random vector, so the encoder is an oracle the attention block has to
learn to read rather than something that learns itself.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Module
from .tensor import Tensor

_SPLIT = re.compile(r"[^0-9a-z]+")


@dataclass(frozen=True)
class TextConfig:
    embed_size: int = 32
    table_seed: int = 7
    learnable: bool = False
    buckets: int = 1024

    def __post_init__(self):
        if self.embed_size < 1 or self.buckets < 1:
            raise ValueError(f"invalid text config {self}")


def tokenize(text: str) -> list[str]:
    return [t for t in _SPLIT.split(text.lower()) if t]


def token_seed(token: str, table_seed: int) -> int:
    digest = hashlib.blake2b(f"{table_seed}\x00{token}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def token_vector(token: str, table_seed: int, embed_size: int) -> np.ndarray:
    return np.random.default_rng(token_seed(token, table_seed)).standard_normal(embed_size)


def embed_sentence(tokens, table_seed=7, embed_size=32) -> np.ndarray:
    """Sum of per-token vectors scaled by 1/sqrt(token count); empty -> zeros."""
    out = np.zeros(embed_size)
    for tok in tokens:
        out += token_vector(tok, table_seed, embed_size)
    return out / np.sqrt(max(1, len(tokens)))


def make_qa_embedding(question: str, answer: str, cfg: TextConfig = TextConfig()) -> np.ndarray:
    q = embed_sentence(tokenize(question), cfg.table_seed, cfg.embed_size)
    a = embed_sentence(tokenize(answer), cfg.table_seed, cfg.embed_size)
    return np.concatenate([q, a])


def cosine_similarity(u, v) -> float:
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


class TextEncoder(Module):
    """Batch QA encoder.  With ``learnable`` the token vectors live in a
    trainable hash-bucket table initialised from the fixed vectors."""

    def __init__(self, cfg: TextConfig = TextConfig(), dtype=np.float64):
        self.cfg = cfg
        self.dtype = dtype
        self.table = None
        if cfg.learnable:
            rows = np.random.default_rng(cfg.table_seed).standard_normal((cfg.buckets, cfg.embed_size))
            self.table = Tensor(rows.astype(dtype), requires_grad=True)

    def __call__(self, questions, answers) -> Tensor:
        if not self.cfg.learnable:
            rows = [make_qa_embedding(q, a, self.cfg) for q, a in zip(questions, answers)]
            return Tensor(np.asarray(rows, dtype=self.dtype).reshape(len(rows), 2 * self.cfg.embed_size))
        halves = [self._learned(questions), self._learned(answers)]
        return T.concat(halves, axis=1)

    def _learned(self, sentences) -> Tensor:
        # Pooling matrix (batch, buckets) so one gather-free matmul embeds the batch.
        pool = np.zeros((len(sentences), self.cfg.buckets), dtype=self.dtype)
        for i, s in enumerate(sentences):
            toks = tokenize(s)
            for tok in toks:
                pool[i, token_seed(tok, self.cfg.table_seed) % self.cfg.buckets] += 1.0
            pool[i] /= np.sqrt(max(1, len(toks)))
        return T.matmul(Tensor(pool), self.table)
