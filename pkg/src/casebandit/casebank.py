"""Append-only case bank with exact inner-product recall."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .errors import InvalidArgumentError, ParseError
from .linalg import as_vec

UNIT_TOL = 1e-6
FORMAT_NAME = "casebandit-casebank"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Case:
    id: int
    query_payload: str
    solution_payload: str
    reward: int
    embedding: np.ndarray
    retained_at: int

    def __eq__(self, other):
        if not isinstance(other, Case):
            return NotImplemented
        return (self.id, self.query_payload, self.solution_payload, self.reward, self.retained_at) == \
            (other.id, other.query_payload, other.solution_payload, other.reward, other.retained_at) \
            and np.array_equal(self.embedding, other.embedding)

    __hash__ = None


class CaseBank:
    """Successful cases in insertion order, plus a packed embedding matrix for recall."""

    def __init__(self, embedding_dim: int):
        if embedding_dim < 1:
            raise InvalidArgumentError("embedding_dim must be positive")
        self.embedding_dim = int(embedding_dim)
        self.cases: list[Case] = []
        self._emb = np.empty((16, self.embedding_dim))
        self._next_id = 0

    def __len__(self):
        return len(self.cases)

    def __iter__(self):
        return iter(self.cases)

    @property
    def embeddings(self) -> np.ndarray:
        return self._emb[: len(self.cases)]

    def _append(self, case: Case):
        n = len(self.cases)
        if n == self._emb.shape[0]:
            grown = np.empty((2 * n, self.embedding_dim))
            grown[:n] = self._emb
            self._emb = grown
        self._emb[n] = case.embedding
        self.cases.append(case)
        self._next_id = case.id + 1


def _unit(emb, dim, name="embedding"):
    v = as_vec(emb, dim, name)
    n = float(np.linalg.norm(v))
    if abs(n - 1.0) > UNIT_TOL:
        raise InvalidArgumentError(f"{name} must be unit-norm (got norm {n:.9f})")
    return v


def retain(bank: CaseBank, q, a, r, emb, step: int) -> CaseBank:
    """Append ``(q, a)`` when ``r == 1``; a failed attempt leaves the bank as it was."""
    emb = _unit(emb, bank.embedding_dim)
    if r not in (0, 1):
        raise InvalidArgumentError(f"reward must be 0 or 1, got {r!r}")
    if r == 1:
        bank._append(Case(bank._next_id, str(q), str(a), 1, emb.copy(), int(step)))
    return bank


def recall_indices(bank: CaseBank, query_emb, K: int) -> np.ndarray:
    if K <= 0:
        raise InvalidArgumentError(f"K must be positive, got {K}")
    q = _unit(query_emb, bank.embedding_dim, "query embedding")
    if not bank.cases:
        return np.empty(0, dtype=np.int64)
    return np.asarray(kernels.topk_inner(np.ascontiguousarray(bank.embeddings), q, min(K, len(bank))))


def recall(bank: CaseBank, query_emb, K: int) -> list:
    """Top-``K`` cases by inner product with ``query_emb`` (descending, ties by id)."""
    return [bank.cases[i] for i in recall_indices(bank, query_emb, K)]


def context_features(query_emb, case_emb) -> np.ndarray:
    """``(x, x) / sqrt(2)`` for ``x`` the unit-normalised concatenation of the two vectors."""
    q = np.asarray(query_emb, dtype=np.float64)
    c = np.asarray(case_emb, dtype=np.float64)
    if q.ndim != 1 or q.shape != c.shape:
        raise InvalidArgumentError(f"query and case vectors must share one dim ({q.shape} vs {c.shape})")
    x = np.concatenate([q, c])
    x /= np.linalg.norm(x)
    x /= np.sqrt(2.0)
    return np.concatenate([x, x])


def context_features_batch(query_emb, case_embs) -> np.ndarray:
    """Row-wise :func:`context_features` for one query against many cases."""
    C = np.atleast_2d(np.asarray(case_embs, dtype=np.float64))
    q = np.asarray(query_emb, dtype=np.float64)
    if C.shape[1] != q.shape[0]:
        raise InvalidArgumentError("query and case vectors must share one dim")
    X = np.hstack([np.broadcast_to(q, C.shape), C])
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    X /= np.sqrt(2.0)
    return np.hstack([X, X])


# --- persistence -------------------------------------------------------------

def dumps(bank: CaseBank) -> str:
    lines = [json.dumps({"format": FORMAT_NAME, "version": FORMAT_VERSION,
                         "embedding_dim": bank.embedding_dim})]
    for c in bank.cases:
        lines.append(json.dumps({
            "id": c.id, "retained_at": c.retained_at, "reward": c.reward,
            "embedding": [float(v) for v in c.embedding],
            "query": c.query_payload, "solution": c.solution_payload,
        }, ensure_ascii=True))
    return "\n".join(lines) + "\n"


def loads(text: str) -> CaseBank:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("missing header", 1)
    try:
        header = json.loads(lines[0])
        if header.get("format") != FORMAT_NAME:
            raise ValueError("not a case bank file")
        if header.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported version {header.get('version')}")
        bank = CaseBank(int(header["embedding_dim"]))
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise ParseError(str(exc), 1) from exc
    last_id = -1
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
            emb = np.array(rec["embedding"], dtype=np.float64)
            if emb.shape != (bank.embedding_dim,):
                raise ValueError("embedding has wrong dimension")
            if rec["reward"] != 1:
                raise ValueError("only successful cases can be stored")
            if rec["id"] <= last_id:
                raise ValueError("ids must be strictly increasing")
            case = Case(int(rec["id"]), rec["query"], rec["solution"], 1, emb, int(rec["retained_at"]))
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(str(exc), lineno) from exc
        last_id = case.id
        bank._append(case)
    return bank


def save(bank: CaseBank, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(bank))


def load(path) -> CaseBank:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())
