"""Okapi BM25 over a local document collection."""

from __future__ import annotations

import json
import math
import os
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

from utilorch.redundancy import normalize_tokens

SNIPPET_CHARS = 1500


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Document:
    id: str
    title: str
    body: str


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.5
    b: float = 0.75

    def __post_init__(self) -> None:
        if not self.k1 > 0 or not 0.0 <= self.b <= 1.0:
            raise ValueError("BM25 needs k1 > 0 and 0 <= b <= 1")


class Hit(NamedTuple):
    doc_id: str
    score: float
    snippet: str


@dataclass
class Bm25Index:
    """Inverted index: document frequencies plus per-document term counts."""

    params: Bm25Params
    doc_ids: list[str]
    df: dict[str, int]
    postings: dict[str, dict[str, int]]
    doc_len: dict[str, int]
    avgdl: float
    documents: dict[str, Document]
    term_docs: dict[str, list[str]]

    @property
    def n_docs(self) -> int:
        return len(self.doc_ids)

    @property
    def vocabulary_size(self) -> int:
        return len(self.df)

    def idf(self, term: str) -> float:
        df = self.df.get(term, 0)
        return math.log(1.0 + (self.n_docs - df + 0.5) / (df + 0.5))

    def stats(self) -> dict:
        return {"N": self.n_docs, "avgdl": self.avgdl, "vocabulary_size": self.vocabulary_size}

    def to_dict(self) -> dict:
        return {
            "params": {"k1": self.params.k1, "b": self.params.b},
            "stats": self.stats(),
            "documents": [
                {"id": d.id, "title": d.title, "body": d.body}
                for d in (self.documents[i] for i in self.doc_ids)
            ],
            "df": self.df,
            "postings": self.postings,
            "doc_len": self.doc_len,
        }

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike) -> Bm25Index:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        docs = [Document(d["id"], d["title"], d["body"]) for d in raw["documents"]]
        return build_index(docs, Bm25Params(**raw["params"]))


def build_index(corpus: Sequence[Document], params: Bm25Params | None = None) -> Bm25Index:
    params = params or Bm25Params()
    if not corpus:
        raise CorpusError("corpus is empty")
    seen = set()
    postings: dict[str, dict[str, int]] = {}
    doc_len: dict[str, int] = {}
    df: Counter[str] = Counter()
    for doc in corpus:
        if doc.id in seen:
            raise CorpusError(f"duplicate document id {doc.id!r}")
        seen.add(doc.id)
        tokens = normalize_tokens(f"{doc.title} {doc.body}")
        tf = Counter(tokens)
        postings[doc.id] = dict(tf)
        doc_len[doc.id] = len(tokens)
        df.update(tf.keys())
    avgdl = sum(doc_len.values()) / len(corpus)
    term_docs: dict[str, list[str]] = {}
    for doc in corpus:
        for term in postings[doc.id]:
            term_docs.setdefault(term, []).append(doc.id)
    return Bm25Index(
        params=params,
        doc_ids=[d.id for d in corpus],
        df=dict(df),
        postings=postings,
        doc_len=doc_len,
        avgdl=avgdl,
        documents={d.id: d for d in corpus},
        term_docs=term_docs,
    )


def bm25_score(index: Bm25Index, query_tokens: Iterable[str], doc_id: str) -> float:
    if doc_id not in index.postings:
        raise KeyError(f"unknown document id {doc_id!r}")
    k1, b = index.params.k1, index.params.b
    tf_doc = index.postings[doc_id]
    # avgdl is 0 only when every document is empty, in which case no tf > 0.
    norm = 1.0 - b + b * index.doc_len[doc_id] / index.avgdl if index.avgdl else 1.0
    score = 0.0
    # fixed summation order keeps scores bit-identical across processes
    for term in sorted(set(query_tokens)):
        tf = tf_doc.get(term, 0)
        if tf:
            score += index.idf(term) * tf * (k1 + 1.0) / (tf + k1 * norm)
    return score


def retrieve_top_k(index: Bm25Index, query: str, k: int = 3) -> list[Hit]:
    if k < 1:
        raise ValueError("k must be >= 1")
    terms = set(normalize_tokens(query))
    candidates = {d for t in terms for d in index.term_docs.get(t, ())}
    scored = [(bm25_score(index, terms, d), d) for d in candidates]
    scored = [(s, d) for s, d in scored if s > 0.0]
    scored.sort(key=lambda sd: (-sd[0], sd[1]))
    return [Hit(d, s, index.documents[d].body[:SNIPPET_CHARS]) for s, d in scored[:k]]


def load_corpus_dir(directory: str | os.PathLike) -> list[Document]:
    """One document per file: file stem is the id, first line the title."""
    root = Path(directory)
    if not root.is_dir():
        raise CorpusError(f"{root} is not a directory")
    docs = []
    for path in sorted(p for p in root.iterdir() if p.is_file() and not p.name.startswith(".")):
        try:
            text = path.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise CorpusError(f"cannot read {path}: {exc}") from exc
        title, _, body = text.partition("\n")
        docs.append(Document(path.stem, title.strip(), body.strip()))
    if not docs:
        raise CorpusError(f"{root} contains no documents")
    return docs
