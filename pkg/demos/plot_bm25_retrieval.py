"""
Local BM25 retrieval
====================

The only external tool is an Okapi BM25 index over a small corpus. Here we
index the context paragraphs of the bundled question fixture and query it.
"""

from utilorch.data import fixture_path
from utilorch.harness import context_documents, load_dataset
from utilorch.retriever import bm25_score, build_index, retrieve_top_k

examples = load_dataset(fixture_path())
index = build_index(context_documents(examples))
print(index.stats())

###############################################################################
# Ranked hits carry a score and a snippet of the body.

for hit in retrieve_top_k(index, "capital of France", k=3):
    print(f"{hit.score:6.3f}  {hit.doc_id:<20} {hit.snippet[:60]}")

###############################################################################
# Scores are additive over distinct query terms, and rarer terms weigh more.

doc = retrieve_top_k(index, "Eiffel Tower", k=1)[0].doc_id
parts = {t: bm25_score(index, [t], doc) for t in ("eiffel", "tower")}
print(doc, parts, "sum =", sum(parts.values()), "joint =", bm25_score(index, ["eiffel", "tower"], doc))
print("idf(eiffel) =", round(index.idf("eiffel"), 3), " idf(the) =", round(index.idf("the"), 3))
