"""Seeded synthetic corpus with uniquely planted lexical answers.

Documents carry distinct filler tokens (no repeats inside a document), are
hyperlinked inside topic groups, and each query gets one gold document whose
middle passage window receives three unique marker tokens plus an adjacent
two-token answer phrase. Questions mix the markers with two anchor tokens
from the same window, so the lexical scorers provably rank the gold passage
first at every stage. A second query set uses only the anchors, which is the
harder setting the contrast benchmarks want.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from funnelrag.corpus import Corpus, Document, make_corpus
from funnelrag.evaluation import QAItem


@dataclass
class SyntheticData:
    corpus: Corpus
    qa: list[QAItem]
    contrast_qa: list[QAItem]
    gold_doc_by_query: dict[str, str]


def generate(n_docs: int = 2000, n_queries: int = 50, seed: int = 7,
             vocab_size: int = 8000, passage_size: int = 100) -> SyntheticData:
    if n_docs < n_queries:
        raise ValueError("need at least one document per query")
    rng = np.random.default_rng(seed)
    vocab = np.array([f"w{i:05d}" for i in range(vocab_size)])

    # topic groups: ring links plus a couple of random intra-group links
    group_sizes = []
    remaining = n_docs
    while remaining > 0:
        size = int(rng.integers(8, 31))
        size = min(size, remaining)
        group_sizes.append(size)
        remaining -= size

    doc_ids = [f"D{i:05d}" for i in range(n_docs)]
    gold_indices = rng.choice(n_docs, size=n_queries, replace=False)
    gold_set = {int(i) for i in gold_indices}

    texts: list[list[str]] = []
    for i in range(n_docs):
        # gold docs get >= 3 windows so the plant sits mid-document
        n_tokens = int(rng.integers(120, 220)) if i not in gold_set \
            else int(rng.integers(2 * passage_size + 30, 3 * passage_size))
        tokens = rng.choice(vocab, size=n_tokens, replace=False)
        texts.append([str(t) for t in tokens])

    links: dict[int, list[int]] = {i: [] for i in range(n_docs)}
    start = 0
    for size in group_sizes:
        members = list(range(start, start + size))
        if size > 1:
            for pos, node in enumerate(members):
                links[node].append(members[(pos + 1) % size])
            for _ in range(max(1, size // 4)):
                a, b = (int(x) for x in rng.choice(members, size=2, replace=False))
                if b not in links[a] and a != b:
                    links[a].append(b)
        start += size

    qa: list[QAItem] = []
    contrast_qa: list[QAItem] = []
    gold_doc_by_query: dict[str, str] = {}
    for q, gold in enumerate(int(g) for g in gold_indices):
        window = texts[gold][passage_size: 2 * passage_size]
        assert len(window) == passage_size
        markers = [f"qm{q:03d}a", f"qm{q:03d}b", f"qm{q:03d}c"]
        answer = [f"ans{q:03d}x", f"ans{q:03d}y"]
        window[10:13] = markers
        window[13:15] = answer
        anchor1, anchor2 = window[20], window[21]
        texts[gold][passage_size: 2 * passage_size] = window

        qid = f"q{q:03d}"
        question = f"{markers[0]} {anchor1} {markers[1]} {anchor2} {markers[2]}"
        answers = (f"{answer[0]} {answer[1]}",)
        qa.append(QAItem(query_id=qid, question=question, answers=answers))
        # contrast questions drop the unique markers and add off-document
        # decoys, so lexical overlap alone can misrank the gold document
        in_gold = set(texts[gold])
        decoys = [str(w) for w in rng.permutation(vocab)[:8] if str(w) not in in_gold][:2]
        contrast_qa.append(QAItem(
            query_id=qid,
            question=" ".join([anchor1, anchor2, *decoys]),
            answers=answers))
        gold_doc_by_query[qid] = doc_ids[gold]

    docs = [
        Document(
            doc_id=doc_ids[i],
            title=f"Synthetic article {i:05d}",
            text=" ".join(texts[i]),
            out_links=tuple(doc_ids[j] for j in links[i]),
            token_count=len(texts[i]),
        )
        for i in range(n_docs)
    ]
    return SyntheticData(corpus=make_corpus(docs), qa=qa,
                         contrast_qa=contrast_qa,
                         gold_doc_by_query=gold_doc_by_query)
