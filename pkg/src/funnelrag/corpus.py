"""Corpus ingest, hyperlink graph, and greedy document clustering.

The clustering pass turns a hyperlinked document set into coarse retrieval
units: documents are visited from the most locally clustered down, each one
greedily merging its related clusters while the token budget allows. The
result is always a partition of the document set.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from funnelrag.text import token_count

logger = logging.getLogger(__name__)


class CorpusError(ValueError):
    """Malformed corpus or cluster file."""


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    text: str
    out_links: tuple[str, ...]
    token_count: int


@dataclass
class Corpus:
    """Validated document collection. `dropped_links` counts hyperlinks that
    pointed at ids absent from the corpus (removed at ingest)."""

    docs: dict[str, Document]
    dropped_links: int = 0

    def __len__(self) -> int:
        return len(self.docs)

    def __getitem__(self, doc_id: str) -> Document:
        return self.docs[doc_id]

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self.docs

    @property
    def link_count(self) -> int:
        return sum(len(d.out_links) for d in self.docs.values())


@dataclass
class HyperlinkGraph:
    """Symmetrized link graph with per-node local clustering coefficients."""

    adjacency: dict[str, set[str]]
    lcc: dict[str, float]

    @property
    def nodes(self) -> set[str]:
        return set(self.adjacency)

    def degree(self, doc_id: str) -> int:
        return len(self.adjacency[doc_id])


@dataclass
class Cluster:
    cluster_id: str
    member_doc_ids: list[str]
    token_count: int


def make_corpus(docs: list[Document]) -> Corpus:
    """Validate and link-prune an in-memory document list."""
    by_id: dict[str, Document] = {}
    for doc in docs:
        if doc.doc_id in by_id:
            raise CorpusError(f"duplicate doc_id: {doc.doc_id!r}")
        by_id[doc.doc_id] = doc

    dropped = 0
    for doc_id, doc in by_id.items():
        kept = tuple(t for t in doc.out_links if t in by_id and t != doc_id)
        n_dropped = sum(1 for t in doc.out_links if t not in by_id)
        if n_dropped:
            dropped += n_dropped
            by_id[doc_id] = Document(
                doc.doc_id, doc.title, doc.text, kept, doc.token_count
            )
        elif len(kept) != len(doc.out_links):
            # only self-links removed; those are not counted as dangling
            by_id[doc_id] = Document(
                doc.doc_id, doc.title, doc.text, kept, doc.token_count
            )
    if dropped:
        logger.warning("dropped %d dangling links at ingest", dropped)
    return Corpus(by_id, dropped_links=dropped)


def ingest_corpus(path: str | Path) -> Corpus:
    """Load a JSONL corpus ({"id","title","text","links"} per line).

    Token counts are computed here; dangling links (targets missing from the
    file) are removed and counted. Raises CorpusError with the offending line
    number / doc id on malformed input.
    """
    docs: list[Document] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                doc = Document(
                    doc_id=str(rec["id"]),
                    title=str(rec.get("title", "")),
                    text=str(rec["text"]),
                    out_links=tuple(str(t) for t in rec.get("links", [])),
                    token_count=token_count(str(rec["text"])),
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorpusError(f"{path}:{lineno}: malformed corpus line: {exc}") from exc
            docs.append(doc)
    corpus = make_corpus(docs)
    logger.info(
        "ingested %d documents, %d links (%d dangling dropped)",
        len(corpus), corpus.link_count, corpus.dropped_links,
    )
    return corpus


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id in sorted(corpus.docs):
            d = corpus.docs[doc_id]
            fh.write(json.dumps(
                {"id": d.doc_id, "title": d.title, "text": d.text,
                 "links": list(d.out_links)},
                ensure_ascii=False) + "\n")


def build_graph(corpus: Corpus) -> HyperlinkGraph:
    """Symmetrize links and compute local clustering coefficients.

    lcc(d) = 2*T(d) / (deg(d) * (deg(d) - 1)) where T(d) counts edges among
    the neighbors of d; zero when deg(d) < 2.
    """
    adjacency: dict[str, set[str]] = {doc_id: set() for doc_id in corpus.docs}
    for doc in corpus.docs.values():
        for target in doc.out_links:
            adjacency[doc.doc_id].add(target)
            adjacency[target].add(doc.doc_id)

    lcc: dict[str, float] = {}
    for node, nbrs in adjacency.items():
        deg = len(nbrs)
        if deg < 2:
            lcc[node] = 0.0
            continue
        nbr_list = sorted(nbrs)
        triangles = 0
        for i, u in enumerate(nbr_list):
            adj_u = adjacency[u]
            for v in nbr_list[i + 1:]:
                if v in adj_u:
                    triangles += 1
        lcc[node] = 2.0 * triangles / (deg * (deg - 1))
    return HyperlinkGraph(adjacency=adjacency, lcc=lcc)


@dataclass
class _WorkCluster:
    # seed = first member; doubles as the deterministic cluster id
    seed: str
    members: list[str]
    member_set: set[str] = field(default_factory=set)
    tokens: int = 0

    def absorb(self, other: "_WorkCluster") -> None:
        self.members.extend(other.members)
        self.member_set.update(other.member_set)
        self.tokens += other.tokens


def cluster_documents(
    corpus: Corpus, graph: HyperlinkGraph, max_cluster_size: int
) -> list[Cluster]:
    """Greedy link-driven clustering under a token budget.

    Visit order: lcc desc, then degree desc, then doc_id. For each document
    still sitting in its own singleton, collect the clusters holding its
    neighbors, sort them by closeness (fraction of cluster members adjacent
    to the document; ties: more adjacent members, fewer tokens, cluster id)
    and merge each one whose tokens still fit the budget. Documents already
    merged into a larger cluster are skipped, which keeps the output a
    partition. A single oversized document stays a singleton.
    """
    if max_cluster_size < 1:
        raise ValueError("max_cluster_size must be >= 1")

    order = sorted(
        corpus.docs,
        key=lambda d: (-graph.lcc[d], -graph.degree(d), d),
    )

    holder: dict[str, _WorkCluster] = {}
    for doc_id, doc in corpus.docs.items():
        wc = _WorkCluster(seed=doc_id, members=[doc_id],
                          member_set={doc_id}, tokens=doc.token_count)
        holder[doc_id] = wc

    for doc_id in order:
        mine = holder[doc_id]
        if len(mine.members) > 1:
            continue  # already absorbed elsewhere; visited once by design

        related: dict[str, _WorkCluster] = {}
        adj = graph.adjacency[doc_id]
        for nbr in adj:
            wc = holder[nbr]
            if wc is not mine:
                related[wc.seed] = wc

        def closeness_key(wc: _WorkCluster) -> tuple:
            overlap = sum(1 for m in wc.members if m in adj)
            return (-overlap / len(wc.members), -overlap, wc.tokens, wc.seed)

        c_new = mine  # seed stays the visited document
        for wc in sorted(related.values(), key=closeness_key):
            if c_new.tokens + wc.tokens <= max_cluster_size:
                c_new.absorb(wc)
                for member in wc.members:
                    holder[member] = c_new

    uniq: dict[str, _WorkCluster] = {}
    for wc in holder.values():
        uniq[wc.seed] = wc
    return [
        Cluster(cluster_id=wc.seed, member_doc_ids=list(wc.members),
                token_count=wc.tokens)
        for wc in sorted(uniq.values(), key=lambda w: w.seed)
    ]


def write_clusters(clusters: list[Cluster], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for c in clusters:
            fh.write(json.dumps(
                {"cluster_id": c.cluster_id, "doc_ids": c.member_doc_ids,
                 "token_count": c.token_count},
                ensure_ascii=False) + "\n")


def read_clusters(path: str | Path) -> list[Cluster]:
    clusters: list[Cluster] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                cluster = Cluster(
                    cluster_id=str(rec["cluster_id"]),
                    member_doc_ids=[str(d) for d in rec["doc_ids"]],
                    token_count=int(rec["token_count"]),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CorpusError(f"{path}:{lineno}: malformed cluster line: {exc}") from exc
            if cluster.cluster_id in seen:
                raise CorpusError(f"duplicate cluster_id: {cluster.cluster_id!r}")
            if not cluster.member_doc_ids:
                raise CorpusError(f"{path}:{lineno}: empty cluster {cluster.cluster_id!r}")
            if len(set(cluster.member_doc_ids)) != len(cluster.member_doc_ids):
                raise CorpusError(
                    f"{path}:{lineno}: duplicate members in {cluster.cluster_id!r}")
            seen.add(cluster.cluster_id)
            clusters.append(cluster)
    return clusters
