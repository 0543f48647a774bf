"""Later chunking: units are segmented only at the stage that needs them.

Cluster-level units feed the sparse stage, get cut into document-level units
before pre-ranking, and those get cut into passage windows before
post-ranking. Segmentation is token-exact and lossless: concatenating the
children's token sequences reproduces the parent's.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

from funnelrag.corpus import Cluster, Corpus
from funnelrag.text import ws_tokens


class Granularity(enum.IntEnum):
    # ordered coarse (high) to fine (low)
    CLUSTER = 2
    DOCUMENT = 1
    PASSAGE = 0

    @property
    def label(self) -> str:
        return _LABELS[self]


_LABELS = {
    Granularity.CLUSTER: "cluster",
    Granularity.DOCUMENT: "document",
    Granularity.PASSAGE: "passage",
}
_BY_LABEL = {v: k for k, v in _LABELS.items()}


def granularity_from_label(label: str) -> Granularity:
    try:
        return _BY_LABEL[label]
    except KeyError:
        raise ValueError(f"unknown granularity {label!r}") from None


@dataclass(frozen=True)
class RetrievalUnit:
    unit_id: str
    granularity: Granularity
    parent_id: str | None
    doc_id: str
    title: str
    text: str
    token_count: int


class ChunkError(ValueError):
    pass


def cluster_unit(cluster: Cluster, corpus: Corpus) -> RetrievalUnit:
    """Materialize a cluster as one coarse retrieval unit.

    Text is the space-join of member documents, so the token sequence is
    exactly the concatenation of member token sequences. Title and doc_id
    follow the first member (the cluster seed).
    """
    try:
        members = [corpus[d] for d in cluster.member_doc_ids]
    except KeyError as exc:
        raise ChunkError(f"cluster {cluster.cluster_id!r} references missing doc {exc}") from exc
    if not members:
        raise ChunkError(f"cluster {cluster.cluster_id!r} has no members")
    return RetrievalUnit(
        unit_id=cluster.cluster_id,
        granularity=Granularity.CLUSTER,
        parent_id=None,
        doc_id=members[0].doc_id,
        title=members[0].title,
        text=" ".join(m.text for m in members),
        token_count=sum(m.token_count for m in members),
    )


def segment_cluster(cluster: Cluster, corpus: Corpus) -> list[RetrievalUnit]:
    """One document-level unit per member, in member order."""
    units = []
    for doc_id in cluster.member_doc_ids:
        if doc_id not in corpus:
            raise ChunkError(
                f"cluster {cluster.cluster_id!r} references missing doc {doc_id!r}")
        doc = corpus[doc_id]
        units.append(RetrievalUnit(
            unit_id=doc.doc_id,
            granularity=Granularity.DOCUMENT,
            parent_id=cluster.cluster_id,
            doc_id=doc.doc_id,
            title=doc.title,
            text=doc.text,
            token_count=doc.token_count,
        ))
    return units


def segment_document(doc_unit: RetrievalUnit, passage_size: int) -> list[RetrievalUnit]:
    """Disjoint consecutive windows of `passage_size` tokens; the final
    window may be shorter. Unit ids are `<doc_id>#<window>`."""
    if doc_unit.granularity is not Granularity.DOCUMENT:
        raise ChunkError(f"expected a document-level unit, got {doc_unit.granularity.label}")
    if passage_size < 1:
        raise ValueError("passage_size must be >= 1")
    tokens = ws_tokens(doc_unit.text)
    passages = []
    for k, start in enumerate(range(0, len(tokens), passage_size)):
        window = tokens[start:start + passage_size]
        passages.append(RetrievalUnit(
            unit_id=f"{doc_unit.doc_id}#{k}",
            granularity=Granularity.PASSAGE,
            parent_id=doc_unit.unit_id,
            doc_id=doc_unit.doc_id,
            title=doc_unit.title,
            text=" ".join(window),
            token_count=len(window),
        ))
    return passages


def passage_doc_id(unit_id: str) -> str:
    """Recover the source document from a passage id (`doc#k` scheme)."""
    doc_id, sep, _ = unit_id.rpartition("#")
    if not sep:
        raise ChunkError(f"{unit_id!r} is not a passage unit id")
    return doc_id


def write_units(units: list[RetrievalUnit], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u in units:
            fh.write(json.dumps({
                "unit_id": u.unit_id,
                "granularity": u.granularity.label,
                "parent_id": u.parent_id,
                "doc_id": u.doc_id,
                "title": u.title,
                "text": u.text,
                "token_count": u.token_count,
            }, ensure_ascii=False) + "\n")


def read_units(path: str | Path) -> list[RetrievalUnit]:
    units = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                units.append(RetrievalUnit(
                    unit_id=str(rec["unit_id"]),
                    granularity=granularity_from_label(rec["granularity"]),
                    parent_id=rec.get("parent_id"),
                    doc_id=str(rec["doc_id"]),
                    title=str(rec.get("title", "")),
                    text=str(rec["text"]),
                    token_count=int(rec["token_count"]),
                ))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ChunkError(f"{path}:{lineno}: malformed unit line: {exc}") from exc
    return units
