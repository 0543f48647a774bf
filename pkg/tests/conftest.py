from __future__ import annotations

import pytest

from funnelrag.corpus import Corpus, Document, make_corpus


def doc(doc_id: str, tokens: int = 10, links: tuple[str, ...] = (),
        title: str | None = None, text: str | None = None) -> Document:
    if text is None:
        text = " ".join(f"{doc_id.lower()}t{i}" for i in range(tokens))
    return Document(doc_id=doc_id, title=title if title is not None else doc_id,
                    text=text, out_links=tuple(links),
                    token_count=len(text.split()))


def corpus_of(*docs: Document) -> Corpus:
    return make_corpus(list(docs))


@pytest.fixture
def toy_corpus() -> Corpus:
    return corpus_of(
        doc("A", 6, links=("B", "C")),
        doc("B", 6, links=("C",)),
        doc("C", 6),
        doc("D", 6, links=("C",)),
    )
