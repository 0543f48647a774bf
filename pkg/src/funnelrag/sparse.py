"""BM25 inverted index over retrieval units.

Scoring: sum over query term occurrences of
    idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len / avg_len))
with idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)), which is never negative,
so "has a positive score" and "matched at least one term" coincide.

On-disk layout (directory):
    manifest.json  format_version, k1, b, analyzer, doc_count, avg_length,
                   postings_format ("binary" or "json")
    units.tsv      one `unit_id \\t length` line per unit, ordinal = line no.
    postings.bin   varint-encoded: [n_terms] then per term (sorted):
                   [len(term_utf8)][term bytes][n_postings]
                   [ordinal delta][tf] ... (unsigned LEB128, little-endian
                   base-128 groups, high bit = continuation)
    postings.json  debug alternative: {term: [[ordinal, tf], ...]}
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from funnelrag.chunker import RetrievalUnit
from funnelrag.text import analyze

FORMAT_VERSION = 1
DEFAULT_K1 = 1.5
DEFAULT_B = 0.75
ANALYZER_NAME = "lowercase-alnum"

Analyzer = Callable[[str], list[str]]


class SparseIndexError(ValueError):
    """Index construction or persistence failure."""


@dataclass(frozen=True)
class ScoredHit:
    unit_id: str
    score: float
    rank: int


@dataclass
class SparseIndex:
    unit_ids: list[str]
    unit_lengths: list[int]
    postings: dict[str, list[tuple[int, int]]]  # term -> [(ordinal, tf)]
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B
    analyzer: Analyzer = field(default=analyze, repr=False)

    @property
    def doc_count(self) -> int:
        return len(self.unit_ids)

    @property
    def avg_length(self) -> float:
        if not self.unit_lengths:
            return 0.0
        return sum(self.unit_lengths) / len(self.unit_lengths)

    @property
    def vocabulary(self) -> set[str]:
        return set(self.postings)

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log(1.0 + (self.doc_count - df + 0.5) / (df + 0.5))


def build_index(
    units: list[RetrievalUnit],
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
    analyzer: Analyzer = analyze,
) -> SparseIndex:
    """Index unit texts. Units analyzing to zero terms are kept (length 0)."""
    if k1 < 0:
        raise ValueError("k1 must be >= 0")
    if not 0.0 <= b <= 1.0:
        raise ValueError("b must be in [0, 1]")

    unit_ids: list[str] = []
    unit_lengths: list[int] = []
    postings: dict[str, list[tuple[int, int]]] = {}
    seen: set[str] = set()
    for ordinal, unit in enumerate(units):
        if unit.unit_id in seen:
            raise SparseIndexError(f"duplicate unit_id: {unit.unit_id!r}")
        seen.add(unit.unit_id)
        terms = analyzer(unit.text)
        unit_ids.append(unit.unit_id)
        unit_lengths.append(len(terms))
        for term, tf in Counter(terms).items():
            postings.setdefault(term, []).append((ordinal, tf))
    # ordinals are appended in increasing order already; sort defensively
    for plist in postings.values():
        plist.sort()
    return SparseIndex(unit_ids, unit_lengths, postings, k1=k1, b=b, analyzer=analyzer)


def search(index: SparseIndex, query: str, top_k: int) -> list[ScoredHit]:
    """Top-k units by BM25; ties broken by unit_id; zero scores dropped."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    terms = index.analyzer(query)
    if not terms or index.doc_count == 0:
        return []
    avg_len = index.avg_length
    k1, b = index.k1, index.b
    scores: dict[int, float] = {}
    for term in terms:  # repeated query terms contribute once per occurrence
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = index.idf(term)
        for ordinal, tf in plist:
            length = index.unit_lengths[ordinal]
            norm = 1.0 - b + (b * length / avg_len if avg_len > 0 else 0.0)
            scores[ordinal] = scores.get(ordinal, 0.0) + (
                idf * tf * (k1 + 1.0) / (tf + k1 * norm)
            )
    ranked = sorted(
        ((s, index.unit_ids[o]) for o, s in scores.items() if s > 0.0),
        key=lambda pair: (-pair[0], pair[1]),
    )[:top_k]
    return [ScoredHit(unit_id=uid, score=s, rank=i + 1)
            for i, (s, uid) in enumerate(ranked)]


# --- persistence -----------------------------------------------------------

def _write_varint(out: bytearray, value: int) -> None:
    if value < 0:
        raise ValueError("varints are unsigned")
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return


def _read_varint(buf: bytes, pos: int) -> tuple[int, int]:
    result = 0
    shift = 0
    while True:
        if pos >= len(buf):
            raise SparseIndexError("truncated varint in postings file")
        byte = buf[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            return result, pos
        shift += 7


def save_index(index: SparseIndex, out_dir: str | Path, postings_format: str = "binary") -> None:
    if postings_format not in ("binary", "json"):
        raise ValueError(f"unknown postings format {postings_format!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": FORMAT_VERSION,
        "k1": index.k1,
        "b": index.b,
        "analyzer": ANALYZER_NAME,
        "doc_count": index.doc_count,
        "avg_length": index.avg_length,
        "postings_format": postings_format,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    with open(out / "units.tsv", "w", encoding="utf-8") as fh:
        for uid, length in zip(index.unit_ids, index.unit_lengths):
            fh.write(f"{uid}\t{length}\n")

    terms = sorted(index.postings)
    if postings_format == "json":
        payload = {t: [[o, tf] for o, tf in index.postings[t]] for t in terms}
        (out / "postings.json").write_text(
            json.dumps(payload, ensure_ascii=False) + "\n", encoding="utf-8")
        return
    blob = bytearray()
    _write_varint(blob, len(terms))
    for term in terms:
        raw = term.encode("utf-8")
        _write_varint(blob, len(raw))
        blob.extend(raw)
        plist = index.postings[term]
        _write_varint(blob, len(plist))
        prev = 0
        for ordinal, tf in plist:
            _write_varint(blob, ordinal - prev)
            _write_varint(blob, tf)
            prev = ordinal
    (out / "postings.bin").write_bytes(bytes(blob))


def load_index(index_dir: str | Path, analyzer: Analyzer = analyze) -> SparseIndex:
    root = Path(index_dir)
    try:
        manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise SparseIndexError(f"{root}: not an index directory (missing manifest.json)")
    except json.JSONDecodeError as exc:
        raise SparseIndexError(f"{root}: bad manifest: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise SparseIndexError(
            f"unsupported index format_version {manifest.get('format_version')!r}")

    unit_ids: list[str] = []
    unit_lengths: list[int] = []
    with open(root / "units.tsv", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            uid, _, length = line.rpartition("\t")
            unit_ids.append(uid)
            unit_lengths.append(int(length))
    if len(unit_ids) != manifest["doc_count"]:
        raise SparseIndexError("unit count does not match manifest doc_count")

    postings: dict[str, list[tuple[int, int]]] = {}
    if manifest["postings_format"] == "json":
        payload = json.loads((root / "postings.json").read_text(encoding="utf-8"))
        for term, plist in payload.items():
            postings[term] = [(int(o), int(tf)) for o, tf in plist]
    else:
        buf = (root / "postings.bin").read_bytes()
        pos = 0
        n_terms, pos = _read_varint(buf, pos)
        for _ in range(n_terms):
            tlen, pos = _read_varint(buf, pos)
            term = buf[pos:pos + tlen].decode("utf-8")
            pos += tlen
            n_post, pos = _read_varint(buf, pos)
            plist = []
            prev = 0
            for _ in range(n_post):
                delta, pos = _read_varint(buf, pos)
                tf, pos = _read_varint(buf, pos)
                prev += delta
                plist.append((prev, tf))
            postings[term] = plist
    index = SparseIndex(unit_ids, unit_lengths, postings,
                        k1=float(manifest["k1"]), b=float(manifest["b"]),
                        analyzer=analyzer)
    return index
