"""Coarse-to-fine progressive retrieval engine."""

__version__ = "0.1.0"

from funnelrag.chunker import Granularity, RetrievalUnit
from funnelrag.config import FunnelConfig
from funnelrag.corpus import Cluster, Corpus, Document, HyperlinkGraph
from funnelrag.pipeline import FunnelTrace, Resources, run_batch, run_funnel
from funnelrag.rank import AggregationScheme, AttentionTensor, ScorerHandle
from funnelrag.sparse import ScoredHit, SparseIndex

__all__ = [
    "AggregationScheme",
    "AttentionTensor",
    "Cluster",
    "Corpus",
    "Document",
    "FunnelConfig",
    "FunnelTrace",
    "Granularity",
    "HyperlinkGraph",
    "Resources",
    "RetrievalUnit",
    "ScoredHit",
    "ScorerHandle",
    "SparseIndex",
    "run_batch",
    "run_funnel",
    "__version__",
]
