"""Model-serving shim for the retrieval engine's scoring wire protocol."""

__version__ = "0.1.0"
