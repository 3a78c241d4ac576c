"""Multi-hop knowledge-graph reasoning with fused local/global action scores."""

__version__ = "0.1.0"
