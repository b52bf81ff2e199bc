"""Keywords-guided method name generation: graph-based keyword extraction
and a guided graph-to-sequence generator with ROUGE evaluation."""

__version__ = "0.1.0"
