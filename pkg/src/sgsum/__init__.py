"""Extractive multi-document summarization by sub-graph selection.

A cluster of related documents becomes a complete sentence graph whose
edges carry tf-idf cosine similarities. Sentences are encoded with a
hierarchical transformer whose sentence-level attention is biased by the
graph structure; candidate summaries are scored as induced sub-graphs and
the best-aligned sub-graph is emitted as the summary.
"""

__version__ = "0.1.0"
