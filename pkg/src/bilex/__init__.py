"""Bilingual lexicon induction toolkit.

Pipeline: Procrustes alignment of monolingual embeddings, exact CSLS
candidate retrieval, lexical feature extraction (POS, term frequency,
retriever/reranker scores), and a listwise gradient-boosted tree ranker
optimizing mean average precision, with evaluation and error analysis.
"""

__version__ = "0.1.0"
