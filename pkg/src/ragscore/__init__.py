"""Evaluation harness for multimodal retrieval-augmented generation.

Computes a per-retrieval relevancy score and a per-span correctness score
through pluggable scorer endpoints, calibrates hard-decision labelers, and
measures alignment with human ratings.
"""

__version__ = "0.1.0"
