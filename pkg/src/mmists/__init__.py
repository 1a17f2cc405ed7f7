"""Irregular multimodal time-series classification toolkit.

Pure-numpy models for sparse clinical-style episodes: a gated blend of
discretization-based and attention-based time-series embeddings, a matching
attention interpolator for irregular text timestamps, and an interleaved
self/cross-attention fusion classifier. Includes a small reverse-mode
autodiff core, evaluation metrics, a training harness, and a CLI.
"""

__version__ = "0.1.0"
