"""Few-shot action-to-motion generation toolkit.

Adapts a text-conditioned motion diffusion prior into a label-conditioned
generator from a handful of target samples, using embedding-space retrieval,
contrastive sequence alignment, attention-based window mining and a
quality-weighted multi-objective loss, plus a synthetic-augmentation
evaluation harness on a procedural toy corpus.
"""

__version__ = "0.1.0"
