"""Contrastive entity matching: entity labels from match pairs, source-aware
SupCon pre-training of a compact text encoder, and pairwise fine-tuning."""

__version__ = "0.1.0"
