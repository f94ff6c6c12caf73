"""Hypernetwork-generated, target-specific debiasing filters for fair
text classification, with target-aware fairness metrics and zero-shot
generalization to targets unseen during training."""

__version__ = "0.1.0"
