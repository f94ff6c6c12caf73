"""The two prediction heads: multi-label target discriminator and binary
hate-speech classifier. Both are 3-affine-layer MLPs with sigmoid readouts;
outputs are clamped away from 0/1 so downstream log losses stay finite.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DimensionError

PROB_FLOOR = 1e-7


def _clamped_sigmoid(logits: Tensor) -> Tensor:
    return ad.clip(ad.sigmoid(logits), PROB_FLOOR, 1.0 - PROB_FLOOR)


class DiscriminatorHead:
    """Maps a (filtered) post embedding to independent per-target probabilities.

    The output arity is fixed at construction to the seen-target count; the
    entries are individual binary scores, not a normalized distribution.
    """

    def __init__(self, d: int, n_targets: int, rng, hidden: int = 256):
        if n_targets < 1:
            raise DimensionError("discriminator needs at least one target")
        self.d = d
        self.n_targets = n_targets
        self.group = ad.init_mlp("dis", [d, hidden, hidden, n_targets], rng)

    def forward(self, s: Tensor) -> Tensor:
        if s.data.ndim != 2 or s.data.shape[1] != self.d:
            raise DimensionError(f"discriminator expects (n, {self.d}), got {s.shape}")
        return _clamped_sigmoid(ad.mlp_forward(s, self.group))


class ClassifierHead:
    """Maps a post embedding to a single hatefulness probability.

    The same head object scores both filtered and unfiltered embeddings; the
    imitation loss depends on them sharing parameters.
    """

    def __init__(self, d: int, rng, hidden: int = 256):
        self.d = d
        self.group = ad.init_mlp("hate", [d, hidden, hidden, 1], rng)

    def forward(self, s: Tensor) -> Tensor:
        if s.data.ndim != 2 or s.data.shape[1] != self.d:
            raise DimensionError(f"classifier expects (n, {self.d}), got {s.shape}")
        return _clamped_sigmoid(ad.mlp_forward(s, self.group))


def decide(scores: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Binary decisions at a threshold; score > threshold means hateful."""
    return (np.asarray(scores) > threshold).astype(int)
