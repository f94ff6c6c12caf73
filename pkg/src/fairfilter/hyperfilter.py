"""Hypernetwork-generated, low-rank, target-specific debiasing filters.

For each filter layer l a shared 2-layer MLP maps a target indicator to a
flat vector of K*K + 2*d*K + K entries, reshaped (in fixed order) into the
low-rank factors U (d x K), W (K x K), V (K x (d+1)). Their product is the
concatenated [weight | bias] of that layer. Multi-target posts use the mean
of the per-target assembled matrices (parameter ensemble, not embedding
fusion).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamGroup, Tensor
from .errors import DimensionError, GraphError


def factor_arity(d: int, rank: int) -> int:
    """Generated entries per filter layer: K^2 + 2dK + K."""
    return rank * rank + 2 * d * rank + rank


def dense_arity(d: int) -> int:
    """Entries of a dense d x (d+1) filter layer, for the memory comparison."""
    return d * (d + 1)


@dataclass
class LowRankFactors:
    """The three generated factors for one filter layer of one target."""

    u: Tensor  # d x K
    w: Tensor  # K x K
    v: Tensor  # K x (d+1)


class HyperFilter:
    """Per-layer generator MLPs plus filter assembly and application."""

    def __init__(self, d: int, rank: int, depth: int, indicator_dim: int,
                 rng, hidden: int = 128):
        if rank < 1 or depth < 1:
            raise DimensionError("rank and depth must be >= 1")
        self.d = d
        self.rank = rank
        self.depth = depth
        self.indicator_dim = indicator_dim
        self.hidden = hidden
        self.group = ParamGroup("hyper")
        arity = factor_arity(d, rank)
        for layer in range(depth):
            self.group.add(f"L{layer}.W0", ad.glorot_init((indicator_dim, hidden), rng))
            self.group.add(f"L{layer}.b0", np.zeros(hidden))
            self.group.add(f"L{layer}.W1", ad.glorot_init((hidden, arity), rng))
            self.group.add(f"L{layer}.b1", np.zeros(arity))

    @property
    def arity(self) -> int:
        return factor_arity(self.d, self.rank)

    def generate_factors(self, indicator: np.ndarray, layer: int) -> LowRankFactors:
        """Run generator `layer` on an indicator and reshape U, then W, then V."""
        if layer < 0 or layer >= self.depth:
            raise DimensionError(f"layer {layer} out of range for depth {self.depth}")
        if indicator.shape != (self.indicator_dim,):
            raise DimensionError(
                f"indicator shape {indicator.shape} != ({self.indicator_dim},)")
        t = ad.constant(indicator.reshape(1, -1))
        h = ad.relu(ad.matmul(t, self.group.tensors[f"L{layer}.W0"])
                    + self.group.tensors[f"L{layer}.b0"])
        flat = ad.reshape(ad.matmul(h, self.group.tensors[f"L{layer}.W1"])
                          + self.group.tensors[f"L{layer}.b1"], (-1,))
        d, k = self.d, self.rank
        assert flat.data.size == self.arity
        u = ad.reshape(flat[0:d * k], (d, k))
        w = ad.reshape(flat[d * k:d * k + k * k], (k, k))
        v = ad.reshape(flat[d * k + k * k:], (k, d + 1))
        return LowRankFactors(u=u, w=w, v=v)


def assemble_theta(factors: LowRankFactors) -> Tensor:
    """U W V, the d x (d+1) concatenated [weight | bias] of one filter layer."""
    return ad.matmul(ad.matmul(factors.u, factors.w), factors.v)


def target_theta(hyper: HyperFilter, indicator: np.ndarray) -> list[Tensor]:
    """Assembled per-layer matrices for a single target."""
    return [assemble_theta(hyper.generate_factors(indicator, layer))
            for layer in range(hyper.depth)]


def ensemble_params(hyper: HyperFilter,
                    indicators: dict[str, np.ndarray],
                    cache: dict[str, list[Tensor]] | None = None) -> list[Tensor]:
    """Mean of the targets' assembled matrices, layer by layer.

    `cache` (keyed by target name) lets one training step reuse graph nodes
    across posts sharing targets; the mean is taken in sorted-name order so
    the result is independent of input ordering.
    """
    if not indicators:
        raise GraphError("ensemble_params called with an empty target set")
    names = sorted(indicators)
    thetas = []
    for name in names:
        if cache is not None and name in cache:
            thetas.append(cache[name])
        else:
            theta = target_theta(hyper, indicators[name])
            if cache is not None:
                cache[name] = theta
            thetas.append(theta)
    out = []
    for layer in range(hyper.depth):
        acc = thetas[0][layer]
        for other in thetas[1:]:
            acc = acc + other[layer]
        out.append(acc * (1.0 / len(names)))
    return out


def apply_filter(s: Tensor, thetas: list[Tensor]) -> Tensor:
    """Filter post embeddings s (n, d) through the assembled layers.

    Each layer is act(weight @ x + bias) with the weight being the first d
    columns and the bias the last column; ReLU between layers, identity at
    the end so the output lives in the same space as s.
    """
    d = thetas[0].data.shape[0]
    if s.data.ndim != 2 or s.data.shape[1] != d:
        raise DimensionError(f"apply_filter: embeddings shape {s.shape} vs d={d}")
    h = s
    for i, theta in enumerate(thetas):
        weight = theta[:, :d]
        bias = ad.reshape(theta[:, d], (1, d))
        h = ad.matmul(h, ad.transpose(weight)) + bias
        if i < len(thetas) - 1:
            h = ad.relu(h)
    return h


def flatten_theta(thetas: list[Tensor]) -> list[Tensor]:
    """Row-major flattening of each layer, as used by the gap-alignment loss."""
    return [ad.reshape(theta, (-1,)) for theta in thetas]
