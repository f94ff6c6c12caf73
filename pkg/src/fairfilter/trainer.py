"""Alternating adversarial training with freeze semantics and checkpoints.

Each outer round first trains the target discriminator for N epochs (filter,
classifier, and adapter frozen), then trains filter + classifier + adapter
for N' epochs against the synergic loss with the discriminator frozen.
Rounds continue until the round cap or until the validation composite
(F1 - HF) stops improving; the best-validation snapshot is returned.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import hyperfilter as hf
from . import objectives as obj
from .autodiff import AdamState, ParamGroup, Tensor
from .data import CorpusSplit, PostRecord
from .embeddings import EncoderAdapter, WordVectorStore, build_indicator
from .errors import (CheckpointError, ConfigError, DataError, DivergenceError,
                     GraphError)
from .heads import ClassifierHead, DiscriminatorHead
from .metrics import build_report

CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    """Hyperparameters of the alternating optimization."""

    lam: float = 0.9
    gamma: float = 3.0
    mu: float = 0.9
    rank: int = 1
    depth: int = 1
    hidden_dim: int = 256
    n_dis: int = 1
    n_filter: int = 5
    batch_size: int = 128
    lr: float = 1e-3
    lr_dis: float = 1e-3
    max_rounds: int = 30
    patience: int = 5
    seed: int = 0
    threshold: float = 0.5
    hyper_hidden: int = 128
    head_hidden: int = 256
    adapter_depth: int = 1

    def validate(self) -> "TrainConfig":
        if self.lam < 0 or self.gamma < 0 or self.mu < 0:
            raise ConfigError("loss coefficients must be non-negative")
        if self.rank < 1 or self.depth < 1 or self.hidden_dim < 1:
            raise ConfigError("rank, depth, and hidden_dim must be >= 1")
        if self.n_dis < 0 or self.n_filter < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lr <= 0 or self.lr_dis <= 0:
            raise ConfigError("learning rates must be positive")
        if self.max_rounds < 1:
            raise ConfigError("max_rounds must be >= 1")
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError("threshold must lie in (0, 1)")
        return self


class Model:
    """All trainable parameter groups plus the seen-target indicator table."""

    def __init__(self, config: TrainConfig, d_in: int, indicator_dim: int,
                 seen_targets: list[str], indicators: dict[str, np.ndarray]):
        missing = [t for t in seen_targets if t not in indicators]
        if missing:
            raise ConfigError(f"no indicator for seen targets: {missing}")
        self.config = config
        self.d_in = d_in
        self.indicator_dim = indicator_dim
        self.seen_targets = list(seen_targets)
        self.indicators = {t: np.asarray(indicators[t], dtype=np.float64)
                           for t in seen_targets}
        d = config.hidden_dim
        rng = np.random.default_rng(config.seed)
        self.adapter = EncoderAdapter(d_in, d, rng, depth=config.adapter_depth)
        self.hyper = hf.HyperFilter(d, config.rank, config.depth, indicator_dim,
                                    rng, hidden=config.hyper_hidden)
        self.discriminator = DiscriminatorHead(d, len(seen_targets), rng,
                                               hidden=config.head_hidden)
        self.classifier = ClassifierHead(d, rng, hidden=config.head_hidden)

    @property
    def groups(self) -> dict[str, ParamGroup]:
        return {"enc": self.adapter.group, "hyper": self.hyper.group,
                "dis": self.discriminator.group, "hate": self.classifier.group}

    def multi_hot(self, records: list[PostRecord]) -> np.ndarray:
        index = {t: i for i, t in enumerate(self.seen_targets)}
        out = np.zeros((len(records), len(self.seen_targets)))
        for row, record in enumerate(records):
            for t in record.target_set:
                if t in index:
                    out[row, index[t]] = 1.0
        return out

    def filter_batch(self, records: list[PostRecord],
                     indicators: dict[str, np.ndarray] | None = None
                     ) -> tuple[Tensor, Tensor, np.ndarray]:
        """Encode, then filter each post with its target-set ensemble.

        Returns (unfiltered s, filtered s_tilde, permutation) where both
        tensors hold rows in `permutation` order relative to `records`.
        """
        from .embeddings import encode_posts

        indicators = indicators if indicators is not None else self.indicators
        s = encode_posts(records, self.adapter)
        by_set: dict[frozenset, list[int]] = {}
        for i, record in enumerate(records):
            by_set.setdefault(record.target_set, []).append(i)
        cache: dict[str, list[Tensor]] = {}
        perm: list[int] = []
        filtered = []
        for tset in sorted(by_set, key=sorted):
            idx = by_set[tset]
            subset = {t: indicators[t] for t in tset}
            thetas = hf.ensemble_params(self.hyper, subset, cache=cache)
            filtered.append(hf.apply_filter(ad.take_rows(s, idx), thetas))
            perm.extend(idx)
        perm_arr = np.asarray(perm, dtype=np.intp)
        s_perm = ad.take_rows(s, perm_arr)
        s_tilde = ad.concat_rows(filtered)
        return s_perm, s_tilde, perm_arr

    def predict(self, records: list[PostRecord],
                indicators: dict[str, np.ndarray]) -> np.ndarray:
        """Hatefulness scores aligned with `records` (filters generated on the fly)."""
        scores = np.empty(len(records))
        for start in range(0, len(records), self.config.batch_size):
            chunk = records[start:start + self.config.batch_size]
            _, s_tilde, perm = self.filter_batch(chunk, indicators)
            y_hat = self.classifier.forward(s_tilde).data.reshape(-1)
            scores[start + perm] = y_hat
        return scores


@dataclass
class TrainState:
    model: Model
    adam: dict[str, AdamState]
    round: int = 0
    global_step: int = 0
    best_composite: float = -np.inf
    best_round: int = -1
    best_params: dict[str, dict[str, np.ndarray]] | None = None
    history: list[dict] = field(default_factory=list)
    val_history: list[dict] = field(default_factory=list)
    telemetry: list[dict] = field(default_factory=list)


def _minibatches(records: list[PostRecord], batch_size: int,
                 rng: np.random.Generator):
    order = rng.permutation(len(records))
    for start in range(0, len(records), batch_size):
        yield [records[i] for i in order[start:start + batch_size]]


def _set_phase(model: Model, phase: str) -> None:
    groups = model.groups
    if phase == "dis":
        for name in ("enc", "hyper", "hate"):
            groups[name].freeze()
        groups["dis"].unfreeze()
    elif phase == "filter":
        groups["dis"].freeze()
        for name in ("enc", "hyper", "hate"):
            groups[name].unfreeze()
    else:
        raise GraphError(f"unknown phase '{phase}'")


def _check_phase(model: Model, phase: str) -> None:
    frozen = {name: g.frozen for name, g in model.groups.items()}
    want_frozen = {"dis": ("enc", "hyper", "hate"), "filter": ("dis",)}[phase]
    for name in want_frozen:
        if not frozen[name]:
            raise GraphError(f"phase '{phase}': group '{name}' must be frozen")
    for name in frozen:
        if name not in want_frozen and frozen[name]:
            raise GraphError(f"phase '{phase}': group '{name}' must be unfrozen")


def _batch_stats(records: list[PostRecord]) -> dict:
    embeddings = np.stack([r.embedding for r in records])
    return {"batch_size": len(records),
            "labels_mean": float(np.mean([r.label for r in records])),
            "embedding_absmax": float(np.max(np.abs(embeddings)))}


def _guard_finite(value: float, what: str, batch: list[PostRecord]) -> None:
    if not np.isfinite(value):
        raise DivergenceError(
            f"non-finite {what}; last batch: {json.dumps(_batch_stats(batch))}")


def phase_discriminator(state: TrainState, records: list[PostRecord],
                        epochs: int, rng: np.random.Generator) -> None:
    """N epochs of discriminator-only minibatch updates (rest frozen)."""
    model = state.model
    _check_phase(model, "dis")
    for epoch in range(epochs):
        epoch_losses = []
        for batch in _minibatches(records, model.config.batch_size, rng):
            _, s_tilde, perm = model.filter_batch(batch)
            p_hat = model.discriminator.forward(s_tilde)
            p = model.multi_hot([batch[i] for i in perm])
            l_dis = obj.loss_dis(p_hat, p)
            _guard_finite(l_dis.item(), "discriminator loss", batch)
            ad.backward(l_dis)
            ad.adam_step(model.discriminator.group, state.adam["dis"])
            state.global_step += 1
            epoch_losses.append(l_dis.item())
            state.telemetry.append({
                "step": state.global_step, "phase": "dis",
                "l_hate": "", "l_dis": l_dis.item(), "l_reg": "", "l_imi": "",
                "synergic": ""})
        state.history.append({"round": state.round, "phase": "dis",
                              "epoch": epoch, "l_dis": float(np.mean(epoch_losses))})


def phase_filter(state: TrainState, records: list[PostRecord],
                 epochs: int, rng: np.random.Generator) -> None:
    """N' epochs of synergic-loss updates on filter, classifier, and adapter."""
    model = state.model
    cfg = model.config
    _check_phase(model, "filter")
    for epoch in range(epochs):
        epoch_bundles = []
        for batch in _minibatches(records, cfg.batch_size, rng):
            s, s_tilde, perm = model.filter_batch(batch)
            ordered = [batch[i] for i in perm]
            y = np.asarray([r.label for r in ordered])
            y_hat = model.classifier.forward(s_tilde)
            y_hat_prime = model.classifier.forward(s)
            p_hat = model.discriminator.forward(s_tilde)

            l_hate = obj.loss_hate(y_hat, y)
            l_dis = obj.loss_dis(p_hat, model.multi_hot(ordered))
            l_imi = obj.loss_imi(y_hat, y_hat_prime)
            if cfg.mu > 0 and len(model.seen_targets) >= 2:
                flat = {t: hf.flatten_theta(hf.target_theta(model.hyper,
                                                            model.indicators[t]))
                        for t in model.seen_targets}
                l_reg = obj.loss_reg(model.indicators, flat)
            else:
                l_reg = ad.constant(0.0)
            combined = obj.synergic(l_hate, l_dis, l_reg, l_imi,
                                    cfg.lam, cfg.gamma, cfg.mu)
            _guard_finite(combined.item(), "synergic loss", batch)
            ad.backward(combined)
            for name in ("enc", "hyper", "hate"):
                ad.adam_step(model.groups[name], state.adam[name])
            state.global_step += 1
            epoch_bundles.append(obj.bundle(l_hate, l_dis, l_reg, l_imi, combined))
            state.telemetry.append({
                "step": state.global_step, "phase": "filter",
                "l_hate": l_hate.item(), "l_dis": l_dis.item(),
                "l_reg": l_reg.item(), "l_imi": l_imi.item(),
                "synergic": combined.item()})
        state.history.append({
            "round": state.round, "phase": "filter", "epoch": epoch,
            "l_hate": float(np.mean([b.l_hate for b in epoch_bundles])),
            "l_dis": float(np.mean([b.l_dis for b in epoch_bundles])),
            "l_reg": float(np.mean([b.l_reg for b in epoch_bundles])),
            "l_imi": float(np.mean([b.l_imi for b in epoch_bundles])),
            "synergic": float(np.mean([b.synergic for b in epoch_bundles]))})


def _snapshot(model: Model) -> dict[str, dict[str, np.ndarray]]:
    return {name: group.state_dict() for name, group in model.groups.items()}


def _restore(model: Model, snapshot: dict[str, dict[str, np.ndarray]]) -> None:
    for name, group in model.groups.items():
        group.load_state_dict(snapshot[name])


def fit(config: TrainConfig, split: CorpusSplit,
        indicators: dict[str, np.ndarray], d_in: int | None = None) -> TrainState:
    """Run the full alternating optimization and return the best snapshot.

    `indicators` must cover every target mentioned in train and validation.
    """
    config.validate()
    if not split.train:
        raise DataError("empty training split")
    seen = sorted({t for r in split.train for t in r.targets})
    for r in split.validation:
        for t in r.targets:
            if t not in indicators:
                raise ConfigError(f"validation target '{t}' has no indicator")
    if d_in is None:
        d_in = split.train[0].embedding.shape[0]
    indicator_dim = len(next(iter(indicators.values())))
    model = Model(config, d_in, indicator_dim, seen, indicators)
    adam = {"dis": AdamState(lr=config.lr_dis),
            "enc": AdamState(lr=config.lr),
            "hyper": AdamState(lr=config.lr),
            "hate": AdamState(lr=config.lr)}
    state = TrainState(model=model, adam=adam)
    rng = np.random.default_rng(config.seed + 1)
    val_indicators = dict(model.indicators)
    for r in split.validation:
        for t in r.targets:
            val_indicators.setdefault(t, indicators[t])

    rounds_since_best = 0
    for round_no in range(config.max_rounds):
        state.round = round_no
        _set_phase(model, "dis")
        phase_discriminator(state, split.train, config.n_dis, rng)
        _set_phase(model, "filter")
        phase_filter(state, split.train, config.n_filter, rng)

        if split.validation:
            scores = model.predict(split.validation, val_indicators)
            report = build_report({r.id: s for r, s in zip(split.validation, scores)},
                                  split.validation, threshold=config.threshold)
            composite = report.f1 - report.hf
            state.val_history.append({
                "round": round_no, "val_f1": report.f1, "val_hf": report.hf,
                "val_accuracy": report.accuracy, "composite": composite})
            if composite > state.best_composite:
                state.best_composite = composite
                state.best_round = round_no
                state.best_params = _snapshot(model)
                rounds_since_best = 0
            else:
                rounds_since_best += 1
            if rounds_since_best > config.patience:
                break

    if state.best_params is not None:
        _restore(model, state.best_params)
    else:
        state.best_params = _snapshot(model)
        state.best_round = state.round
    for group in model.groups.values():
        group.unfreeze()
    return state


def write_telemetry(state: TrainState, path) -> None:
    fields = ["step", "phase", "l_hate", "l_dis", "l_reg", "l_imi", "synergic"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(state.telemetry)


def checkpoint_save(model: Model, path) -> None:
    """Write all parameter groups, indicators, and a versioned header."""
    payload: dict[str, np.ndarray] = {}
    for gname, group in sorted(model.groups.items()):
        for tname, tensor in sorted(group.tensors.items()):
            payload[f"param/{gname}/{tname}"] = tensor.data
    for target in model.seen_targets:
        payload[f"indicator/{target}"] = model.indicators[target]
    meta = {
        "version": CHECKPOINT_VERSION,
        "d_in": model.d_in,
        "indicator_dim": model.indicator_dim,
        "seen_targets": model.seen_targets,
        "config": asdict(model.config),
    }
    payload["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    ordered = {k: payload[k] for k in sorted(payload)}
    with open(path, "wb") as fh:
        np.savez(fh, **ordered)


def checkpoint_load(path) -> Model:
    """Rebuild a Model from a checkpoint; predictions match the saved model."""
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint '{path}': {exc}") from None
    if "__meta__" not in archive:
        raise CheckpointError(f"checkpoint '{path}' lacks a header")
    meta = json.loads(str(archive["__meta__"]))
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint version {meta.get('version')} != {CHECKPOINT_VERSION}")
    config = TrainConfig(**meta["config"])
    indicators = {t: archive[f"indicator/{t}"] for t in meta["seen_targets"]}
    model = Model(config, meta["d_in"], meta["indicator_dim"],
                  meta["seen_targets"], indicators)
    for gname, group in model.groups.items():
        stored = {}
        for tname, tensor in group.tensors.items():
            key = f"param/{gname}/{tname}"
            if key not in archive:
                raise CheckpointError(f"checkpoint missing tensor '{key}'")
            stored[tname] = archive[key]
        group.load_state_dict(stored)
    return model


def eval_indicators(model: Model, records: list[PostRecord],
                    store: WordVectorStore | None
                    ) -> tuple[dict[str, np.ndarray], list[PostRecord], list[str]]:
    """Indicator table covering the records' targets, built on the fly.

    Unresolvable targets (no word vectors) exclude their records; returns
    (indicators, usable records, warning messages).
    """
    indicators = dict(model.indicators)
    warnings_out: list[str] = []
    bad_targets: set[str] = set()
    for record in records:
        for t in record.target_set:
            if t in indicators or t in bad_targets:
                continue
            if store is None:
                bad_targets.add(t)
                warnings_out.append(f"target '{t}': no word-vector store supplied")
                continue
            try:
                ind = build_indicator(t, store)
            except DataError as exc:
                bad_targets.add(t)
                warnings_out.append(str(exc))
                continue
            if ind.skipped:
                warnings_out.append(
                    f"target '{t}': skipped OOV tokens {ind.skipped}")
            indicators[t] = ind.vector
    usable = [r for r in records if not (r.target_set & bad_targets)]
    for r in records:
        dropped = r.target_set & bad_targets
        if dropped:
            warnings_out.append(
                f"record '{r.id}' excluded (unresolvable targets {sorted(dropped)})")
    return indicators, usable, warnings_out
