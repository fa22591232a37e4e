"""Two-phase training protocol plus the baseline and ablation trainers.

Phase 1 trains the delegator's feature extractor and task predictor with a
plain cross-entropy loss on the class labels, then freezes them.  Phase 2
jointly optimizes the expert selector and the experts: per batch, the
experts' true-class probabilities drive the balanced selection labels and
per-sample selection-loss weights; the selector's probabilities drive the
balanced assignment that (after smoothing and normalization) reweights the
expert losses.  The combined objective is

    total = eta * selection_loss + expert_loss        (eta defaults to 0.8)

with gradients flowing only into the selector and the experts.  Labels,
selection-loss weights and the expert weight matrix are treated as
constants when differentiating.

Baselines: a soft gate-value trainer (selector probabilities scale a
mixture of expert outputs, one CE on the mixture), an independent-expert
ensemble trainer, a random category-partition trainer, and a plain
single-expert trainer.

Everything is single-threaded and deterministic: a (seed, config) pair
reproduces the training trajectory bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from coex import nn
from coex.data import Dataset
from coex.labels import (
    one_hot,
    raw_tcp_labels,
    selection_labels,
    selection_loss_weights,
    standardize_suitability,
    true_class_probs,
)
from coex.models import (
    Bundle,
    Delegator,
    Expert,
    build_delegator,
    build_expert,
    delegator_profile,
    expert_profile,
)
from coex.transport import balanced_demands
from coex.util import atomic_write_text, rng_for, subseed
from coex.weights import (
    alpha_schedule,
    argmax_assignment,
    balanced_assignment,
    normalize_weights,
    smooth_assignment,
)

MODES = ("coe", "gate_value_soft", "ensemble", "category_random", "single_expert")
ABLATIONS = ("LGM_off", "LGM_star", "WGM_off", "WGM_star", "WGM_circ",
             "WGM_bullet", "SR_off")


@dataclass
class TrainConfig:
    n_experts: int = 4
    epochs_phase1: int = 10
    epochs_phase2: int = 25
    batch_size: int = 64
    eta: float = 0.8
    alpha_start: float = 0.2
    alpha_end: float = 0.8
    seed: int = 0
    mode: str = "coe"
    ablations: tuple = ()
    input_dim: int = 32
    feat_dim: int = 32
    extractor_hidden: tuple = (32,)
    expert_hidden: tuple = (32, 32)
    selector_hidden: int = 100
    expert_width_factors: tuple | None = None
    lr_phase1: float = 0.05
    lr_phase2: float = 0.02
    momentum: float = 0.9
    cache_features: bool = False
    debug_dump_dir: str | None = None

    def __post_init__(self):
        self.ablations = tuple(self.ablations)
        self.extractor_hidden = tuple(self.extractor_hidden)
        self.expert_hidden = tuple(self.expert_hidden)
        if self.expert_width_factors is not None:
            self.expert_width_factors = tuple(self.expert_width_factors)
            if len(self.expert_width_factors) != self.n_experts:
                raise ValueError("expert_width_factors must list one factor per expert")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if self.batch_size < self.n_experts:
            raise ValueError("batch_size must be at least n_experts")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; valid: {MODES}")
        unknown = set(self.ablations) - set(ABLATIONS)
        if unknown:
            raise ValueError(f"unknown ablations {sorted(unknown)}; valid: {ABLATIONS}")

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("ablations", "extractor_hidden", "expert_hidden", "expert_width_factors"):
            if d[key] is not None:
                d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        valid = set(cls.__dataclass_fields__)
        unknown = set(d) - valid
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainReport:
    records: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def write(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        lines = [json.dumps(r, sort_keys=True) for r in self.records]
        atomic_write_text(directory / "report.jsonl", "\n".join(lines) + "\n")
        atomic_write_text(directory / "summary.json",
                          json.dumps(self.summary, sort_keys=True, indent=2) + "\n")


def _params_digest(*mlps: nn.Mlp) -> str:
    h = hashlib.sha256()
    for mlp in mlps:
        for p in mlp.parameters():
            h.update(p.tobytes())
    return h.hexdigest()


def _cosine_lr(base: float, step: int, total: int) -> float:
    return base * 0.5 * (1.0 + math.cos(math.pi * step / max(total, 1)))


def _batches(n_samples: int, batch_size: int, order: np.ndarray):
    """Full batches only; a trailing remainder is dropped."""
    for start in range(0, n_samples - batch_size + 1, batch_size):
        yield order[start:start + batch_size]


def rough_accuracy(delegator: Delegator, ds: Dataset) -> float:
    feats, _ = nn.forward(delegator.extractor, ds.features)
    logits, _ = nn.forward(delegator.task_head, feats)
    return float((np.argmax(logits, axis=1) == ds.labels).mean())


def expert_accuracy(expert: Expert, ds: Dataset) -> float:
    logits, _ = nn.forward(expert.net, ds.features)
    return float((np.argmax(logits, axis=1) == ds.labels).mean())


def selection_loss(selection_probs, label_matrix, sample_weights):
    """Weighted CE of the selector output against one-hot labels; the
    gradient is w.r.t. the selector logits."""
    labels = np.asarray(label_matrix)
    if labels.shape != np.asarray(selection_probs).shape:
        raise ValueError("selection probabilities and labels must share a shape")
    targets = np.argmax(labels, axis=1)
    return nn.weighted_cross_entropy(selection_probs, targets, sample_weights)


def expert_loss(expert_probs, targets, weight_matrix):
    """Total reweighted expert CE plus a per-expert logits gradient.

    weight_matrix[:, k] weights expert k's per-sample CE; zero-weight
    columns contribute nothing and produce zero gradients.
    """
    y = np.asarray(targets, dtype=np.int64)
    w = np.asarray(weight_matrix, dtype=np.float64)
    if w.ndim != 2 or w.shape[1] != len(expert_probs) or w.shape[0] != y.shape[0]:
        raise ValueError("weight matrix must be (batch, n_experts)")
    if (w < 0).any():
        raise ValueError("expert loss weights must be nonnegative")
    total = 0.0
    grads = []
    rows = np.arange(y.shape[0])
    for k, probs in enumerate(expert_probs):
        p = np.asarray(probs, dtype=np.float64)
        if p.shape[0] != y.shape[0]:
            raise ValueError(f"expert {k}: batch size mismatch")
        picked = np.clip(p[rows, y], nn.PROB_EPS, None)
        total += float(-(w[:, k] * np.log(picked)).sum())
        g = p.copy()
        g[rows, y] -= 1.0
        g *= w[:, k][:, None]
        grads.append(g)
    return total, grads


def train_phase1(delegator: Delegator, train_ds: Dataset, val_ds: Dataset,
                 cfg: TrainConfig) -> list:
    """Train the feature extractor and task predictor with plain CE; the
    expert selector is untouched."""
    n_samples = len(train_ds)
    if n_samples < cfg.batch_size:
        raise ValueError("dataset smaller than one batch")
    params = delegator.extractor.parameters() + delegator.task_head.parameters()
    state = nn.SgdState(learning_rate=cfg.lr_phase1, momentum=cfg.momentum)
    selector_digest = _params_digest(delegator.selector)
    n_batches = n_samples // cfg.batch_size
    total_steps = max(cfg.epochs_phase1 * n_batches, 1)
    uniform = np.full(cfg.batch_size, 1.0 / cfg.batch_size)
    records = []
    step = 0
    for epoch in range(cfg.epochs_phase1):
        order = rng_for(cfg.seed, f"phase1-epoch{epoch}").permutation(n_samples)
        loss_sum = 0.0
        correct = 0
        for idx in _batches(n_samples, cfg.batch_size, order):
            x, y = train_ds.features[idx], train_ds.labels[idx]
            feats, ex_cache = nn.forward(delegator.extractor, x)
            logits, head_cache = nn.forward(delegator.task_head, feats)
            probs = nn.softmax_rows(logits)
            loss, dlogits = nn.weighted_cross_entropy(probs, y, uniform)
            head_grads, dfeats = nn.backward(delegator.task_head, head_cache, dlogits)
            ex_grads, _ = nn.backward(delegator.extractor, ex_cache, dfeats)
            state.learning_rate = _cosine_lr(cfg.lr_phase1, step, total_steps)
            nn.sgd_step(params, ex_grads + head_grads, state)
            loss_sum += loss
            correct += int((np.argmax(logits, axis=1) == y).sum())
            step += 1
        records.append({
            "phase": 1,
            "epoch": epoch,
            "loss": loss_sum / n_batches,
            "train_rough_accuracy": correct / (n_batches * cfg.batch_size),
            "val_rough_accuracy": rough_accuracy(delegator, val_ds),
        })
    assert _params_digest(delegator.selector) == selector_digest, \
        "phase 1 must not touch the expert selector"
    return records


def _dump_debug(directory: str, step: int, named_matrices: dict) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for name, mat in named_matrices.items():
        np.savetxt(out / f"step{step:06d}_{name}.csv", np.atleast_2d(mat), delimiter=",")


def train_phase2(delegator: Delegator, experts: list, train_ds: Dataset,
                 val_ds: Dataset, cfg: TrainConfig) -> list:
    """Jointly optimize the expert selector and the experts; the extractor
    and task predictor stay frozen (asserted every epoch)."""
    abl = set(cfg.ablations)
    n = len(experts)
    m = cfg.batch_size
    n_samples = len(train_ds)
    if n_samples < m:
        raise ValueError("dataset smaller than one batch")
    frozen_digest = _params_digest(delegator.extractor, delegator.task_head)

    sel_state = nn.SgdState(learning_rate=cfg.lr_phase2, momentum=cfg.momentum)
    expert_states = [nn.SgdState(learning_rate=cfg.lr_phase2, momentum=cfg.momentum)
                     for _ in experts]
    n_batches = n_samples // m
    total_steps = max(cfg.epochs_phase2 * n_batches, 1)
    demands = balanced_demands(m, n)
    uniform = np.full(m, 1.0 / m)

    cached_feats = None
    if cfg.cache_features:
        cached_feats, _ = nn.forward(delegator.extractor, train_ds.features)

    lgm_off = "LGM_off" in abl
    records = []
    step = 0
    for epoch in range(cfg.epochs_phase2):
        order = rng_for(cfg.seed, f"phase2-epoch{epoch}").permutation(n_samples)
        sel_loss_sum = 0.0
        expert_loss_sum = 0.0
        total_loss_sum = 0.0
        selector_hits = 0
        assign_counts = np.zeros(n, dtype=np.int64)
        for idx in _batches(n_samples, m, order):
            x, y = train_ds.features[idx], train_ds.labels[idx]
            if cached_feats is not None:
                feats = cached_feats[idx]
            else:
                feats, _ = nn.forward(delegator.extractor, x)
            sel_logits, sel_cache = nn.forward(delegator.selector, feats)
            selection_probs = nn.softmax_rows(sel_logits)
            expert_probs, expert_caches = [], []
            for expert in experts:
                logits, cache = nn.forward(expert.net, x)
                expert_probs.append(nn.softmax_rows(logits))
                expert_caches.append(cache)

            labels = None
            sel_loss = 0.0
            dsel_logits = None
            if not lgm_off:
                tcp = true_class_probs(expert_probs, y)
                if "LGM_star" in abl:
                    suit = tcp
                    labels = raw_tcp_labels(tcp)
                else:
                    suit = standardize_suitability(tcp)
                    labels = selection_labels(suit)
                v = uniform if "SR_off" in abl else selection_loss_weights(suit)
                sel_loss, dsel_logits = selection_loss(selection_probs, labels, v)

            alpha = None
            assignment = None
            if lgm_off:
                # collapses to a single expert with early termination
                w_matrix = np.zeros((m, n))
                w_matrix[:, 0] = 1.0 / m
                assign_counts[0] += m
            elif "WGM_off" in abl:
                w_matrix = np.full((m, n), 1.0 / m)
                assign_counts += np.asarray(labels.sum(axis=0), dtype=np.int64)
            elif "WGM_star" in abl:
                assignment = labels
                alpha = alpha_schedule(step, total_steps, cfg.alpha_start, cfg.alpha_end)
                w_matrix = normalize_weights(smooth_assignment(assignment, alpha), demands)
            elif "WGM_circ" in abl:
                # no balance constraint, no smoothing; constant normalizer m/n
                assignment = argmax_assignment(selection_probs)
                w_matrix = assignment * (n / m)
            else:
                assignment = balanced_assignment(selection_probs)
                if "WGM_bullet" in abl:
                    alpha = cfg.alpha_end
                else:
                    alpha = alpha_schedule(step, total_steps, cfg.alpha_start, cfg.alpha_end)
                w_matrix = normalize_weights(smooth_assignment(assignment, alpha), demands)
            if assignment is not None:
                assign_counts += np.asarray(assignment.sum(axis=0), dtype=np.int64)

            exp_loss, dexpert_logits = expert_loss(expert_probs, y, w_matrix)
            total_loss = cfg.eta * sel_loss + exp_loss

            if dsel_logits is not None:
                sel_grads, _ = nn.backward(delegator.selector, sel_cache,
                                           cfg.eta * dsel_logits)
                sel_state.learning_rate = _cosine_lr(cfg.lr_phase2, step, total_steps)
                nn.sgd_step(delegator.selector.parameters(), sel_grads, sel_state)
            for k, expert in enumerate(experts):
                if lgm_off and k > 0:
                    continue
                grads, _ = nn.backward(expert.net, expert_caches[k], dexpert_logits[k])
                expert_states[k].learning_rate = _cosine_lr(cfg.lr_phase2, step, total_steps)
                nn.sgd_step(expert.net.parameters(), grads, expert_states[k])

            if cfg.debug_dump_dir:
                dump = {"selection_probs": selection_probs, "weights": w_matrix}
                if labels is not None:
                    dump.update(tcp=tcp, suitability=suit, labels=labels, v=v)
                if assignment is not None:
                    dump["assignment"] = assignment
                _dump_debug(cfg.debug_dump_dir, step, dump)

            sel_loss_sum += sel_loss
            expert_loss_sum += exp_loss
            total_loss_sum += total_loss
            if labels is not None:
                selector_hits += int((np.argmax(selection_probs, axis=1)
                                      == np.argmax(labels, axis=1)).sum())
            step += 1

        assert _params_digest(delegator.extractor, delegator.task_head) == frozen_digest, \
            "frozen extractor/task predictor were modified in phase 2"
        records.append({
            "phase": 2,
            "epoch": epoch,
            "loss_selection": sel_loss_sum / n_batches,
            "loss_experts": expert_loss_sum / n_batches,
            "loss_total": total_loss_sum / n_batches,
            "selector_accuracy": selector_hits / (n_batches * m),
            "assignment_counts": assign_counts.tolist(),
            "val_rough_accuracy": rough_accuracy(delegator, val_ds),
        })
    return records


def train_gate_value(delegator: Delegator, experts: list, train_ds: Dataset,
                     val_ds: Dataset, cfg: TrainConfig) -> list:
    """Soft gate-value baseline: the selector's probabilities scale a
    mixture of expert outputs and one CE on the mixture trains the selector
    and the experts jointly (no label or weight generation)."""
    n = len(experts)
    m = cfg.batch_size
    n_samples = len(train_ds)
    if n_samples < m:
        raise ValueError("dataset smaller than one batch")
    frozen_digest = _params_digest(delegator.extractor, delegator.task_head)
    sel_state = nn.SgdState(learning_rate=cfg.lr_phase2, momentum=cfg.momentum)
    expert_states = [nn.SgdState(learning_rate=cfg.lr_phase2, momentum=cfg.momentum)
                     for _ in experts]
    n_batches = n_samples // m
    total_steps = max(cfg.epochs_phase2 * n_batches, 1)
    rows = np.arange(m)
    records = []
    step = 0
    for epoch in range(cfg.epochs_phase2):
        order = rng_for(cfg.seed, f"gate-epoch{epoch}").permutation(n_samples)
        loss_sum = 0.0
        for idx in _batches(n_samples, m, order):
            x, y = train_ds.features[idx], train_ds.labels[idx]
            feats, _ = nn.forward(delegator.extractor, x)
            sel_logits, sel_cache = nn.forward(delegator.selector, feats)
            gates = nn.softmax_rows(sel_logits)
            expert_probs, expert_caches = [], []
            for expert in experts:
                logits, cache = nn.forward(expert.net, x)
                expert_probs.append(nn.softmax_rows(logits))
                expert_caches.append(cache)
            mixture = sum(gates[:, k][:, None] * expert_probs[k] for k in range(n))
            picked = np.clip(mixture[rows, y], nn.PROB_EPS, None)
            loss = float(-np.log(picked).mean())

            dmix = np.zeros_like(mixture)
            dmix[rows, y] = -1.0 / (m * picked)
            dgates = np.stack([(dmix * expert_probs[k]).sum(axis=1) for k in range(n)], axis=1)
            dsel_logits = nn.softmax_backward(gates, dgates)
            sel_grads, _ = nn.backward(delegator.selector, sel_cache, dsel_logits)
            lr = _cosine_lr(cfg.lr_phase2, step, total_steps)
            sel_state.learning_rate = lr
            nn.sgd_step(delegator.selector.parameters(), sel_grads, sel_state)
            for k, expert in enumerate(experts):
                dprobs = gates[:, k][:, None] * dmix
                dlogits = nn.softmax_backward(expert_probs[k], dprobs)
                grads, _ = nn.backward(expert.net, expert_caches[k], dlogits)
                expert_states[k].learning_rate = lr
                nn.sgd_step(expert.net.parameters(), grads, expert_states[k])
            loss_sum += loss
            step += 1
        assert _params_digest(delegator.extractor, delegator.task_head) == frozen_digest, \
            "frozen extractor/task predictor were modified by the gate-value trainer"
        records.append({
            "phase": 2,
            "epoch": epoch,
            "loss_total": loss_sum / n_batches,
            "val_rough_accuracy": rough_accuracy(delegator, val_ds),
        })
    return records


def _train_plain_expert(expert: Expert, train_ds: Dataset, val_ds: Dataset,
                        cfg: TrainConfig, epochs: int, stream: str) -> list:
    """Plain CE training of one expert network.  The shuffle stream is keyed
    by the expert's own init seed so identically seeded experts follow
    identical trajectories."""
    m = cfg.batch_size
    n_samples = len(train_ds)
    if n_samples < m:
        raise ValueError("dataset smaller than one batch")
    state = nn.SgdState(learning_rate=cfg.lr_phase1, momentum=cfg.momentum)
    n_batches = n_samples // m
    total_steps = max(epochs * n_batches, 1)
    uniform = np.full(m, 1.0 / m)
    records = []
    step = 0
    for epoch in range(cfg.epochs_phase1 * 0 + epochs):
        order = rng_for(cfg.seed, f"{stream}-{expert.net.seed}-epoch{epoch}").permutation(n_samples)
        loss_sum = 0.0
        for idx in _batches(n_samples, m, order):
            x, y = train_ds.features[idx], train_ds.labels[idx]
            logits, cache = nn.forward(expert.net, x)
            probs = nn.softmax_rows(logits)
            loss, dlogits = nn.weighted_cross_entropy(probs, y, uniform)
            grads, _ = nn.backward(expert.net, cache, dlogits)
            state.learning_rate = _cosine_lr(cfg.lr_phase1, step, total_steps)
            nn.sgd_step(expert.net.parameters(), grads, state)
            loss_sum += loss
            step += 1
        records.append({
            "phase": 0,
            "epoch": epoch,
            "loss": loss_sum / n_batches,
            "val_accuracy": expert_accuracy(expert, val_ds),
        })
    return records


def train_ensemble(experts: list, train_ds: Dataset, val_ds: Dataset,
                   cfg: TrainConfig) -> list:
    """Train each expert independently with plain CE; the ensemble
    prediction is the mean of the class-probability outputs."""
    epochs = cfg.epochs_phase1 + cfg.epochs_phase2
    records = []
    for k, expert in enumerate(experts):
        for rec in _train_plain_expert(expert, train_ds, val_ds, cfg, epochs, "ensemble"):
            records.append({"expert": k, **rec})
    return records


def random_category_partition(class_count: int, n_experts: int, seed: int) -> np.ndarray:
    """Seeded random partition of the classes into n groups whose sizes
    differ by at most one; returns the class -> expert map."""
    if class_count < n_experts:
        raise ValueError("need at least as many classes as experts")
    perm = rng_for(seed, "category-partition").permutation(class_count)
    class_to_expert = np.empty(class_count, dtype=np.int64)
    class_to_expert[perm] = np.arange(class_count) % n_experts
    return class_to_expert


def train_category_random(delegator: Delegator, experts: list, train_ds: Dataset,
                          val_ds: Dataset, cfg: TrainConfig):
    """Category baseline: experts own random class groups; the assignment
    follows the frozen rough prediction's group and is smoothed/normalized
    like the standard weight pipeline.  The selector is unused."""
    n = len(experts)
    m = cfg.batch_size
    n_samples = len(train_ds)
    if n_samples < m:
        raise ValueError("dataset smaller than one batch")
    class_to_expert = random_category_partition(train_ds.class_count, n, cfg.seed)
    frozen_digest = _params_digest(delegator.extractor, delegator.task_head)
    expert_states = [nn.SgdState(learning_rate=cfg.lr_phase2, momentum=cfg.momentum)
                     for _ in experts]
    n_batches = n_samples // m
    total_steps = max(cfg.epochs_phase2 * n_batches, 1)
    records = []
    step = 0
    for epoch in range(cfg.epochs_phase2):
        order = rng_for(cfg.seed, f"category-epoch{epoch}").permutation(n_samples)
        loss_sum = 0.0
        for idx in _batches(n_samples, m, order):
            x, y = train_ds.features[idx], train_ds.labels[idx]
            feats, _ = nn.forward(delegator.extractor, x)
            logits, _ = nn.forward(delegator.task_head, feats)
            rough = np.argmax(logits, axis=1)
            assignment = one_hot(class_to_expert[rough], n)
            alpha = alpha_schedule(step, total_steps, cfg.alpha_start, cfg.alpha_end)
            w_matrix = smooth_assignment(assignment, alpha) * (n / m)
            expert_probs, expert_caches = [], []
            for expert in experts:
                e_logits, cache = nn.forward(expert.net, x)
                expert_probs.append(nn.softmax_rows(e_logits))
                expert_caches.append(cache)
            loss, dexpert_logits = expert_loss(expert_probs, y, w_matrix)
            for k, expert in enumerate(experts):
                grads, _ = nn.backward(expert.net, expert_caches[k], dexpert_logits[k])
                expert_states[k].learning_rate = _cosine_lr(cfg.lr_phase2, step, total_steps)
                nn.sgd_step(expert.net.parameters(), grads, expert_states[k])
            loss_sum += loss
            step += 1
        assert _params_digest(delegator.extractor, delegator.task_head) == frozen_digest, \
            "frozen extractor/task predictor were modified by the category trainer"
        records.append({
            "phase": 2,
            "epoch": epoch,
            "loss_total": loss_sum / n_batches,
            "val_rough_accuracy": rough_accuracy(delegator, val_ds),
        })
    return records, class_to_expert


def build_models(cfg: TrainConfig, class_count: int):
    delegator = build_delegator(cfg.input_dim, cfg.feat_dim, class_count, cfg.n_experts,
                                extractor_hidden=cfg.extractor_hidden,
                                selector_hidden=cfg.selector_hidden,
                                seed=subseed(cfg.seed, "delegator"))
    factors = cfg.expert_width_factors or (1.0,) * cfg.n_experts
    experts = [build_expert(cfg.input_dim, class_count, hidden=cfg.expert_hidden,
                            width_factor=factors[k], seed=subseed(cfg.seed, f"expert-{k}"))
               for k in range(cfg.n_experts)]
    return delegator, experts


def run_training(cfg: TrainConfig, train_ds: Dataset, val_ds: Dataset):
    """Train according to cfg.mode; returns (bundle, report)."""
    if train_ds.class_count != val_ds.class_count:
        raise ValueError("train and validation class counts differ")
    if train_ds.features.shape[1] != cfg.input_dim:
        raise ValueError(
            f"config input_dim={cfg.input_dim} but data has {train_ds.features.shape[1]} features")
    delegator, experts = build_models(cfg, train_ds.class_count)
    report = TrainReport()
    manifest = {
        "format": 1,
        "mode": cfg.mode,
        "ablations": sorted(cfg.ablations),
        "n_experts": cfg.n_experts,
        "class_count": train_ds.class_count,
        "input_dim": cfg.input_dim,
        "feat_dim": cfg.feat_dim,
        "seed": cfg.seed,
        "expert_width_factors": (list(cfg.expert_width_factors)
                                 if cfg.expert_width_factors else None),
        "phase_completed": 0,
        "routing": "selector",
        "class_to_expert": None,
    }

    if cfg.mode == "coe":
        report.records += train_phase1(delegator, train_ds, val_ds, cfg)
        report.records += train_phase2(delegator, experts, train_ds, val_ds, cfg)
        if "LGM_off" in cfg.ablations:
            experts = experts[:1]
            manifest["n_experts"] = 1
        manifest["phase_completed"] = 2
        bundle = Bundle(delegator=delegator, experts=experts, manifest=manifest)
    elif cfg.mode == "gate_value_soft":
        report.records += train_phase1(delegator, train_ds, val_ds, cfg)
        report.records += train_gate_value(delegator, experts, train_ds, val_ds, cfg)
        manifest["phase_completed"] = 2
        bundle = Bundle(delegator=delegator, experts=experts, manifest=manifest)
    elif cfg.mode == "category_random":
        report.records += train_phase1(delegator, train_ds, val_ds, cfg)
        records, class_to_expert = train_category_random(
            delegator, experts, train_ds, val_ds, cfg)
        report.records += records
        manifest.update(phase_completed=2, routing="class_map",
                        class_to_expert=class_to_expert.tolist())
        bundle = Bundle(delegator=delegator, experts=experts, manifest=manifest)
    elif cfg.mode == "single_expert":
        expert = experts[0]
        epochs = cfg.epochs_phase1 + cfg.epochs_phase2
        report.records += _train_plain_expert(expert, train_ds, val_ds, cfg, epochs, "single")
        manifest.update(phase_completed=2, routing="none", n_experts=1)
        bundle = Bundle(delegator=None, experts=[expert], manifest=manifest)
    elif cfg.mode == "ensemble":
        report.records += train_ensemble(experts, train_ds, val_ds, cfg)
        manifest.update(phase_completed=2, routing="none")
        bundle = Bundle(delegator=None, experts=experts, manifest=manifest)
    else:  # pragma: no cover - guarded by TrainConfig
        raise ValueError(f"unknown mode {cfg.mode!r}")

    summary = {
        "mode": cfg.mode,
        "seed": cfg.seed,
        "n_experts": manifest["n_experts"],
        "class_count": train_ds.class_count,
        "epochs_phase1": cfg.epochs_phase1,
        "epochs_phase2": cfg.epochs_phase2,
        "flops_delegator": (delegator_profile(delegator).flops
                            if bundle.delegator is not None else 0),
        "flops_experts": [expert_profile(e).flops for e in bundle.experts],
    }
    if bundle.delegator is not None:
        summary["final_val_rough_accuracy"] = rough_accuracy(delegator, val_ds)
    report.summary = summary
    return bundle, report
