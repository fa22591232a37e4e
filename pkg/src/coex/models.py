"""Model assembly: the delegator (feature extractor + task predictor +
expert selector) and the expert networks, plus analytic compute-cost
profiles.

The cost model counts one multiply-accumulate per weight per instance
(``flops``), and memory traffic as parameters loaded once per instance
plus activation reads/writes (``mac``) -- only the selected expert is ever
loaded, so the MAC/FLOPs ratio stays constant.

Frozen models are shareable read-only across threads; trainable models are
single-owner.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from coex import nn
from coex.util import atomic_write_text

SELECTOR_HIDDEN = 100
MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class CostProfile:
    flops: int  # multiply-accumulates per instance
    mac: int  # parameter + activation reads/writes per instance
    params: int

    def __add__(self, other: "CostProfile") -> "CostProfile":
        return CostProfile(self.flops + other.flops, self.mac + other.mac,
                           self.params + other.params)


@dataclass
class Delegator:
    extractor: nn.Mlp  # input_dim -> feat_dim
    task_head: nn.Mlp  # feat_dim -> class_count, single layer
    selector: nn.Mlp  # feat_dim -> SELECTOR_HIDDEN -> n_experts


@dataclass
class Expert:
    net: nn.Mlp  # input_dim -> class_count


@dataclass
class DelegatorOutput:
    class_probs: np.ndarray  # (m, C), row-stochastic
    selection_probs: np.ndarray  # (m, n), row-stochastic
    features: np.ndarray  # (m, feat_dim)
    extractor_cache: nn.ForwardCache
    task_cache: nn.ForwardCache
    selector_cache: nn.ForwardCache


def build_delegator(input_dim: int, feat_dim: int, class_count: int, n_experts: int,
                    extractor_hidden=(32,), selector_hidden: int = SELECTOR_HIDDEN,
                    seed: int = 0) -> Delegator:
    extractor = nn.init_mlp([input_dim, *extractor_hidden, feat_dim],
                            output_activation="relu", seed=seed)
    task_head = nn.init_mlp([feat_dim, class_count], seed=seed + 1)
    selector = nn.init_mlp([feat_dim, selector_hidden, n_experts], seed=seed + 2)
    return Delegator(extractor=extractor, task_head=task_head, selector=selector)


def build_expert(input_dim: int, class_count: int, hidden=(32, 32),
                 width_factor: float = 1.0, seed: int = 0) -> Expert:
    dims = [input_dim, *(max(1, round(h * width_factor)) for h in hidden), class_count]
    return Expert(net=nn.init_mlp(dims, seed=seed))


def delegator_forward(delegator: Delegator, batch) -> DelegatorOutput:
    features, ex_cache = nn.forward(delegator.extractor, batch)
    class_logits, task_cache = nn.forward(delegator.task_head, features)
    sel_logits, sel_cache = nn.forward(delegator.selector, features)
    return DelegatorOutput(
        class_probs=nn.softmax_rows(class_logits),
        selection_probs=nn.softmax_rows(sel_logits),
        features=features,
        extractor_cache=ex_cache,
        task_cache=task_cache,
        selector_cache=sel_cache,
    )


def expert_forward(expert: Expert, batch) -> tuple[np.ndarray, nn.ForwardCache]:
    logits, cache = nn.forward(expert.net, batch)
    return nn.softmax_rows(logits), cache


def mlp_profile(mlp: nn.Mlp) -> CostProfile:
    flops = mac = params = 0
    for layer in mlp.layers:
        out_dim, in_dim = layer.weights.shape
        flops += out_dim * in_dim
        params += out_dim * in_dim + out_dim
        mac += in_dim + out_dim
    return CostProfile(flops=flops, mac=mac + params, params=params)


def delegator_profile(delegator: Delegator) -> CostProfile:
    return (mlp_profile(delegator.extractor) + mlp_profile(delegator.task_head)
            + mlp_profile(delegator.selector))


def expert_profile(expert: Expert) -> CostProfile:
    return mlp_profile(expert.net)


@dataclass
class Bundle:
    """A trained model set plus its manifest, as stored on disk.

    Layout of a bundle directory:
        manifest.json               dims, expert count, seed, mode,
                                    training phase completed, routing rule
        delegator_extractor.mlp     \
        delegator_task_head.mlp      } absent for delegator-free modes
        delegator_selector.mlp      /
        expert_00.mlp ...           one checkpoint per expert
    """
    delegator: Delegator | None
    experts: list[Expert]
    manifest: dict


def save_bundle(directory, bundle: Bundle) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if bundle.delegator is not None:
        nn.save_mlp(directory / "delegator_extractor.mlp", bundle.delegator.extractor)
        nn.save_mlp(directory / "delegator_task_head.mlp", bundle.delegator.task_head)
        nn.save_mlp(directory / "delegator_selector.mlp", bundle.delegator.selector)
    for k, expert in enumerate(bundle.experts):
        nn.save_mlp(directory / f"expert_{k:02d}.mlp", expert.net)
    atomic_write_text(directory / MANIFEST_NAME,
                      json.dumps(bundle.manifest, sort_keys=True, indent=2) + "\n")


def load_bundle(directory) -> Bundle:
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise ValueError(f"{directory}: no {MANIFEST_NAME}; not a checkpoint bundle")
    manifest = json.loads(manifest_path.read_text())
    delegator = None
    if (directory / "delegator_extractor.mlp").exists():
        delegator = Delegator(
            extractor=nn.load_mlp(directory / "delegator_extractor.mlp"),
            task_head=nn.load_mlp(directory / "delegator_task_head.mlp"),
            selector=nn.load_mlp(directory / "delegator_selector.mlp"),
        )
    experts = []
    for k in range(int(manifest["n_experts"])):
        path = directory / f"expert_{k:02d}.mlp"
        if path.exists():
            experts.append(Expert(net=nn.load_mlp(path)))
    return Bundle(delegator=delegator, experts=experts, manifest=manifest)
