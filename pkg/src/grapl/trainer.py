"""Alternating optimization: train the patch classifier against the current
pseudo-labels, then refine the pseudo-labels with an expansion-move graph cut
under the classifier's own unary costs.

One run owns one parameter set. Warm start is the default: parameters carry
over between iterations and only the pseudo-labels change. A cold-start mode
(fresh weights each iteration) exists purely to demonstrate the resulting
loss spikes.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import mrf, net
from .errors import InputError
from .imagegrid import Image, extract_patch_grid
from .initializers import (PatchLabeling, SlicParams, argmax_labels,
                           make_initial_labels, one_hot)

log = logging.getLogger(__name__)

DESCENT_TOL = 1e-6


@dataclass
class GraplConfig:
    k0: int = 14
    d: int = 32
    lam: float = 64.0
    mu: float = 3.0
    steps: tuple[int, ...] = (40, 32, 22, 12)
    early_stop_ce: float = 1.0
    affinity: str = "mean_color"
    init: str = "slic"
    lr: float = 1e-3
    seed: int = 0
    dropout: float = 0.2
    graph_topology: str = "full"
    cold_start: bool = False
    embeddings: str | None = None
    slic_compactness: float = 1.0
    slic_iterations: int = 10
    slic_colorspace: str = "lab"

    def validate(self) -> None:
        if self.k0 < 2:
            raise ValueError("k0 must be >= 2")
        if not self.steps:
            raise ValueError("steps must be nonempty")
        if any(s < 0 for s in self.steps):
            raise ValueError("step counts must be nonnegative")
        if self.lam < 0 or self.mu < 0:
            raise ValueError("lambda and mu must be nonnegative")
        if self.affinity not in mrf.AFFINITY_VARIANTS:
            raise ValueError(f"unknown affinity {self.affinity!r}")
        if self.affinity == "embedding" and not self.embeddings:
            raise ValueError("embedding affinity needs an embeddings file")
        if self.graph_topology not in ("full", "lattice"):
            raise ValueError("graph topology must be 'full' or 'lattice'")

    def slic_params(self) -> SlicParams:
        return SlicParams(k=self.k0, compactness=self.slic_compactness,
                          iterations=self.slic_iterations,
                          colorspace=self.slic_colorspace)

    def as_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["steps"] = list(self.steps)
        return out


_CONFIG_KEY_ALIASES = {"lambda": "lam"}


def config_from_mapping(values: dict, base: GraplConfig | None = None) -> GraplConfig:
    """Apply key/value overrides on top of a base config."""
    cfg = dataclasses.replace(base) if base else GraplConfig()
    fields = {f.name: f.type for f in dataclasses.fields(GraplConfig)}
    updates = {}
    for raw_key, value in values.items():
        key = _CONFIG_KEY_ALIASES.get(raw_key, raw_key)
        if key not in fields:
            raise InputError(f"unknown config key {raw_key!r}")
        updates[key] = value
    return dataclasses.replace(cfg, **updates)


def _parse_value(key: str, text: str):
    text = text.strip()
    if key in ("k0", "d", "seed", "slic_iterations"):
        return int(text)
    if key in ("lam", "lambda", "mu", "early_stop_ce", "lr", "dropout",
               "slic_compactness"):
        return float(text)
    if key == "steps":
        return tuple(int(tok) for tok in text.replace(",", " ").split())
    if key == "cold_start":
        return text.lower() in ("1", "true", "yes", "on")
    return text


def load_config_file(path, base: GraplConfig | None = None) -> GraplConfig:
    """Flat key = value config file; '#' starts a comment."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"config file not found: {path}")
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{lineno}: expected 'key = value'")
        key, text = (part.strip() for part in line.split("=", 1))
        try:
            values[key] = _parse_value(_CONFIG_KEY_ALIASES.get(key, key), text)
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return config_from_mapping(values, base)


@dataclass
class StepRecord:
    iteration: int
    step: int
    cross_entropy: float
    continuity: float
    total: float
    mean_cross_entropy: float


@dataclass
class IterationRecord:
    iteration: int
    energy_before: mrf.EnergyBreakdown
    energy_after: mrf.EnergyBreakdown
    k_hat: int


@dataclass
class TrainHistory:
    steps: list[StepRecord] = field(default_factory=list)
    iterations: list[IterationRecord] = field(default_factory=list)
    early_stopped: bool = False
    early_stop_step: int | None = None

    def as_dict(self) -> dict:
        return {
            "early_stopped": self.early_stopped,
            "early_stop_step": self.early_stop_step,
            "steps": [dataclasses.asdict(s) for s in self.steps],
            "iterations": [
                {
                    "iteration": it.iteration,
                    "energy_before": it.energy_before._asdict(),
                    "energy_after": it.energy_after._asdict(),
                    "k_hat": it.k_hat,
                }
                for it in self.iterations
            ],
        }


def distinct_labels(labeling: PatchLabeling) -> int:
    """Number of labels actually present."""
    return int(len(np.unique(labeling.labels)))


def resolve_affinity(config: GraplConfig, grid) -> mrf.AffinityMetric:
    if config.affinity == "embedding":
        _, vectors = mrf.load_gple(config.embeddings, expected_d=config.d)
        return mrf.AffinityMetric("embedding", vectors)
    return mrf.AffinityMetric(config.affinity)


def run_grapl(image: Image, config: GraplConfig
              ) -> tuple[net.NetworkParams, TrainHistory, PatchLabeling]:
    """Full alternation on one image; returns the trained parameters, the
    loss/energy history, and the last pseudo-labeling."""
    config.validate()
    grid = extract_patch_grid(image, config.d)
    n = grid.n_patches

    seeds = np.random.SeedSequence(config.seed).spawn(3)
    init_seed = int(seeds[0].generate_state(1)[0])
    net_seed_root = seeds[1]
    dropout_rng = np.random.default_rng(seeds[2])

    soft0 = make_initial_labels(image, grid, config.k0, config.init,
                                seed=init_seed, slic_params=config.slic_params())
    targets = soft0.dist
    hard_prev = argmax_labels(soft0)

    metric = resolve_affinity(config, grid)
    # Pairwise weights are normalized per patch so the default coefficient
    # keeps the unary and pairwise terms on comparable scales for any grid.
    graph = mrf.make_graph(grid, metric, lam=config.lam / n,
                           topology=config.graph_topology)

    def fresh_params(tag: int) -> tuple[net.NetworkParams, net.AdamState]:
        seed = int(net_seed_root.generate_state(tag + 1)[tag])
        # float32 halves the memory traffic of every layer; gradient noise
        # at that precision is far below the SGD noise floor
        params = net.init_params(grid.patch_h, grid.patch_w, grid.channels,
                                 config.k0, seed=seed,
                                 dropout_rate=config.dropout,
                                 dtype=np.float32)
        return params, net.AdamState(lr=config.lr)

    params, adam = fresh_params(0)
    history = TrainHistory()
    patches = grid.patches.astype(np.float32)

    ce_was_above = False
    for iteration, n_steps in enumerate(config.steps, start=1):
        if config.cold_start and iteration > 1:
            params, adam = fresh_params(iteration - 1)
        for step in range(n_steps):
            loss, grads = net.loss_and_gradients(
                params, patches, targets, grid.d, config.mu,
                mode="train", rng=dropout_rng)
            history.steps.append(StepRecord(
                iteration=iteration, step=step,
                cross_entropy=loss.cross_entropy, continuity=loss.continuity,
                total=loss.total, mean_cross_entropy=loss.mean_cross_entropy))
            # early stopping guards the first iteration against overfitting
            # the initializer: it fires when the mean cross entropy falls
            # through the threshold, not when it already starts below it
            # (a small label space begins under 1.0 before any learning)
            if iteration == 1:
                if loss.mean_cross_entropy >= config.early_stop_ce:
                    ce_was_above = True
                elif ce_was_above:
                    history.early_stopped = True
                    history.early_stop_step = step
                    log.info("early stop in iteration 1 at step %d "
                             "(mean cross entropy %.4f)", step,
                             loss.mean_cross_entropy)
                    break
            net.adam_step(params, grads, adam)

        probs = net.forward_patches(params, patches, mode="eval")
        unary = mrf.unary_costs(probs.astype(np.float64))
        e_before = mrf.energy(hard_prev, unary, graph)
        labeling = mrf.alpha_expansion(unary, graph, hard_prev, config.k0)
        e_after = mrf.energy(labeling, unary, graph)
        if e_after.total > e_before.total + DESCENT_TOL:
            raise RuntimeError(
                f"labeling update raised the energy "
                f"({e_before.total:.6f} -> {e_after.total:.6f})")
        history.iterations.append(IterationRecord(
            iteration=iteration, energy_before=e_before,
            energy_after=e_after, k_hat=distinct_labels(labeling)))
        hard_prev = labeling
        targets = one_hot(labeling).dist

    return params, history, hard_prev
