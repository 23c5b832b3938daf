"""In-process end-to-end run: baseline scores, graph, hierarchy, tree,
relabeling, phased training and held-out evaluation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from cvtnet.community import Hierarchy, louvain_hierarchy
from cvtnet.congraph import ConfusionGraph, build_confusion_graph
from cvtnet.cvt import ConfusionVisualTree, build_cvt, flat_tree
from cvtnet.ingest import LabeledSample, PlantedSpec, PredictionRecord, as_arrays, generate_synthetic, train_test_split
from cvtnet.vtnet.net import VTNet, mlp_config
from cvtnet.vtnet.train import TrainPhase, TrainResult, default_phases, evaluate, train


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    n_top: int = 5
    louvain_seed: int | None = None
    max_depth: int | None = None
    width: int = 64
    baseline_epochs: int = 3
    baseline_lr: float = 0.003
    coarse_epochs: int = 20
    fine_epochs: int = 20
    lr: float = 0.05
    batch_size: int = 32
    fine_loss: str = "literal"


@dataclass
class PipelineResult:
    records: list[PredictionRecord]
    graph: ConfusionGraph
    hierarchy: Hierarchy
    tree: ConfusionVisualTree
    net: VTNet
    history: TrainResult
    train_accuracy: list[float]
    test_accuracy: list[float] = field(default_factory=list)


def score_records(net: VTNet, samples: Sequence[LabeledSample]) -> list[PredictionRecord]:
    """Score records from a network's final class probabilities."""
    x, _ = as_arrays(samples)
    probs = net.forward(x).prediction
    return [PredictionRecord(s.sample_id, s.fine_label, tuple(float(v) for v in p))
            for s, p in zip(samples, probs)]


def train_baseline(samples: Sequence[LabeledSample], names: Sequence[str], cfg: PipelineConfig) -> VTNet:
    """Plain classifier (root-over-leaves tree) whose scores seed the graph."""
    x, y = as_arrays(samples)
    tree = flat_tree(names)
    net = VTNet(mlp_config(tree, x.shape[1], width=cfg.width, seed=cfg.seed))
    net.fit_input_scaling(x)
    phase = TrainPhase((1.0,), cfg.baseline_epochs, cfg.baseline_lr, batch_size=cfg.batch_size)
    train(net, x, tree.targets(y), [phase], cfg.seed)
    return net


def train_tree_net(tree: ConfusionVisualTree, samples: Sequence[LabeledSample], cfg: PipelineConfig):
    x, y = as_arrays(samples)
    net = VTNet(mlp_config(tree, x.shape[1], width=cfg.width, seed=cfg.seed, fine_loss=cfg.fine_loss))
    net.fit_input_scaling(x)
    phases = default_phases(tree.num_branches, cfg.coarse_epochs, cfg.fine_epochs, cfg.lr,
                            batch_size=cfg.batch_size)
    history = train(net, x, tree.targets(y), phases, cfg.seed)
    return net, history


def run_pipeline(train_samples: Sequence[LabeledSample], test_samples: Sequence[LabeledSample],
                 names: Sequence[str], cfg: PipelineConfig = PipelineConfig()) -> PipelineResult:
    baseline = train_baseline(train_samples, names, cfg)
    records = score_records(baseline, train_samples)
    graph = build_confusion_graph(records, min(cfg.n_top, len(names)), names)
    lseed = cfg.seed if cfg.louvain_seed is None else cfg.louvain_seed
    hierarchy = louvain_hierarchy(graph, lseed)
    tree = build_cvt(hierarchy, names, cfg.max_depth)
    net, history = train_tree_net(tree, train_samples, cfg)
    x, y = as_arrays(train_samples)
    result = PipelineResult(records, graph, hierarchy, tree, net, history, evaluate(net, x, tree.targets(y)))
    if test_samples:
        xt, yt = as_arrays(test_samples)
        result.test_accuracy = evaluate(net, xt, tree.targets(yt))
    return result


def run_planted(spec: PlantedSpec, cfg: PipelineConfig = PipelineConfig(), test_fraction: float = 0.2):
    """Generate a planted dataset and run the pipeline; returns ``(result, truth)``."""
    manifest, samples, truth = generate_synthetic(spec, cfg.seed)
    train_s, test_s = train_test_split(samples, test_fraction, cfg.seed)
    return run_pipeline(train_s, test_s, manifest.category_names, cfg), truth
