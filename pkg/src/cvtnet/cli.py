"""Command-line front end.

Each subcommand reads its inputs from the paths named in the run
configuration, writes fixed-name artifacts into the output directory and
stamps every artifact with the command, seed and package version.
"""
from __future__ import annotations

import argparse
import datetime
import sys
from pathlib import Path

import numpy as np

from cvtnet import __version__
from cvtnet.community import Partition, louvain_hierarchy, load_hierarchy, write_hierarchy
from cvtnet.config import RunConfig
from cvtnet.congraph import build_confusion_graph, load_edge_list, write_edge_list
from cvtnet.cvt import (build_cvt, export_dot, flat_tree, graph_to_dot, load_labels, load_tree,
                        relabel, tree_from_partitions, write_labels, write_tree)
from cvtnet.errors import CvtError, EmptyInputError, NumericError, StructureError
from cvtnet.ingest import (PlantedSpec, PredictionRecord, as_arrays, generate_synthetic, load_names,
                           load_records, load_samples, train_test_split, write_names, write_records,
                           write_samples)
from cvtnet.vtnet.checkpoint import load_checkpoint, save_checkpoint
from cvtnet.vtnet.gradcheck import run_suite
from cvtnet.vtnet.net import VTNet, conv_config, mlp_config
from cvtnet.vtnet.train import TrainPhase, coarse_phase_weights, evaluate, fine_phase_weights, train

COMMANDS = ("build-graph", "detect", "tree", "relabel", "train", "eval", "export-dot", "gradcheck", "synth")


class Context:
    """Parsed configuration plus header bookkeeping for one invocation."""

    def __init__(self, command: str, cfg: RunConfig, timestamp: bool):
        self.command = command
        self.cfg = cfg
        self.timestamp = timestamp
        self.out = cfg.out_dir
        self.out.mkdir(parents=True, exist_ok=True)

    def header(self, **extra) -> list[str]:
        fields = [f"cvtnet {__version__}", f"command={self.command}", f"seed={self.cfg.seed}"]
        fields += [f"{k}={v}" for k, v in extra.items()]
        lines = [" ".join(fields), f"numpy {np.__version__}"]
        if self.timestamp:
            stamp = datetime.datetime.now(datetime.timezone.utc).replace(microsecond=0).isoformat()
            lines.append(f"timestamp={stamp}")
        return lines

    def provenance(self, **extra) -> dict:
        info = {"version": __version__, "command": self.command, "seed": self.cfg.seed,
                "numpy": np.__version__, "config": self.cfg.dump()}
        info.update(extra)
        if self.timestamp:
            info["timestamp"] = datetime.datetime.now(datetime.timezone.utc).replace(microsecond=0).isoformat()
        return info

    def target(self, name: str) -> Path:
        return self.out / name


def _names(ctx: Context, num_classes: int) -> list[str]:
    p = ctx.cfg.path("names")
    if p.is_file():
        names = load_names(p)
        if len(names) != num_classes:
            raise StructureError(f"{p} lists {len(names)} names, expected {num_classes}")
        return names
    return [str(i) for i in range(num_classes)]


def _tree(ctx: Context, num_classes: int):
    """The configured tree, or the root-over-leaves tree for ``paths.tree=flat``."""
    if ctx.cfg.get("paths", "tree") == "flat":
        return flat_tree(_names(ctx, num_classes))
    t = load_tree(ctx.cfg.existing("tree"))
    if t.num_classes != num_classes:
        raise StructureError(f"tree has {t.num_classes} categories, samples have {num_classes}")
    return t


def cmd_synth(ctx: Context) -> int:
    cfg = ctx.cfg
    spec = PlantedSpec(branching=cfg.get_ints("synth", "branching"),
                       samples_per_leaf=cfg.get_int("synth", "samples_per_leaf"),
                       separation=cfg.get_float("synth", "separation"),
                       noise=cfg.get_float("synth", "noise"),
                       dim=cfg.get_int("synth", "dim"),
                       ratio=cfg.get_float("synth", "ratio"))
    manifest, samples, truth = generate_synthetic(spec, cfg.seed)
    train_s, test_s = train_test_split(samples, cfg.get_float("synth", "test_fraction"), cfg.seed)
    head = ctx.header(branching=",".join(map(str, spec.branching)))
    c, dim = manifest.num_classes, manifest.feature_dim
    write_samples(ctx.target("samples.txt"), samples, c, dim, head)
    write_samples(ctx.target("train.txt"), train_s, c, dim, head)
    write_samples(ctx.target("test.txt"), test_s, c, dim, head)
    write_names(ctx.target("names.txt"), manifest.category_names)
    parts = [Partition.from_labels(p) for p in truth.partitions()]
    write_tree(ctx.target("truth.cvt"), tree_from_partitions(parts, manifest.category_names), head)
    print(f"samples={len(samples)} train={len(train_s)} test={len(test_s)} classes={c} dim={dim}")
    return 0


def cmd_build_graph(ctx: Context) -> int:
    records = load_records(ctx.cfg.existing("records"))
    if not records:
        raise EmptyInputError("no score records")
    n_top = ctx.cfg.get_int("graph", "n_top")
    c = len(records[0].scores)
    g = build_confusion_graph(records, n_top, _names(ctx, c))
    write_edge_list(ctx.target("graph.edges"), g, ctx.header(n_top=n_top))
    print(f"nodes={g.num_nodes} total_weight={g.total_weight()!r}")
    return 0


def _louvain_seed(cfg: RunConfig) -> int:
    return cfg.get_int("community", "seed", cfg.seed)


def cmd_detect(ctx: Context) -> int:
    p = ctx.cfg.existing("graph")
    g = load_edge_list(p)
    seed = _louvain_seed(ctx.cfg)
    h = louvain_hierarchy(g, seed)
    write_hierarchy(ctx.target("hierarchy.txt"), h, ctx.header(louvain_seed=seed))
    sizes = ",".join(str(lv.num_communities) for lv in h.levels)
    print(f"levels={len(h)} communities={sizes} Q={h.modularities[-1]!r}")
    return 0


def cmd_tree(ctx: Context) -> int:
    h = load_hierarchy(ctx.cfg.existing("hierarchy"))
    names = _names(ctx, h.num_nodes)
    max_depth = ctx.cfg.get_int("tree", "max_depth")
    t = build_cvt(h, names, max_depth)
    write_tree(ctx.target("tree.cvt"), t, ctx.header(max_depth=max_depth if max_depth else "none"))
    print(f"levels={t.depth} sizes={','.join(map(str, [1] + t.level_sizes()))} branches={t.num_branches}")
    return 0


def cmd_relabel(ctx: Context) -> int:
    c, _, samples = load_samples(ctx.cfg.existing("train_samples"))
    t = _tree(ctx, c)
    labels = relabel(samples, t)
    write_labels(ctx.target("labels.txt"), labels, t.num_branches, ctx.header())
    print(f"samples={len(labels)} targets_per_sample={t.num_branches}")
    return 0


def _targets(ctx: Context, samples, tree) -> np.ndarray:
    """Multi-level targets; taken from the labels file when one exists."""
    _, y = as_arrays(samples)
    derived = tree.targets(y)
    p = ctx.cfg.path("labels")
    if ctx.cfg.get("paths", "tree") == "flat" or not p.is_file():
        return derived
    by_id = {lab.sample_id: lab.targets for lab in load_labels(p)}
    rows = []
    for s in samples:
        if s.sample_id not in by_id:
            raise StructureError(f"{p} has no targets for sample {s.sample_id!r}")
        rows.append(by_id[s.sample_id])
    given = np.asarray(rows, dtype=np.int64).reshape(len(samples), -1)
    if given.shape != derived.shape or not np.array_equal(given, derived):
        raise StructureError(f"{p} disagrees with the tree; rerun relabel")
    return given


def _net_config(ctx: Context, tree, dim: int):
    cfg = ctx.cfg
    kw = {"seed": cfg.seed, "fine_loss": cfg.get("net", "fine_loss"), "init": cfg.get("net", "init")}
    arch = cfg.get("net", "arch")
    if arch == "mlp":
        return mlp_config(tree, dim, width=cfg.get_int("net", "width"), **kw)
    if arch == "conv":
        shape = cfg.get_ints("net", "input_shape")
        if int(np.prod(shape)) != dim:
            raise StructureError(f"[net] input_shape {shape} does not hold {dim} features")
        return conv_config(tree, shape, channels=cfg.get_int("net", "channels"),
                           width=cfg.get_int("net", "width"), **kw)
    raise StructureError(f"[net] arch must be mlp or conv, got {arch!r}")


def _phase(cfg: RunConfig, section: str, default_weights, shuffle_seed: int) -> TrainPhase:
    weights = cfg.get_floats(section, "weights") or default_weights
    return TrainPhase(tuple(weights), cfg.get_int(section, "epochs"), cfg.get_float(section, "lr"),
                      cfg.get_steps(section, "lr_steps"), cfg.get_int(section, "batch_size"), shuffle_seed)


def phases_from_config(cfg: RunConfig, k: int) -> list[TrainPhase]:
    """Phase 1 trains the coarse branches, phase 2 the fine one.

    A root-over-leaves net has no coarse branch, so only phase 2 runs.
    """
    fine = _phase(cfg, "phase2", fine_phase_weights(k), 1)
    if k == 1 and not cfg.get_floats("phase1", "weights"):
        return [fine]
    return [_phase(cfg, "phase1", coarse_phase_weights(k), 0), fine]


def cmd_train(ctx: Context) -> int:
    c, dim, samples = load_samples(ctx.cfg.existing("train_samples"))
    if not samples:
        raise EmptyInputError("no training samples")
    tree = _tree(ctx, c)
    targets = _targets(ctx, samples, tree)
    x, _ = as_arrays(samples)
    net = VTNet(_net_config(ctx, tree, dim))
    if ctx.cfg.get_bool("net", "standardize"):
        net.fit_input_scaling(x)
    phases = phases_from_config(ctx.cfg, tree.num_branches)
    result = train(net, x, targets, phases, ctx.cfg.seed)
    save_checkpoint(ctx.target("model.npz"), net, ctx.provenance(levels=tree.depth))
    lines = [f"# {h}" for h in ctx.header()] + ["phase,epoch,branch,loss,top1"]
    lines += [m.csv() for m in result.metrics]
    ctx.target("metrics.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    acc = evaluate(net, x, targets)
    print("train_top1=" + ",".join(f"{a:.4f}" for a in acc))
    return 0


def cmd_eval(ctx: Context) -> int:
    net, _ = load_checkpoint(ctx.cfg.existing("model"))
    c, _, samples = load_samples(ctx.cfg.existing("eval_samples"))
    if not samples:
        raise EmptyInputError("no evaluation samples")
    tree = _tree(ctx, c)
    if tree.num_branches != net.config.num_branches:
        raise StructureError(f"model has {net.config.num_branches} branches, tree implies {tree.num_branches}")
    x, y = as_arrays(samples)
    acc = evaluate(net, x, tree.targets(y))
    probs = net.forward(x).prediction
    if not np.all(np.isfinite(probs)):
        raise NumericError("non-finite class probabilities")
    records = [PredictionRecord(s.sample_id, s.fine_label, tuple(float(v) for v in p))
               for s, p in zip(samples, probs)]
    head = ctx.header()
    write_records(ctx.target("records.txt"), records, c, True, head)
    lines = [f"# {h}" for h in head]
    lines += [f"branch={b} level={b + 2} top1={a!r}" for b, a in enumerate(acc)]
    ctx.target("eval.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("top1=" + ",".join(f"{a:.4f}" for a in acc))
    return 0


def cmd_export_dot(ctx: Context) -> int:
    head = "".join(f"// {h}\n" for h in ctx.header())
    if ctx.cfg.path("tree").is_file():
        t = load_tree(ctx.cfg.path("tree"))
        ctx.target("tree.dot").write_text(head + export_dot(t), encoding="utf-8")
        print(f"wrote {ctx.target('tree.dot')} nodes={1 + sum(t.level_sizes())}")
    else:
        g = load_edge_list(ctx.cfg.existing("graph"))
        ctx.target("graph.dot").write_text(head + graph_to_dot(g), encoding="utf-8")
        print(f"wrote {ctx.target('graph.dot')} nodes={g.num_nodes}")
    return 0


def cmd_gradcheck(ctx: Context) -> int:
    seed = ctx.cfg.get_int("gradcheck", "seed", ctx.cfg.seed)
    reports = run_suite(seed)
    lines = [f"# {h}" for h in ctx.header(suite_seed=seed)]
    for r in reports:
        lines.append(f"{r.name} checked={r.checked} max_rel_error={r.max_rel_significant:.3e} "
                     f"max_abs_error={r.max_abs_error:.3e} passed={r.passed}")
    worst = max(r.max_rel_significant for r in reports)
    lines.append(f"max_rel_error={worst:.3e} passed={all(r.passed for r in reports)}")
    ctx.target("gradcheck.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(lines[-1])
    if not all(r.passed for r in reports):
        bad = ", ".join(r.name for r in reports if not r.passed)
        raise NumericError(f"gradient check failed for: {bad}")
    return 0


HELP = {
    "build-graph": "accumulate top-N score records into a confusion graph",
    "detect": "hierarchical community detection on the graph",
    "tree": "build the label tree from the hierarchy",
    "relabel": "write per-level targets for each training sample",
    "train": "two-phase training of the branch network",
    "eval": "per-branch accuracy and score records of a saved model",
    "export-dot": "Graphviz export of the tree (or the graph if no tree exists)",
    "gradcheck": "finite-difference check of the analytic gradients",
    "synth": "generate a planted-hierarchy dataset",
}

HANDLERS = {
    "build-graph": cmd_build_graph, "detect": cmd_detect, "tree": cmd_tree, "relabel": cmd_relabel,
    "train": cmd_train, "eval": cmd_eval, "export-dot": cmd_export_dot, "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file")
    common.add_argument("--seed", type=int, help="global seed (overrides [run] seed)")
    common.add_argument("--n-top", type=int, help="scores per record used for the graph")
    common.add_argument("--out", help="output directory (overrides [run] out)")
    common.add_argument("--no-timestamp", action="store_true", help="omit the timestamp header line")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config key; repeatable")
    parser = argparse.ArgumentParser(prog="cvtnet", description="Confusion-graph label trees and branch networks.")
    parser.add_argument("--version", action="version", version=f"cvtnet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HELP[name])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.set)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.n_top is not None:
        overrides.append(f"graph.n_top={args.n_top}")
    if args.out is not None:
        overrides.append(f"run.out={args.out}")
    try:
        cfg = RunConfig.load(args.config, overrides)
        ctx = Context(args.command, cfg, timestamp=not args.no_timestamp)
        return HANDLERS[args.command](ctx)
    except CvtError as exc:
        print(f"cvtnet {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
