"""Command-line entry point: ``tgrounding {gen,train,eval,ablate,stats}``.

Configuration is layered: built-in defaults, then a YAML file (``--config``),
then command-line flags.  The merged result is written to
``<output_dir>/config.yaml`` so every run can be reproduced from its folder.
"""

import argparse
import copy
import json
import logging
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

import yaml

from . import checkpoint
from .data import SynthConfig, corpus_stats, format_stats, generate, load_corpus, write_corpus
from .errors import (
    ConfigError, ContractError, DataError, DimensionError, EvaluationError, FormatError, GroundingError,
    LoadError, NumericError,
)
from .graph import GraphConfig
from .matching import LossConfig
from .metrics import evaluate
from .model import ModelConfig, build_model
from .proposal import ProposalConfig
from .training import TrainConfig, groundtruth, predict, train
from .validation import check_corpus

log = logging.getLogger("tgrounding")

CATEGORIES = [(FormatError, "format"), (DataError, "data"), (ConfigError, "config"),
              (DimensionError, "dimension"), (ContractError, "contract"), (NumericError, "numeric"),
              (EvaluationError, "evaluation"), (LoadError, "load"), (GroundingError, "error")]
IO_EXIT = 3


def default_config():
    model = ModelConfig().to_dict()
    for key in ("T", "d_v", "d_q"):
        model.pop(key)  # taken from the data section
    train_cfg = asdict(TrainConfig())
    train_cfg.pop("seed")
    data = asdict(SynthConfig())
    data.pop("seed")
    return {"seed": 0, "data": data, "model": model, "train": train_cfg,
            "eval": {"split": "test", "top_k": 5}}


def deep_merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        where = f"{path}{key}"
        if key not in out:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(out[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a mapping")
            out[key] = deep_merge(out[key], value, where + ".")
        else:
            out[key] = value
    return out


# flag dest -> config path
FLAG_PATHS = {
    "seed": ("seed",),
    "num_videos": ("data", "num_videos"),
    "clips": ("data", "T"),
    "noise_sigma": ("data", "noise_sigma"),
    "mode": ("train", "mode"),
    "epochs": ("train", "epochs"),
    "batch_size": ("train", "batch_size"),
    "learning_rate": ("train", "learning_rate"),
    "weight_decay": ("train", "weight_decay"),
    "static_on": ("model", "static_on"),
    "dynamic_on": ("model", "dynamic_on"),
    "hidden": ("model", "hidden"),
    "aggregator": ("model", "graph", "aggregator"),
    "num_layers": ("model", "graph", "num_layers"),
    "gamma": ("model", "graph", "gamma"),
    "num_kernels": ("model", "graph", "num_kernels"),
    "kernel_step": ("model", "graph", "kernel_step"),
    "fusion": ("model", "proposal", "fusion"),
    "pooling": ("model", "proposal", "pooling"),
    "split": ("eval", "split"),
}


def resolve_config(args):
    cfg = default_config()
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{args.config}: invalid YAML ({exc})") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"{args.config}: top level must be a mapping")
        cfg = deep_merge(cfg, loaded)
    for dest, path in FLAG_PATHS.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        node = cfg
        for key in path[:-1]:
            node = node[key]
        node[path[-1]] = value
    return cfg


def _build(cls, values, section):
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"{section}: unknown keys {unknown}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"{section}: {exc}") from None


def synth_config(cfg):
    return _build(SynthConfig, dict(cfg["data"], seed=cfg["seed"]), "data")


def model_config(cfg, T, d_v, d_q):
    m = dict(cfg["model"])
    graph = _build(GraphConfig, m.pop("graph"), "model.graph")
    proposal = _build(ProposalConfig, m.pop("proposal"), "model.proposal")
    return _build(ModelConfig, dict(m, T=T, d_v=d_v, d_q=d_q, graph=graph, proposal=proposal),
                  "model")


def train_config(cfg):
    t = dict(cfg["train"])
    loss = _build(LossConfig, t.pop("loss"), "train.loss")
    out = _build(TrainConfig, dict(t, seed=cfg["seed"], loss=loss), "train")
    return out


def write_config(cfg, out_dir):
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.yaml", "w") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True)


def corpus_split(root, split):
    """A corpus root is either a split folder itself or a parent holding ``<split>/``."""
    root = Path(root)
    if (root / "annotations.json").exists():
        return root
    if (root / split / "annotations.json").exists():
        return root / split
    raise FileNotFoundError(f"no {split!r} corpus under {root}")


def _load(root, split, dims=None):
    """Load a split and check every sample against ``dims`` (defaults to the first sample's)."""
    corpus = load_corpus(corpus_split(root, split))
    if not corpus:
        raise DataError(f"{root}: corpus {split!r} is empty")
    corpus, _ = check_corpus(corpus, *(dims or (None, None, None)))
    return corpus


def dims_of(corpus):
    s = corpus[0]
    return s.clip_features.shape[0], s.clip_features.shape[1], s.query_features.shape[1]


# ----------------------------------------------------------------------------
# commands


def cmd_gen(args, cfg):
    out = Path(args.output_dir)
    scfg = synth_config(cfg)
    sizes = {"train": scfg.num_videos, "val": args.eval_videos or scfg.num_videos,
             "test": args.eval_videos or scfg.num_videos}
    for split in args.splits:
        sc = _build(SynthConfig, dict(asdict(scfg), num_videos=sizes[split]), "data")
        corpus = generate(sc, split)
        write_corpus(out / split, corpus)
        print(f"{split}: {len(corpus)} videos, {sum(s.num_queries for s in corpus)} queries -> {out / split}")
    write_config(cfg, out)
    return 0


def fit(cfg, corpus_root, out_dir=None, quiet=False):
    corpus = _load(corpus_root, "train")
    dims = dims_of(corpus)
    try:
        val = _load(corpus_root, "val", dims)
    except FileNotFoundError:
        val = None
    net = build_model(model_config(cfg, *dims), cfg["seed"])
    tcfg = train_config(cfg)
    log_fh = open(out_dir / "train_log.jsonl", "w") if out_dir else None

    def record(entry):
        if log_fh:
            log_fh.write(json.dumps(entry, sort_keys=True) + "\n")
            log_fh.flush()
        if not quiet:
            extra = ""
            if "val" in entry:
                extra = f"  val R@1,IoU@0.5={entry['val']['R@1_IoU@0.5']:.2f}"
            print(f"epoch {entry['epoch']:3d}  loss {entry['loss']:.6f}{extra}", flush=True)

    try:
        history = train(net, corpus, tcfg, val_corpus=val, callback=record)
    finally:
        if log_fh:
            log_fh.close()
    return net, history


def cmd_train(args, cfg):
    out = Path(args.output_dir)
    write_config(cfg, out)
    start = time.time()
    net, history = fit(cfg, args.corpus, out)
    path = checkpoint.save_checkpoint(out / "checkpoint.npz", net, cfg["seed"], {"config": cfg})
    print(f"final loss {history[-1]['loss']:.9f}; checkpoint {path} ({time.time() - start:.1f}s)")
    return 0


def report_for(net, corpus, cfg):
    preds = predict(net, corpus, cfg["train"]["nms_threshold"], cfg["eval"]["top_k"])
    return evaluate(preds, groundtruth(corpus))


def write_report(report, out_dir):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metrics.txt").write_text(report.to_text())
    (out_dir / "metrics.json").write_text(report.to_json() + "\n")


def cmd_eval(args, cfg):
    net, meta = checkpoint.load_checkpoint(args.checkpoint)
    corpus = _load(args.corpus, cfg["eval"]["split"], (net.cfg.T, net.cfg.d_v, net.cfg.d_q))
    report = report_for(net, corpus, cfg)
    out = Path(args.output_dir)
    write_config(cfg, out)
    write_report(report, out)
    sys.stdout.write(report.to_text())
    return 0


ABLATION_ROWS = [("full", True, True), ("static_only", True, False),
                 ("dynamic_only", False, True), ("baseline", False, False)]


def format_table(rows):
    keys = ["R@1_IoU@0.3", "R@1_IoU@0.5", "R@1_IoU@0.7", "R@5_IoU@0.5", "mIoU"]
    head = f"{'variant':<24}" + "".join(f"{k:>14}" for k in keys)
    lines = [head, "-" * len(head)]
    for name, rep in rows:
        d = rep.as_dict()
        lines.append(f"{name:<24}" + "".join(f"{d[k]:>14.2f}" for k in keys))
    return "\n".join(lines) + "\n"


def cmd_ablate(args, cfg):
    out = Path(args.output_dir)
    write_config(cfg, out)
    test = _load(args.corpus, cfg["eval"]["split"])
    variants = [(name, {"static_on": s, "dynamic_on": d}, {}) for name, s, d in ABLATION_ROWS]
    for agg in args.aggregators or []:
        variants.append((f"full_{agg}", {"static_on": True, "dynamic_on": True}, {"aggregator": agg}))
    rows, results = [], {}
    for name, toggles, graph in variants:
        run = copy.deepcopy(cfg)
        run["model"].update(toggles)
        run["model"]["graph"].update(graph)
        net, _ = fit(run, args.corpus, quiet=True)
        rep = report_for(net, test, run)
        rows.append((name, rep))
        results[name] = rep.as_dict()
        print(f"{name}: R@1,IoU@0.5 = {rep.recall[(1, 0.5)]:.2f}", flush=True)
    table = format_table(rows)
    (out / "ablation.txt").write_text(table)
    (out / "ablation.json").write_text(json.dumps(results, indent=2, sort_keys=True) + "\n")
    sys.stdout.write(table)
    return 0


def cmd_stats(args, cfg):
    corpus = load_corpus(corpus_split(args.corpus, args.split or "train"))
    text = format_stats(corpus_stats(corpus, bins=args.bins))
    if args.output_dir:
        out = Path(args.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "stats.txt").write_text(text)
    sys.stdout.write(text)
    return 0


# ----------------------------------------------------------------------------
# argument parsing


def _common(p, output_required=True):
    p.add_argument("--config", help="YAML config file; flags override its values")
    p.add_argument("--output-dir", required=output_required, help="where results are written")
    p.add_argument("--seed", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def _data_flags(p):
    p.add_argument("--num-videos", type=int)
    p.add_argument("--clips", type=int, help="clips per video (T)")
    p.add_argument("--noise-sigma", type=float)


def _model_flags(p):
    p.add_argument("--mode", choices=["single_query", "multi_query"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--static", dest="static_on", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--dynamic", dest="dynamic_on", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--hidden", type=int)
    p.add_argument("--aggregator", choices=["tgf", "gcn", "gat", "inv_distance", "mlp_filter"])
    p.add_argument("--num-layers", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--num-kernels", type=int)
    p.add_argument("--kernel-step", type=float)
    p.add_argument("--fusion", choices=["content_only", "content_plus_boundary_add",
                                        "content_plus_boundary_concat"])
    p.add_argument("--pooling", choices=["maxpool", "conv"])


def build_parser():
    parser = argparse.ArgumentParser(prog="tgrounding", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic corpus (train/val/test folders)")
    _common(p)
    _data_flags(p)
    p.add_argument("--splits", nargs="+", default=["train", "val", "test"], choices=["train", "val", "test"])
    p.add_argument("--eval-videos", type=int, help="videos in val/test (default: same as train)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train a model; writes checkpoint.npz and train_log.jsonl")
    _common(p)
    _data_flags(p)
    _model_flags(p)
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint; writes metrics.txt and metrics.json")
    _common(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["train", "val", "test"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and evaluate the static/dynamic toggle grid")
    _common(p)
    _data_flags(p)
    _model_flags(p)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=["val", "test"])
    p.add_argument("--aggregators", nargs="*", choices=["gcn", "gat", "inv_distance", "mlp_filter"],
                   help="extra full-model rows with these graph aggregators")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("stats", help="query-count and target-position histograms")
    _common(p, output_required=False)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=["train", "val", "test"])
    p.add_argument("--bins", type=int, default=10)
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except GroundingError as exc:
        label = next(name for cls, name in CATEGORIES if isinstance(exc, cls))
        print(f"error [{label}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return IO_EXIT


if __name__ == "__main__":
    sys.exit(main())
