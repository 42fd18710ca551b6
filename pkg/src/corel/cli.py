"""Command-line pipelines: train, sweep-lambda, export-latents, cluster.

A run is described by a flat JSON config (see ``RunConfig``). Flags override
file values. Every artifact embeds the resolved config and seed, and all
outputs are buffered and written only after the whole command succeeds.
"""

from __future__ import annotations

import argparse
import dataclasses
import io
import json
import logging
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__, cluster, data, network, optim
from .errors import ConfigurationError, ContractViolation
from .linalg import make_rng, pca_project
from .losses import MNIST_FFNN_LAMBDA, VARIANTS, LossConfig, canonical_variant

log = logging.getLogger("corel")

DATASET_KINDS = ("mnist", "idx", "csv", "blobs")
SPLITS = ("train", "val", "test")

# RNG stream ids derived from one run seed
STREAM_INIT, STREAM_TRAIN, STREAM_CLUSTER = 1, 2, 3


def default_lambda_grid() -> list[float]:
    return [round(0.05 * i, 2) for i in range(1, 21)]


@dataclass(frozen=True)
class RunConfig:
    # dataset
    dataset: str = "blobs"
    mnist_root: str = "data/mnist"
    train_subset: int | None = None
    images: str | None = None
    labels: str | None = None
    csv_path: str | None = None
    csv_header: bool = False
    blobs_k: int = 4
    blobs_n_per_class: int = 100
    blobs_dim: int = 16
    blobs_spread: float = 3.0
    blobs_sigma: float = 1.0
    val_fraction: float = 0.15
    test_fraction: float = 0.15
    data_seed: int = 0
    # loss
    variant: str = "gaussian"
    lam: float | None = None
    gamma: float = 0.5
    alpha: float = 0.25
    reduction: str = "mean"
    # network and optimiser
    hidden: list[int] = field(default_factory=lambda: [128, 128])
    slope: float = 0.1
    dropout: float = 0.0
    epochs: int = 20
    batch_size: int = 128
    lr: float = 1e-4
    seeds: list[int] = field(default_factory=lambda: [0])
    # sweep
    lambda_grid: list[float] = field(default_factory=default_lambda_grid)
    # export and cluster
    checkpoint: str | None = None
    split: str = "test"
    latents: str | None = None
    k: int | None = None
    normalize: bool = False
    n_init: int = 10

    def loss_config(self, lam: float | None = None) -> LossConfig:
        return LossConfig(self.variant, lam=self.resolved_lambda() if lam is None else lam,
                          gamma=self.gamma, alpha=self.alpha, reduction=self.reduction)

    def resolved_lambda(self) -> float:
        if self.lam is not None:
            return self.lam
        return MNIST_FFNN_LAMBDA.get(self.variant, 0.5)

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["lam"] = self.resolved_lambda()
        return doc


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_INT_FIELDS = {"train_subset", "blobs_k", "blobs_n_per_class", "blobs_dim", "data_seed",
               "epochs", "batch_size", "k", "n_init"}
_FLOAT_FIELDS = {"blobs_spread", "blobs_sigma", "val_fraction", "test_fraction", "lam",
                 "gamma", "alpha", "slope", "dropout", "lr"}
_BOOL_FIELDS = {"csv_header", "normalize"}
_STR_FIELDS = {"dataset", "mnist_root", "images", "labels", "csv_path", "variant",
               "reduction", "checkpoint", "split", "latents"}
_INT_LIST_FIELDS = {"hidden", "seeds"}
_FLOAT_LIST_FIELDS = {"lambda_grid"}


def _coerce(key: str, value):
    """Type-check one config value. Strings from the command line are parsed
    as JSON first, so ``--set hidden=[64,64]`` works."""
    if key not in _FIELDS:
        raise ConfigurationError(f"unknown config key {key!r}")
    if value is None:
        if key in _STR_FIELDS or key in {"train_subset", "lam", "k"}:
            return None
        raise ConfigurationError(f"{key} may not be null")
    if key in _BOOL_FIELDS:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{key} must be true or false")
        return value
    if key in _INT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{key} must be an integer, got {value!r}")
        return value
    if key in _FLOAT_FIELDS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{key} must be a number, got {value!r}")
        return float(value)
    if key in _STR_FIELDS:
        if not isinstance(value, str):
            raise ConfigurationError(f"{key} must be a string, got {value!r}")
        return value
    if key in _INT_LIST_FIELDS:
        if not isinstance(value, list) or not all(
                isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigurationError(f"{key} must be a list of integers")
        return list(value)
    if key in _FLOAT_LIST_FIELDS:
        if not isinstance(value, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
            raise ConfigurationError(f"{key} must be a list of numbers")
        return [float(v) for v in value]
    raise AssertionError(key)


def _parse_flag_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def validate(cfg: RunConfig, command: str) -> RunConfig:
    """Semantic checks that need more than one field. Returns ``cfg`` with
    the variant name canonicalised."""
    if cfg.dataset not in DATASET_KINDS:
        raise ConfigurationError(f"dataset must be one of {DATASET_KINDS}")
    cfg = dataclasses.replace(cfg, variant=canonical_variant(cfg.variant))
    cfg.loss_config()  # range checks on lambda, gamma, alpha, reduction
    if not cfg.seeds:
        raise ConfigurationError("seeds must not be empty")
    if len(set(cfg.seeds)) != len(cfg.seeds) or min(cfg.seeds) < 0:
        raise ConfigurationError("seeds must be distinct non-negative integers")
    if cfg.epochs < 0 or cfg.batch_size < 1 or cfg.lr <= 0:
        raise ConfigurationError("need epochs >= 0, batch_size >= 1 and lr > 0")
    if not cfg.hidden or min(cfg.hidden) < 1:
        raise ConfigurationError("hidden must list at least one positive layer width")
    if not 0.0 <= cfg.dropout < 1.0:
        raise ConfigurationError("dropout must lie in [0, 1)")
    if cfg.split not in SPLITS:
        raise ConfigurationError(f"split must be one of {SPLITS}")
    if cfg.dataset == "idx" and not (cfg.images and cfg.labels):
        raise ConfigurationError("dataset 'idx' needs images and labels paths")
    if cfg.dataset == "csv" and not cfg.csv_path:
        raise ConfigurationError("dataset 'csv' needs csv_path")
    if cfg.dataset == "blobs" and (cfg.blobs_k < 2 or cfg.blobs_n_per_class < 1
                                   or cfg.blobs_dim < 1 or cfg.blobs_sigma <= 0):
        raise ConfigurationError("blobs need k >= 2, n_per_class >= 1, dim >= 1, sigma > 0")
    if cfg.dataset != "mnist":
        if cfg.val_fraction < 0 or cfg.test_fraction < 0 \
                or cfg.val_fraction + cfg.test_fraction >= 1:
            raise ConfigurationError("split fractions must be >= 0 and sum to < 1")
    if command == "sweep-lambda":
        if not cfg.lambda_grid or not all(0.0 < v <= 1.0 for v in cfg.lambda_grid):
            raise ConfigurationError("lambda_grid must be a non-empty subset of (0, 1]")
        for v in cfg.lambda_grid:
            cfg.loss_config(lam=v)
    if command == "export-latents" and not cfg.checkpoint:
        raise ConfigurationError("export-latents needs checkpoint")
    if command == "cluster":
        if not cfg.latents:
            raise ConfigurationError("cluster needs latents (a CSV path)")
        if cfg.k is not None and cfg.k < 2:
            raise ConfigurationError("k must be >= 2")
        if cfg.n_init < 1:
            raise ConfigurationError("n_init must be >= 1")
    return cfg


def build_config(command: str, config_path: str | None, overrides: dict) -> RunConfig:
    values = {}
    if config_path:
        try:
            with open(config_path) as f:
                loaded = json.load(f)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {config_path}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigurationError("config file must hold a JSON object")
        values.update(loaded)
    values.update(overrides)
    typed = {k: _coerce(k, v) for k, v in values.items()}
    return validate(RunConfig(**typed), command)


# -- data ----------------------------------------------------------------------

def load_dataset(cfg: RunConfig) -> data.Dataset:
    rng = make_rng(cfg.data_seed)
    if cfg.dataset == "mnist":
        return data.load_mnist(cfg.mnist_root, rng, cfg.train_subset)
    if cfg.dataset == "idx":
        ds = data.load_idx(cfg.images, cfg.labels)
    elif cfg.dataset == "csv":
        ds = data.load_csv(cfg.csv_path, header=cfg.csv_header)
    else:
        ds = data.make_blobs(cfg.blobs_k, cfg.blobs_n_per_class, cfg.blobs_dim,
                             cfg.blobs_spread, cfg.blobs_sigma, rng)
    return data.split(ds, cfg.val_fraction, cfg.test_fraction, make_rng(cfg.data_seed, 1))


def _check_splits(ds: data.Dataset) -> None:
    if ds.train.size == 0:
        raise ConfigurationError("training split is empty")


# -- serialisation ---------------------------------------------------------------

def dumps(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=True) + "\n"


def format_csv(header: list[str], x: np.ndarray, labels: np.ndarray) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row, lab in zip(x, labels):
        buf.write(",".join(f"{v:.17g}" for v in row))
        buf.write(f",{int(lab)}\n")
    return buf.getvalue()


class Outputs:
    """Buffered artifacts, flushed to disk only once the command succeeds."""

    def __init__(self, root: str):
        self.root = root
        self.files: dict[str, str] = {}

    def add(self, name: str, text: str) -> None:
        self.files[name] = text

    def add_json(self, name: str, doc) -> None:
        self.add(name, dumps(doc))

    def flush(self) -> list[str]:
        written = []
        for name in sorted(self.files):
            path = os.path.join(self.root, name)
            os.makedirs(os.path.dirname(path), exist_ok=True)
            tmp = path + ".tmp"
            with open(tmp, "w", newline="") as f:
                f.write(self.files[name])
            os.replace(tmp, path)
            written.append(path)
        return written


# -- commands --------------------------------------------------------------------

def run_one(cfg: RunConfig, ds: data.Dataset, seed: int, lam: float | None = None):
    """Initialise and train one model. Returns the report."""
    loss_cfg = cfg.loss_config(lam)
    model = optim.init_model([ds.dim] + cfg.hidden, ds.k, make_rng(seed, STREAM_INIT),
                             slope=cfg.slope, dropout=cfg.dropout)
    meta = {"seed": seed, "data": ds.meta,
            "split_sizes": {"train": int(ds.train.size), "val": int(ds.val.size),
                            "test": int(ds.test.size)}}
    return optim.train(ds, model, loss_cfg, cfg.epochs, cfg.batch_size, cfg.lr,
                       make_rng(seed, STREAM_TRAIN), meta=meta)


def _mean_std(values: list[float]) -> tuple[float | None, float | None]:
    vals = [v for v in values if v is not None and np.isfinite(v)]
    if not vals:
        return None, None
    mean = float(np.mean(vals))
    std = float(np.std(vals, ddof=1)) if len(vals) > 1 else None
    return mean, std


def cmd_train(cfg: RunConfig, out: Outputs) -> dict:
    ds = load_dataset(cfg)
    _check_splits(ds)
    conf = cfg.to_dict()
    per_seed = []
    for seed in sorted(cfg.seeds):
        rep = run_one(cfg, ds, seed)
        best = rep.best_model
        doc = {"config": conf, "seed": seed, "report": rep.to_dict()}
        out.add_json(f"seed_{seed}/report.json", doc)
        out.add(f"seed_{seed}/checkpoint.json",
                network.checkpoint_text(best.net, best.W, best.centers,
                                        {"config": conf, "seed": seed}))
        per_seed.append({"seed": seed, "test_accuracy": rep.test_accuracy,
                         "best_val_accuracy": rep.best_val_accuracy,
                         "best_epoch": rep.best_epoch, "diverged": rep.diverged})
        log.info("seed %d: best epoch %s val %s test %s", seed, rep.best_epoch,
                 rep.best_val_accuracy, rep.test_accuracy)
    mean, std = _mean_std([r["test_accuracy"] for r in per_seed])
    agg = {"config": conf, "seeds": sorted(cfg.seeds), "runs": per_seed,
           "test_accuracy_mean": mean, "test_accuracy_std": std}
    out.add_json("aggregate.json", agg)
    return agg


def cmd_sweep_lambda(cfg: RunConfig, out: Outputs) -> dict:
    ds = load_dataset(cfg)
    _check_splits(ds)
    conf = cfg.to_dict()
    rows = []
    for lam in sorted(cfg.lambda_grid):
        for seed in sorted(cfg.seeds):
            rep = run_one(cfg, ds, seed, lam=lam)
            rows.append({"lam": lam, "seed": seed,
                         "best_val_accuracy": rep.best_val_accuracy,
                         "best_epoch": rep.best_epoch, "diverged": rep.diverged})
            log.info("lambda %.4g seed %d: val %s", lam, seed, rep.best_val_accuracy)
    summary = []
    for lam in sorted(cfg.lambda_grid):
        accs = [r["best_val_accuracy"] for r in rows if r["lam"] == lam]
        mean, std = _mean_std(accs)
        summary.append({"lam": lam, "val_accuracy_mean": mean, "val_accuracy_std": std})
    scored = [s for s in summary if s["val_accuracy_mean"] is not None]
    best = max(scored, key=lambda s: s["val_accuracy_mean"]) if scored else None  # first on ties
    doc = {"config": conf, "rows": rows, "summary": summary,
           "best_lam": None if best is None else best["lam"],
           "best_val_accuracy": None if best is None else best["val_accuracy_mean"]}
    out.add_json("sweep.json", doc)
    buf = io.StringIO()
    buf.write("lam,seed,best_val_accuracy,best_epoch,diverged\n")
    for r in rows:
        acc = "" if r["best_val_accuracy"] is None else f"{r['best_val_accuracy']:.17g}"
        ep = "" if r["best_epoch"] is None else str(r["best_epoch"])
        buf.write(f"{r['lam']:.17g},{r['seed']},{acc},{ep},{int(r['diverged'])}\n")
    out.add("sweep.csv", buf.getvalue())
    return doc


def cmd_export_latents(cfg: RunConfig, out: Outputs) -> dict:
    try:
        net, W, _, ck_meta = network.load_checkpoint(cfg.checkpoint)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot load checkpoint {cfg.checkpoint}: {exc}") from None
    ds = load_dataset(cfg)
    if net.sizes[0] != ds.dim:
        raise ConfigurationError(
            f"checkpoint expects {net.sizes[0]} input features, dataset has {ds.dim}")
    x, y = ds.part(cfg.split)
    if x.shape[0] == 0:
        raise ConfigurationError(f"split {cfg.split!r} is empty; nothing to export")
    h = network.latents(net, x)
    header = [f"f{i}" for i in range(h.shape[1])] + ["label"]
    out.add("latents.csv", format_csv(header, h, y))
    proj = np.zeros((h.shape[0], 2))
    pca_doc = None
    if h.shape[0] >= 2:
        pca = pca_project(h, min(2, h.shape[1]))
        proj[:, :pca.projection.shape[1]] = pca.projection
        pca_doc = {"explained_variance": pca.explained_variance.tolist(),
                   "explained_variance_ratio": pca.explained_variance_ratio.tolist(),
                   "degenerate": pca.degenerate}
    out.add("latents_pca.csv", format_csv(["pc0", "pc1", "label"], proj, y))
    doc = {"config": cfg.to_dict(), "checkpoint_meta": ck_meta, "split": cfg.split,
           "rows": int(h.shape[0]), "latent_dim": int(h.shape[1]), "pca": pca_doc}
    out.add_json("latents.meta.json", doc)
    return doc


def cmd_cluster(cfg: RunConfig, out: Outputs) -> dict:
    ds = data.load_csv(cfg.latents, header=True)
    k = cfg.k if cfg.k is not None else int(np.unique(ds.y).size)
    if k < 2:
        raise ConfigurationError("need k >= 2 clusters")
    if k > ds.n:
        raise ConfigurationError(f"k={k} exceeds the {ds.n} latent rows")
    seed = sorted(cfg.seeds)[0]
    km, gm = cluster.evaluate_latents(ds.x, ds.y, k, make_rng(seed, STREAM_CLUSTER),
                                      normalize=cfg.normalize, n_init=cfg.n_init)
    doc = {"config": cfg.to_dict(), "seed": seed, "k": k, "rows": ds.n,
           "kmeans": km.to_dict(), "gmm": gm.to_dict()}
    out.add_json("cluster.json", doc)
    return doc


COMMANDS = {
    "train": cmd_train,
    "sweep-lambda": cmd_sweep_lambda,
    "export-latents": cmd_export_latents,
    "cluster": cmd_cluster,
}


# -- argument parsing ----------------------------------------------------------

def _seed_list(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def _lambda_list(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad lambda list {text!r}") from None


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corel",
        description="Train attractive-repulsive loss networks and score the "
                    "clusterability of their latent spaces.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=_seed_list, help="seed or comma-separated seeds")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config field (value parsed as JSON)")
        p.add_argument("--dataset", choices=DATASET_KINDS)
        p.add_argument("--variant", choices=sorted(VARIANTS))
        p.add_argument("--lam", type=float)
        p.add_argument("--epochs", type=int)
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "sweep-lambda":
            p.add_argument("--grid", type=_lambda_list, help="comma-separated lambda values")
        if name == "export-latents":
            p.add_argument("--checkpoint")
            p.add_argument("--split", choices=SPLITS)
        if name == "cluster":
            p.add_argument("--latents")
            p.add_argument("--k", type=int)
    return parser


def _overrides(args) -> dict:
    over = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        over[key.strip()] = _parse_flag_value(value)
    shorthand = {"seeds": args.seed, "dataset": args.dataset, "variant": args.variant,
                 "lam": args.lam, "epochs": args.epochs,
                 "lambda_grid": getattr(args, "grid", None),
                 "checkpoint": getattr(args, "checkpoint", None),
                 "split": getattr(args, "split", None),
                 "latents": getattr(args, "latents", None),
                 "k": getattr(args, "k", None)}
    over.update({k: v for k, v in shorthand.items() if v is not None})
    return over


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args.command, args.config, _overrides(args))
    except (ConfigurationError, TypeError) as exc:
        print(f"corel: invalid configuration: {exc}", file=sys.stderr)
        return 2
    out = Outputs(args.out)
    try:
        COMMANDS[args.command](cfg, out)
    except (ConfigurationError, ContractViolation) as exc:
        print(f"corel: {exc}", file=sys.stderr)
        return 2
    except (data.FormatError, OSError, ValueError, FloatingPointError) as exc:
        print(f"corel: {args.command} failed: {exc}", file=sys.stderr)
        return 1
    for path in out.flush():
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
