"""Command-line entry point: ``bindedvae {synth,train,generate,evaluate,heatmap}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import (SynthConfig, default_rules, load_dataset, load_rules, read_matrix_csv,
                   save_dataset, save_rules, synth_dataset)
from .losses import LossWeights
from .metrics import (Evaluator, PredictorConfig, PropertyPredictor, era, reference_scores,
                      render_heatmap, train_predictor)
from .models import FAMILIES, TrainConfig, load_model, read_manifest
from .nn import NonFiniteError
from .pipeline import plot_curves, train_with_eval, write_generations, write_json

log = logging.getLogger("bindedvae")

CONFIG_VERSION = 1
DATASET_NAME = "dataset.csv"
RULES_NAME = "rules.json"
PREDICTOR_NAME = "predictor.ckpt"
REFERENCES_NAME = "references.json"


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    seed: int
    out: str = "run"
    dataset: str | None = None
    rules: str | None = None
    predictor: str | None = None
    model: str = "bvae"
    train: TrainConfig = field(default_factory=TrainConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    synth: SynthConfig = field(default_factory=SynthConfig)
    predictor_config: PredictorConfig = field(default_factory=PredictorConfig)
    eval_every: int = 1
    n_generations: int = 10_000

    @property
    def dataset_path(self) -> Path:
        return Path(self.dataset) if self.dataset else Path(self.out) / DATASET_NAME

    @property
    def rules_path(self) -> Path:
        return Path(self.rules) if self.rules else Path(self.out) / RULES_NAME

    @property
    def predictor_path(self) -> Path:
        return Path(self.predictor) if self.predictor else Path(self.out) / PREDICTOR_NAME

    def validate(self) -> None:
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise UsageError("a non-negative integer seed is required (--seed or config)")
        if self.model not in FAMILIES:
            raise UsageError(f"--model must be one of {', '.join(FAMILIES)}")
        if self.eval_every < 1:
            raise UsageError("--eval-every must be >= 1")
        if self.n_generations < 2:
            raise UsageError("--n-generations must be >= 2")
        if self.train.seed != self.seed:
            raise UsageError("train.seed must equal the run seed")
        try:
            self.synth.validate()
        except ValueError as e:
            raise UsageError(str(e)) from None


def _build(cls, d: dict, what: str):
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise UsageError(f"unknown {what} keys: {sorted(unknown)}")
    try:
        return cls.from_dict(d) if hasattr(cls, "from_dict") else cls(**d)
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid {what}: {e}") from None


def load_run_config(args: argparse.Namespace) -> RunConfig:
    """Merge the JSON config (if any) with command-line overrides, then validate."""
    raw: dict = {}
    if getattr(args, "config", None):
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config {args.config}: {e}") from None
        if raw.pop("version", CONFIG_VERSION) != CONFIG_VERSION:
            raise UsageError("unsupported config version")
    train = dict(raw.pop("train", {}))
    synth = dict(raw.pop("synth", {}))
    weights = dict(raw.pop("loss_weights", {}))
    pconf = dict(raw.pop("predictor_config", {}))
    for key in ("out", "dataset", "rules", "predictor", "model", "eval_every", "n_generations",
                "seed"):
        v = getattr(args, key, None)
        if v is not None:
            raw[key] = v
    if getattr(args, "epochs", None) is not None:
        train["epochs"] = args.epochs
    if getattr(args, "batch_size", None) is not None:
        train["batch_size"] = args.batch_size
    if getattr(args, "n", None) is not None:
        synth["n"] = args.n
    if "seed" not in raw:
        raise UsageError("a seed is required (--seed or \"seed\" in the config)")
    train.setdefault("seed", raw["seed"])
    synth.setdefault("seed", raw["seed"])
    pconf.setdefault("seed", raw["seed"])
    if "hidden" in pconf:
        pconf["hidden"] = tuple(pconf["hidden"])
    unknown = set(raw) - {f.name for f in fields(RunConfig)}
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    cfg = RunConfig(train=_build(TrainConfig, train, "train"),
                    synth=_build(SynthConfig, synth, "synth"),
                    loss_weights=_build(LossWeights, weights, "loss_weights"),
                    predictor_config=_build(PredictorConfig, pconf, "predictor_config"),
                    **raw)
    cfg.validate()
    return cfg


# ---------------------------------------------------------------- commands

def cmd_synth(cfg: RunConfig, force: bool) -> dict:
    path, rpath = cfg.dataset_path, cfg.rules_path
    if not force and (path.exists() or rpath.exists()):
        raise UsageError(f"{path} already exists; pass --force to overwrite")
    path.parent.mkdir(parents=True, exist_ok=True)
    ds = synth_dataset(cfg.synth)
    digest = save_dataset(ds, path)
    rules = default_rules(ds.groups, ds.p)
    save_rules(rules, rpath)
    summary = {"rows": ds.n, "components": ds.p, "sparsity": ds.sparsity,
               "rule_pass_rate": era(ds.X, rules), "sha256": digest}
    print(f"wrote {path} ({ds.n} x {ds.p}), sparsity {ds.sparsity:.4f}, "
          f"rule pass rate {summary['rule_pass_rate']:.2f}%, sha256 {digest[:16]}")
    return summary


def _require_inputs(cfg: RunConfig) -> None:
    for p, what in ((cfg.dataset_path, "dataset"), (cfg.rules_path, "rules")):
        if not p.exists():
            raise UsageError(f"{what} file {p} not found; run `bindedvae synth` first")


def ensure_predictor(cfg: RunConfig, dataset) -> PropertyPredictor:
    path = cfg.predictor_path
    if path.exists():
        return PropertyPredictor.load(path)
    pred = train_predictor(dataset, cfg.predictor_config)
    path.parent.mkdir(parents=True, exist_ok=True)
    pred.save(path)
    log.info("trained property predictor: relative val MSE %s", pred.record["val_rel_mse"])
    return pred


def ensure_references(cfg: RunConfig, dataset, predictor, rules) -> dict:
    path = Path(cfg.out) / REFERENCES_NAME
    if path.exists():
        return json.loads(path.read_text())
    refs = reference_scores(dataset, predictor, rules, cfg.seed)
    write_json(path, refs)
    return refs


def cmd_train(cfg: RunConfig, force: bool = False, resume: bool = False):
    _require_inputs(cfg)
    run_dir = Path(cfg.out) / cfg.model
    if run_dir.exists() and not (force or resume):
        raise UsageError(f"{run_dir} exists; pass --force to overwrite or --resume to continue")
    dataset = load_dataset(cfg.dataset_path)
    rules = load_rules(cfg.rules_path)
    predictor = ensure_predictor(cfg, dataset)
    refs = ensure_references(cfg, dataset, predictor, rules)
    evaluator = Evaluator(dataset.X, dataset.properties, predictor, rules)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_json(run_dir / "config.json", config_to_dict(cfg))
    try:
        model, report = train_with_eval(cfg.model, dataset, evaluator, cfg.train, run_dir,
                                        weights=cfg.loss_weights, eval_every=cfg.eval_every,
                                        n_generations=cfg.n_generations, resume=resume)
    except NonFiniteError as e:
        raise UsageError(f"training aborted: {e}; last good checkpoint kept in "
                         f"{run_dir / 'checkpoint'}") from None
    plot_curves(report, refs, run_dir / "curves.png")
    last = report.final(cfg.model)
    print(f"{cfg.model}: epoch {last.epoch} fid*={last.fid_star:.4f} "
          f"kl={last.kl_score:.4f} era={last.era:.2f}")
    return model, report


def cmd_generate(checkpoint: str, count: int, seed: int, out: str, family: str | None = None,
                 bernoulli_mask: bool = False):
    manifest = read_manifest(checkpoint)
    if family is not None and manifest["family"] != family:
        raise UsageError(f"checkpoint holds a {manifest['family']} model, not {family}")
    model, _ = load_model(checkpoint)
    G = write_generations(model, count, seed, out, bernoulli_mask)
    dev = float(np.abs(G.sum(axis=1) - 1.0).mean())
    print(f"wrote {count} {manifest['family']} generations to {out} "
          f"(mean |row sum - 1| = {dev:.4f})")
    return G


def cmd_evaluate(generations: str, cfg: RunConfig, out: str | None = None) -> dict:
    _require_inputs(cfg)
    if not cfg.predictor_path.exists():
        raise UsageError(f"no property predictor at {cfg.predictor_path}; train one with "
                         "`bindedvae train` (or pass --predictor)")
    dataset = load_dataset(cfg.dataset_path)
    rules = load_rules(cfg.rules_path)
    predictor = PropertyPredictor.load(cfg.predictor_path)
    G, _ = read_matrix_csv(generations)
    if G.shape[1] != dataset.p:
        raise UsageError(f"generations have {G.shape[1]} components, dataset has {dataset.p}")
    scores = Evaluator(dataset.X, dataset.properties, predictor, rules).score(G)
    refs = reference_scores(dataset, predictor, rules, cfg.seed)
    result = {**scores, "references": refs}
    print(" ".join(f"{k}={v:.6g}" for k, v in scores.items()))
    for name in ("test", "noise"):
        print(f"{name}_score: " + " ".join(f"{k}={v:.6g}" for k, v in refs[name].items()))
    if out:
        write_json(out, result)
    return result


def cmd_heatmap(csv_path: str, out: str, mask: bool = False) -> None:
    X, _ = read_matrix_csv(csv_path)
    if mask:
        X = (X > 0).astype(np.float64)
    try:
        render_heatmap(X, out)
    except OSError as e:
        raise UsageError(f"cannot write {out}: {e}") from None
    print(f"wrote {X.shape[0]}x{X.shape[1]} heatmap to {out}")


def config_to_dict(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    d["synth"] = cfg.synth.to_dict()
    d["version"] = CONFIG_VERSION
    return d


# ---------------------------------------------------------------- argparse

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bindedvae",
        description="Train and evaluate generative models of sparse compound formulations.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="run configuration JSON")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="run directory")
        p.add_argument("--dataset")
        p.add_argument("--rules")

    p = sub.add_parser("synth", help="write a synthetic dataset and rule set")
    common(p)
    p.add_argument("--n", type=int, help="number of compounds")
    p.add_argument("--force", action="store_true")

    p = sub.add_parser("train", help="train one model family with per-epoch evaluation")
    common(p)
    p.add_argument("--model", choices=FAMILIES)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--n-generations", type=int)
    p.add_argument("--predictor")
    p.add_argument("--force", action="store_true")
    p.add_argument("--resume", action="store_true", help="continue from the last checkpoint")

    p = sub.add_parser("generate", help="sample compounds from a checkpoint")
    p.add_argument("checkpoint", help="checkpoint directory (holding manifest.json)")
    p.add_argument("--model", choices=FAMILIES, help="expected model family")
    p.add_argument("--n-generations", type=int, default=10_000)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--bernoulli-mask", action="store_true")

    p = sub.add_parser("evaluate", help="score a generations CSV")
    common(p)
    p.add_argument("generations")
    p.add_argument("--predictor")
    p.add_argument("--report", help="write the scores as JSON here")

    p = sub.add_parser("heatmap", help="render a CSV as a PGM heatmap")
    p.add_argument("csv")
    p.add_argument("--out", required=True)
    p.add_argument("--mask", action="store_true", help="render the binary support instead")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            cmd_synth(load_run_config(args), args.force)
        elif args.command == "train":
            cmd_train(load_run_config(args), args.force, args.resume)
        elif args.command == "generate":
            if args.n_generations < 1:
                raise UsageError("--n-generations must be >= 1")
            cmd_generate(args.checkpoint, args.n_generations, args.seed, args.out, args.model,
                         args.bernoulli_mask)
        elif args.command == "evaluate":
            cmd_evaluate(args.generations, load_run_config(args), args.report)
        elif args.command == "heatmap":
            cmd_heatmap(args.csv, args.out, args.mask)
    except (UsageError, ValueError, FileNotFoundError, OSError) as e:
        print(f"bindedvae: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
