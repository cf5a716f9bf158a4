"""Training runs with periodic evaluation, checkpointing and resumption."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import CompoundDataset, write_matrix_csv
from .losses import LossWeights
from .metrics import Evaluator
from .models import FAMILIES, GenerativeModel, TrainConfig, build_model, load_model, save_model

log = logging.getLogger(__name__)

REPORT_FIELDS = ("epoch", "model", "fid_star", "kl_score", "era")


def derived_seed(*parts: int) -> int:
    """A 63-bit seed derived from integers, independent of any running generator."""
    return int(np.random.SeedSequence(list(parts)).generate_state(2, np.uint64)[0] >> np.uint64(1))


def family_index(family: str) -> int:
    return FAMILIES.index(family)


@dataclass
class ReportRow:
    epoch: int
    model: str
    fid_star: float
    kl_score: float
    era: float


@dataclass
class EvalReport:
    rows: list[ReportRow] = field(default_factory=list)

    def series(self, model: str, metric: str) -> dict[int, float]:
        return {r.epoch: getattr(r, metric) for r in self.rows if r.model == model}

    def final(self, model: str) -> ReportRow:
        return max((r for r in self.rows if r.model == model), key=lambda r: r.epoch)

    def write(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(REPORT_FIELDS)
            for r in sorted(self.rows, key=lambda r: (r.model, r.epoch)):
                w.writerow([r.epoch, r.model, "%.17g" % r.fid_star, "%.17g" % r.kl_score,
                            "%.17g" % r.era])

    @classmethod
    def read(cls, path) -> "EvalReport":
        with open(path, newline="") as f:
            rows = [ReportRow(int(r["epoch"]), r["model"], float(r["fid_star"]),
                              float(r["kl_score"]), float(r["era"])) for r in csv.DictReader(f)]
        return cls(rows)

    def merged(self, other: "EvalReport") -> "EvalReport":
        return EvalReport(self.rows + other.rows)


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _restore_rng(state: dict) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng


def should_evaluate(epoch: int, total: int, eval_every: int) -> bool:
    return epoch % eval_every == 0 or epoch == total


def train_with_eval(family: str, dataset: CompoundDataset, evaluator: Evaluator,
                    config: TrainConfig, out_dir, *, weights: LossWeights = LossWeights(),
                    eval_every: int = 1, n_generations: int = 10_000, resume: bool = False,
                    checkpoint_every: int = 1) -> tuple[GenerativeModel, EvalReport]:
    """Train one family, scoring fresh generations every ``eval_every`` reported epochs.

    The run directory receives ``checkpoint/`` (model files + manifest holding
    the training RNG state) and ``report.csv``.  Evaluation draws from seeds
    derived from (seed, epoch), never from the training generator, so a
    resumed run continues bit-identically.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_dir, report_path = out / "checkpoint", out / "report.csv"
    if resume and (ckpt_dir / "manifest.json").exists():
        model, manifest = load_model(ckpt_dir)
        if manifest["family"] != family:
            raise ValueError(f"checkpoint holds a {manifest['family']} model, not {family}")
        rng = _restore_rng(manifest["rng_state"])
        report = EvalReport.read(report_path) if report_path.exists() else EvalReport()
        done = model.report_epoch() or 0
        report.rows = [r for r in report.rows if r.epoch <= done]
        log.info("resuming %s at epoch %d", family, model.epoch)
    else:
        rng = np.random.default_rng(derived_seed(config.seed, family_index(family)))
        model = build_model(family, dataset.p, config, rng, weights)
        report = EvalReport()

    def checkpoint():
        save_model(model, ckpt_dir, {"seed": config.seed, "rng_state": _rng_state(rng),
                                     "train_config": {"epochs": config.epochs,
                                                      "batch_size": config.batch_size}})

    def on_epoch(m: GenerativeModel, losses: dict):
        e = m.report_epoch()
        log.info("%s epoch %d/%d %s", family, m.epoch, m.schedule_length(config.epochs),
                 " ".join(f"{k}={v:.4f}" for k, v in losses.items()))
        if e is not None and should_evaluate(e, config.epochs, eval_every):
            G = m.generate(n_generations, derived_seed(config.seed, family_index(family), e),
                           config.bernoulli_mask)
            s = evaluator.score(G)
            report.rows.append(ReportRow(e, family, **s))
            report.write(report_path)
            log.info("%s epoch %d fid*=%.4f kl=%.4f era=%.2f mean|rowsum-1|=%.4f", family, e,
                     s["fid_star"], s["kl_score"], s["era"],
                     float(np.abs(G.sum(axis=1) - 1.0).mean()))
        if m.epoch % checkpoint_every == 0 or m.epoch == m.schedule_length(config.epochs):
            checkpoint()

    model.train_fit(dataset.X, config, rng, on_epoch)
    report.write(report_path)
    return model, report


def write_generations(model: GenerativeModel, count: int, seed: int, path,
                      bernoulli_mask: bool = False) -> np.ndarray:
    G = model.generate(count, seed, bernoulli_mask)
    write_matrix_csv(path, G)
    return G


def plot_curves(report: EvalReport, references: dict | None, path) -> None:
    """Metric-vs-epoch curves per model, with test/noise reference lines."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    metrics = ("fid_star", "kl_score", "era")
    fig, axes = plt.subplots(1, 3, figsize=(15, 4))
    models = sorted({r.model for r in report.rows}, key=lambda m: FAMILIES.index(m))
    for ax, metric in zip(axes, metrics):
        for m in models:
            s = report.series(m, metric)
            ax.plot(list(s), list(s.values()), marker=".", label=m)
        if references:
            ax.axhline(references["test"][metric], color="k", ls="--", lw=1, label="test")
            ax.axhline(references["noise"][metric], color="r", ls=":", lw=1, label="noise")
        if metric != "era":
            ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_title(metric)
    axes[0].legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
