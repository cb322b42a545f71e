"""The controlled bottleneck ablation: train the architectures on the same
positional synthetic scenes with a shared budget and shared seeds, then
compare corpus metrics.

Feature sources mirror the backbone story: genesis/contexta read the base
features, clarity/focalis read the "richer backbone" features (double the
channels, half the noise). Clarity and focalis therefore share one feature
source; clarity differs only in collapsing it through global average pooling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .beam import BeamConfig
from .data import examples_from_scenes, gen_scenes
from .metrics import EvalReport, evaluate_corpus
from .models import ModelConfig, build
from .training import TrainingConfig, train

BASE_FEATURE_ARCHS = ("genesis", "contexta")


@dataclass
class AblationSettings:
    n_scenes: int = 500
    grid_h: int = 6
    grid_w: int = 6
    noise_sigma: float = 0.1       # rich features; base features get 2x this
    channels: int = 16             # rich features; base features get half
    classes: tuple[str, ...] = ("square", "circle", "triangle")
    colors: tuple[str, ...] = ("red", "green", "blue")
    two_object_prob: float = 0.1
    data_seed: int = 1234
    seeds: tuple[int, ...] = (0, 1, 2)
    architectures: tuple[str, ...] = ("genesis", "contexta", "clarity", "focalis")
    val_fraction: float = 0.2
    # shared training budget
    epochs: int = 50
    learning_rate: float = 1e-2
    batch_size: int = 16
    label_epsilon: float = 0.1
    plateau_patience: int = 6  # small-batch val loss is noisy; patience=1 starves the lr
    # shared model dimensions
    embed_dim: int = 24
    decoder_units: int = 48
    enc_units: int = 32
    attn_dim: int = 32
    beam_width: int = 3
    max_len: int = 20


@dataclass
class AblationRow:
    architecture: str
    seed: int
    report: EvalReport

    @property
    def bleu4(self) -> float:
        return self.report.corpus_bleu[3]


@dataclass
class AblationReport:
    settings: AblationSettings
    rows: list[AblationRow] = field(default_factory=list)

    def mean_bleu4(self, arch: str) -> float:
        vals = [r.bleu4 for r in self.rows if r.architecture == arch]
        return float(np.mean(vals)) if vals else float("nan")

    def focalis_beats_clarity_every_seed(self) -> bool:
        by_seed: dict[int, dict[str, float]] = {}
        for r in self.rows:
            by_seed.setdefault(r.seed, {})[r.architecture] = r.bleu4
        pairs = [v for v in by_seed.values() if "focalis" in v and "clarity" in v]
        return bool(pairs) and all(v["focalis"] > v["clarity"] for v in pairs)

    def paper_ordering_held(self) -> bool:
        """focalis > contexta >= genesis > clarity, on seed-mean corpus BLEU-4."""
        f, x, g, c = (self.mean_bleu4(a) for a in ("focalis", "contexta", "genesis", "clarity"))
        if any(np.isnan(v) for v in (f, x, g, c)):
            return False
        return f > x >= g > c


def _datasets(settings: AblationSettings):
    scenes = gen_scenes(
        settings.n_scenes,
        settings.grid_h,
        settings.grid_w,
        list(settings.classes),
        list(settings.colors),
        settings.data_seed,
        settings.two_object_prob,
    )
    rich = examples_from_scenes(
        scenes,
        channels=settings.channels,
        noise_sigma=settings.noise_sigma,
        seed=settings.data_seed,
    )
    base = examples_from_scenes(
        scenes,
        channels=max(1, settings.channels // 2),
        noise_sigma=settings.noise_sigma * 2.0,
        seed=settings.data_seed,
        vocab=rich.vocab,
    )
    return base, rich


def _model_config(settings: AblationSettings, arch: str, vocab_size: int) -> ModelConfig:
    feature_dim = (
        max(1, settings.channels // 2) if arch in BASE_FEATURE_ARCHS else settings.channels
    )
    return ModelConfig(
        architecture=arch,
        vocab_size=vocab_size,
        embed_dim=settings.embed_dim,
        feature_dim=feature_dim,
        decoder_units=settings.decoder_units,
        grid_h=settings.grid_h if arch == "focalis" else None,
        grid_w=settings.grid_w if arch == "focalis" else None,
        attn_dim=settings.attn_dim,
        enc_units=settings.enc_units,
    )


def run_single(settings: AblationSettings, arch: str, seed: int, bundles=None, log=None) -> AblationRow:
    base, rich = bundles if bundles is not None else _datasets(settings)
    bundle = base if arch in BASE_FEATURE_ARCHS else rich
    n_val = max(1, int(len(bundle.examples) * settings.val_fraction))
    train_set = bundle.examples[:-n_val]
    val_set = bundle.examples[-n_val:]
    model = build(_model_config(settings, arch, len(bundle.vocab)), seed=seed)
    config = TrainingConfig(
        learning_rate=settings.learning_rate,
        label_epsilon=settings.label_epsilon,
        max_epochs=settings.epochs,
        batch_size=settings.batch_size,
        plateau_patience=settings.plateau_patience,
        early_stop_patience=settings.epochs,  # fixed budget: no early exit
        seed=seed,
    )
    train(model, train_set, val_set, config, log=log)
    report = evaluate_corpus(
        model, val_set, bundle.vocab,
        BeamConfig(beam_width=settings.beam_width, max_len=settings.max_len),
    )
    return AblationRow(architecture=arch, seed=seed, report=report)


def run_ablation(settings: AblationSettings, out_dir: str | Path | None = None, log=None) -> AblationReport:
    bundles = _datasets(settings)
    report = AblationReport(settings=settings)
    for arch in settings.architectures:
        for seed in settings.seeds:
            if log:
                log(f"[ablate] training {arch} seed {seed}")
            row = run_single(settings, arch, seed, bundles=bundles)
            if log:
                log(f"[ablate] {arch} seed {seed}: corpus BLEU-4 {row.bleu4:.4f}")
            report.rows.append(row)
    if out_dir is not None:
        write_ablation_report(report, Path(out_dir))
    return report


def write_ablation_report(report: AblationReport, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_lines = ["architecture,seed,bleu1,bleu2,bleu3,bleu4,meteor,precision,recall,f1"]
    for row in report.rows:
        r = row.report
        b = ",".join(f"{x:.6f}" for x in r.corpus_bleu)
        csv_lines.append(
            f"{row.architecture},{row.seed},{b},{r.mean_meteor:.6f},"
            f"{r.mean_precision:.6f},{r.mean_recall:.6f},{r.mean_f1:.6f}"
        )
    (out_dir / "ablation.csv").write_text("\n".join(csv_lines) + "\n", encoding="utf-8")

    lines = ["# Bottleneck ablation", ""]
    lines.append("| architecture | seed | BLEU-4 | METEOR | F1 |")
    lines.append("|---|---|---|---|---|")
    for row in report.rows:
        r = row.report
        lines.append(
            f"| {row.architecture} | {row.seed} | {row.bleu4:.4f} | "
            f"{r.mean_meteor:.4f} | {r.mean_f1:.4f} |"
        )
    lines.append("")
    archs = {r.architecture for r in report.rows}
    if {"focalis", "clarity"} <= archs:
        verdict = "held" if report.focalis_beats_clarity_every_seed() else "did NOT hold"
        lines.append(f"- focalis > clarity (corpus BLEU-4, every seed): **{verdict}**")
    if {"genesis", "contexta", "clarity", "focalis"} <= archs:
        verdict = "held" if report.paper_ordering_held() else "did NOT hold"
        lines.append(
            f"- qualitative ordering focalis > contexta >= genesis > clarity "
            f"(seed-mean corpus BLEU-4): **{verdict}**"
        )
    lines.append("")
    lines.append("## Experiment spec")
    lines.append("```json")
    lines.append(json.dumps(asdict(report.settings), indent=2))
    lines.append("```")
    (out_dir / "ablation.md").write_text("\n".join(lines) + "\n", encoding="utf-8")
