"""Command-line surface: synth-data, train, evaluate, caption, ablate,
select-champion.

Exit codes: 0 success, 1 runtime error, 2 usage error. Every command is
reproducible: identical flags + seed produce identical artifacts.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .ablation import AblationSettings, run_ablation
from .beam import BeamConfig, beam_search, greedy_decode
from .data import gen_dataset, load_dataset, save_dataset
from .features import load_features, to_vector
from .heatmap import export_attention_heatmap
from .metrics import score_corpus
from .models import ARCHITECTURES, ModelConfig, build
from .training import (
    TrainingConfig,
    load_checkpoint,
    restore_model,
    select_champion,
    train,
)


def read_config(path: str | Path) -> dict[str, str]:
    """Flat key=value file with [section] headers; returns 'section.key' -> value."""
    section = ""
    values: dict[str, str] = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        if "=" not in line:
            raise ValueError(f"config line without '=': {raw!r}")
        key, value = line.split("=", 1)
        values[f"{section}.{key.strip()}" if section else key.strip()] = value.strip()
    return values


def _setting(args, config: dict[str, str], flag_value, key: str, cast):
    """CLI flag beats config file beats None."""
    if flag_value is not None:
        return flag_value
    if key in config:
        return cast(config[key])
    return None


def write_spec(path: Path, sections: dict[str, dict]) -> None:
    lines = []
    for name, kv in sections.items():
        lines.append(f"[{name}]")
        for k, v in kv.items():
            lines.append(f"{k} = {v}")
        lines.append("")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines), encoding="utf-8")


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"grid must look like 6x6, got {text!r}") from exc


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


# ---------------------------------------------------------------------------
# subcommands

def cmd_synth_data(args) -> int:
    bundle = gen_dataset(
        n_scenes=args.n,
        grid_h=args.grid[0],
        grid_w=args.grid[1],
        classes=tuple(args.classes.split(",")),
        colors=tuple(args.colors.split(",")),
        seed=args.seed,
        channels=args.channels,
        noise_sigma=args.sigma,
        two_object_prob=args.two_object_prob,
    )
    save_dataset(bundle, args.out)
    print(f"wrote {len(bundle.examples)} scenes, vocab size {len(bundle.vocab)}, to {args.out}")
    return 0


def _split(examples, val_fraction: float):
    n_val = max(1, int(len(examples) * val_fraction))
    if n_val >= len(examples):
        raise ValueError("dataset too small to split")
    return examples[:-n_val], examples[-n_val:]


def cmd_train(args) -> int:
    config_file = read_config(args.config) if args.config else {}

    def pick(flag, key, cast, default):
        value = _setting(args, config_file, flag, key, cast)
        return default if value is None else value

    epochs = pick(args.epochs, "training.epochs", int, 25)
    lr = pick(args.lr, "training.learning_rate", float, 1e-4)
    batch = pick(args.batch, "training.batch_size", int, 32)
    seed = pick(args.seed, "training.seed", int, 0)
    units = pick(args.units, "model.decoder_units", int, 256)
    embed = pick(args.embed, "model.embed_dim", int, 64)
    attn = pick(args.attn, "model.attn_dim", int, 256)
    enc_units = pick(args.enc_units, "model.enc_units", int, units)
    val_frac = pick(args.val_frac, "training.val_fraction", float, 0.2)

    bundle = load_dataset(args.data)
    train_set, val_set = _split(bundle.examples, val_frac)
    grid = bundle.examples[0].features
    model_config = ModelConfig(
        architecture=args.arch,
        vocab_size=len(bundle.vocab),
        embed_dim=embed,
        feature_dim=grid.channels,
        decoder_units=units,
        grid_h=grid.grid_h if args.arch == "focalis" else None,
        grid_w=grid.grid_w if args.arch == "focalis" else None,
        attn_dim=attn,
        enc_units=enc_units,
    )
    training_config = TrainingConfig(
        learning_rate=lr,
        max_epochs=epochs,
        batch_size=batch,
        seed=seed,
        clipnorm=pick(args.clipnorm, "training.clipnorm", float, 1.0),
        label_epsilon=pick(args.label_eps, "training.label_epsilon", float, 0.1),
        plateau_patience=pick(None, "training.plateau_patience", int, 1),
        plateau_factor=pick(None, "training.plateau_factor", float, 0.5),
        early_stop_patience=pick(None, "training.early_stop_patience", int, 3),
    )

    out = Path(args.out)
    resume = load_checkpoint(args.resume) if args.resume else None
    if resume is not None:
        model = restore_model(resume)
    else:
        model = build(model_config, seed=seed)
    write_spec(out / "spec.txt", {
        "model": {k: v for k, v in vars(model.config).items() if v is not None},
        "training": vars(training_config),
        "data": {"path": args.data, "n_examples": len(bundle.examples)},
    })
    result = train(
        model, train_set, val_set, training_config,
        out_dir=out / "checkpoints", resume_from=resume, log=print,
    )
    # loss.csv also at the run root, next to spec.txt
    (out / "loss.csv").write_bytes((out / "checkpoints" / "loss.csv").read_bytes())
    print(f"finished after {len(result.rows)} epoch(s); "
          f"{'early-stopped' if result.stopped_early else 'budget exhausted'}")
    return 0


def _generate_captions(model, examples, vocab, beam_config: BeamConfig, greedy: bool):
    candidates = []
    for ex in examples:
        feats = ex.features if model.config.architecture == "focalis" else to_vector(ex.features)
        if greedy:
            hyp = greedy_decode(model, feats, max_len=beam_config.max_len)
        else:
            hyp = beam_search(model, feats, beam_config)[0]
        candidates.append(vocab.decode(hyp.tokens))
    return candidates


def cmd_evaluate(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    model = restore_model(ckpt)
    bundle = load_dataset(args.data)
    beam_config = BeamConfig(beam_width=args.beam, max_len=args.max_len)
    candidates = _generate_captions(model, bundle.examples, bundle.vocab, beam_config, args.greedy)
    references = [[bundle.vocab.decode(r) for r in ex.references] for ex in bundle.examples]
    report = score_corpus(candidates, references)
    report.write_csv(args.out)
    print(f"corpus BLEU-1..4: " + " ".join(f"{b:.4f}" for b in report.corpus_bleu))
    print(f"mean METEOR {report.mean_meteor:.4f}  F1 {report.mean_f1:.4f}")
    print(f"wrote {args.out}")
    return 0


def cmd_caption(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    model = restore_model(ckpt)
    from .data import Vocabulary

    vocab = Vocabulary.load(args.vocab)
    grid = load_features(args.features)
    if model.config.architecture == "focalis":
        feats = grid
    else:
        if args.heatmaps:
            raise ValueError(
                f"--heatmaps requires an attention model; {model.config.architecture} has none"
            )
        feats = to_vector(grid)
    beam_config = BeamConfig(beam_width=args.beam, max_len=args.max_len)
    best = beam_search(model, feats, beam_config)[0]
    words = vocab.decode(best.tokens)
    print(" ".join(words))
    if args.heatmaps:
        steps = [w for w, _ in zip(best.attention, best.tokens)]
        export_attention_heatmap(
            [vocab.id_to_token[t] for t in best.tokens][: len(steps)],
            steps, grid.grid_h, grid.grid_w, args.heatmaps,
        )
        print(f"wrote {len(steps)} heatmap(s) to {args.heatmaps}")
    return 0


def cmd_ablate(args) -> int:
    settings = AblationSettings(
        n_scenes=args.n,
        grid_h=args.grid[0],
        grid_w=args.grid[1],
        noise_sigma=args.sigma,
        seeds=tuple(int(s) for s in args.seeds.split(",")),
        architectures=tuple(args.archs.split(",")),
        epochs=args.epochs,
        data_seed=args.seed,
    )
    for arch in settings.architectures:
        if arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {arch!r}; valid: {', '.join(ARCHITECTURES)}")
    report = run_ablation(settings, out_dir=args.out, log=print)
    for row in report.rows:
        print(f"{row.architecture} seed {row.seed}: corpus BLEU-4 {row.bleu4:.4f}")
    if {"focalis", "clarity"} <= set(settings.architectures):
        held = report.focalis_beats_clarity_every_seed()
        print(f"focalis > clarity for every seed: {'yes' if held else 'NO'}")
    print(f"report written to {args.out}")
    return 0


def cmd_select_champion(args) -> int:
    ckpt_dir = Path(args.ckpt_dir)
    paths = sorted(ckpt_dir.glob("*.ckpt"))
    if not paths:
        raise ValueError(f"no checkpoints in {ckpt_dir}")
    bundle = load_dataset(args.data)
    sample = bundle.examples[: args.sample] if args.sample else bundle.examples
    references = [[bundle.vocab.decode(r) for r in ex.references] for ex in sample]
    beam_config = BeamConfig(beam_width=args.beam, max_len=args.max_len)

    checkpoints = [load_checkpoint(p) for p in paths]
    scores = {}
    for ckpt in checkpoints:
        model = restore_model(ckpt)
        candidates = _generate_captions(model, sample, bundle.vocab, beam_config, greedy=False)
        report = score_corpus(candidates, references)
        scores[ckpt.epoch] = report.corpus_bleu[3]
        print(f"epoch {ckpt.epoch:4d}  BLEU-4 {report.corpus_bleu[3]:.4f}")
    champion = select_champion(checkpoints, lambda c: scores[c.epoch])
    print(f"champion: epoch {champion.epoch}")
    print(champion.path)
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="captionlab", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic captioned-scene dataset")
    p.add_argument("--n", type=_positive_int, required=True)
    p.add_argument("--grid", type=_parse_grid, default=(6, 6))
    p.add_argument("--classes", default="square,circle,triangle")
    p.add_argument("--colors", default="red,green,blue")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--channels", type=_positive_int, default=16)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--two-object-prob", type=float, default=0.3)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth_data)

    p = sub.add_parser("train", help="train one architecture on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--arch", choices=ARCHITECTURES, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="key=value config file; CLI flags override it")
    p.add_argument("--epochs", type=_positive_int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=_positive_int)
    p.add_argument("--seed", type=int)
    p.add_argument("--units", type=_positive_int)
    p.add_argument("--embed", type=_positive_int)
    p.add_argument("--attn", type=_positive_int)
    p.add_argument("--enc-units", type=_positive_int)
    p.add_argument("--clipnorm", type=float)
    p.add_argument("--label-eps", type=float)
    p.add_argument("--val-frac", type=float)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--beam", type=_positive_int, default=7)
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--max-len", type=_positive_int, default=30)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("caption", help="caption one feature file")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--beam", type=_positive_int, default=7)
    p.add_argument("--max-len", type=_positive_int, default=30)
    p.add_argument("--heatmaps", help="directory for per-word attention heatmaps")
    p.set_defaults(fn=cmd_caption)

    p = sub.add_parser("ablate", help="self-contained bottleneck ablation")
    p.add_argument("--n", type=_positive_int, default=500)
    p.add_argument("--grid", type=_parse_grid, default=(6, 6))
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--archs", default=",".join(ARCHITECTURES))
    p.add_argument("--epochs", type=_positive_int, default=50)
    p.add_argument("--seed", type=int, default=1234, help="dataset seed")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("select-champion", help="pick the best checkpoint by BLEU-4")
    p.add_argument("--ckpt-dir", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--sample", type=_positive_int, help="evaluate on the first N examples")
    p.add_argument("--beam", type=_positive_int, default=7)
    p.add_argument("--max-len", type=_positive_int, default=30)
    p.set_defaults(fn=cmd_select_champion)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError, FloatingPointError, IndexError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
