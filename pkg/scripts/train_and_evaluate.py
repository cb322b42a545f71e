#!/usr/bin/env python3
"""End-to-end single-architecture run: synthesize a dataset, train, pick the
champion checkpoint by corpus BLEU-4, evaluate it, and (for focalis) export
attention heatmaps for the first example.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from captionlab.beam import BeamConfig, beam_search  # noqa: E402
from captionlab.data import gen_dataset, save_dataset  # noqa: E402
from captionlab.features import to_vector  # noqa: E402
from captionlab.heatmap import export_attention_heatmap  # noqa: E402
from captionlab.metrics import evaluate_corpus  # noqa: E402
from captionlab.models import ModelConfig, build  # noqa: E402
from captionlab.training import (  # noqa: E402
    TrainingConfig, load_checkpoint, restore_model, select_champion, train,
)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--arch", default="focalis",
                        choices=("genesis", "contexta", "clarity", "focalis"))
    parser.add_argument("--n", type=int, default=200)
    parser.add_argument("--epochs", type=int, default=25)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="runs/single")
    args = parser.parse_args()
    out = Path(args.out)

    print(f"[1/4] dataset: {args.n} scenes")
    bundle = gen_dataset(args.n, seed=1234, two_object_prob=0.1)
    save_dataset(bundle, out / "data")
    n_val = max(1, args.n // 5)
    train_set, val_set = bundle.examples[:-n_val], bundle.examples[-n_val:]

    print(f"[2/4] training {args.arch} for {args.epochs} epochs")
    grid = bundle.examples[0].features
    config = ModelConfig(
        architecture=args.arch, vocab_size=len(bundle.vocab),
        embed_dim=24, feature_dim=grid.channels, decoder_units=48,
        grid_h=grid.grid_h if args.arch == "focalis" else None,
        grid_w=grid.grid_w if args.arch == "focalis" else None,
        attn_dim=32, enc_units=32,
    )
    model = build(config, seed=args.seed)
    tcfg = TrainingConfig(learning_rate=1e-2, max_epochs=args.epochs, batch_size=16,
                          plateau_patience=6, early_stop_patience=args.epochs, seed=args.seed)
    train(model, train_set, val_set, tcfg, out_dir=out / "checkpoints", log=print)

    print("[3/4] champion selection over saved checkpoints (BLEU-4 on val)")
    beam = BeamConfig(beam_width=3, max_len=20)
    checkpoints = [load_checkpoint(p) for p in sorted((out / "checkpoints").glob("*.ckpt"))]
    sample = val_set[:50]
    scores = {}
    for ckpt in checkpoints[-5:]:  # score the last few epochs
        report = evaluate_corpus(restore_model(ckpt), sample, bundle.vocab, beam)
        scores[ckpt.epoch] = report.corpus_bleu[3]
        print(f"  epoch {ckpt.epoch:3d}  BLEU-4 {scores[ckpt.epoch]:.4f}")
    scored = [c for c in checkpoints if c.epoch in scores]
    champion = select_champion(scored, lambda c: scores[c.epoch])
    print(f"  champion: epoch {champion.epoch}")

    print("[4/4] final evaluation")
    model = restore_model(champion)
    report = evaluate_corpus(model, val_set, bundle.vocab, beam)
    report.write_csv(out / "eval.csv")
    print("  corpus BLEU-1..4: " + " ".join(f"{b:.4f}" for b in report.corpus_bleu))
    print(f"  mean METEOR {report.mean_meteor:.4f}  F1 {report.mean_f1:.4f}")

    if args.arch == "focalis":
        ex = val_set[0]
        best = beam_search(model, ex.features, beam)[0]
        words = bundle.vocab.decode(best.tokens)
        export_attention_heatmap(
            [bundle.vocab.id_to_token[t] for t in best.tokens][: len(best.attention)],
            best.attention, grid.grid_h, grid.grid_w, out / "heatmaps",
        )
        print(f"  caption: {' '.join(words)}")
        print(f"  heatmaps: {out / 'heatmaps'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
