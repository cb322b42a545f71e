#!/usr/bin/env python3
"""Print the gradient-check table: worst relative error (backprop vs central
finite differences) for every layer and every architecture."""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from captionlab import autodiff as ad  # noqa: E402
from captionlab import layers  # noqa: E402
from captionlab.autodiff import Tensor  # noqa: E402
from captionlab.data import END, START  # noqa: E402
from captionlab.features import FeatureGrid, FeatureVector  # noqa: E402
from captionlab.models import ARCHITECTURES, ModelConfig, build, forward_train  # noqa: E402


def report_line(name, rep):
    flag = "ok " if rep.passed else "FAIL"
    print(f"  {flag}  {name:28s} worst rel err {rep.worst:.3e}")
    return rep.passed


def main() -> int:
    rng = np.random.default_rng(0)
    all_ok = True

    print("layers:")
    dense = layers.init_dense(rng, 5, 4)
    x = Tensor(rng.uniform(-1, 1, 5), requires_grad=True)
    all_ok &= report_line("dense", ad.grad_check(
        lambda: ad.sum_all(ad.tanh(dense(x))), {"w": dense.w, "b": dense.b, "x": x}))

    cell = layers.init_lstm_cell(rng, 4, 3)
    xt = Tensor(rng.uniform(-1, 1, 4), requires_grad=True)

    def lstm_loss():
        h, c = layers.zero_state(cell)
        h, c = layers.lstm_step(cell, xt, h, c)
        return ad.sum_all(ad.mul(h, h))

    all_ok &= report_line("lstm cell", ad.grad_check(
        lstm_loss, {"w_x": cell.w_x, "w_h": cell.w_h, "bias": cell.bias, "x": xt}))

    bi = layers.init_bilstm(rng, 3, 3)
    seq = Tensor(rng.uniform(-1, 1, (4, 3)), requires_grad=True)
    all_ok &= report_line("bi-lstm", ad.grad_check(
        lambda: ad.sum_all(ad.tanh(layers.bilstm_sequence(bi, seq))),
        {"seq": seq, "fwd.w_x": bi.fwd.w_x, "bwd.w_x": bi.bwd.w_x}))

    attn = layers.init_attention(rng, 3, 4, 3)
    q = Tensor(rng.uniform(-1, 1, 3), requires_grad=True)
    vals = Tensor(rng.uniform(-1, 1, (5, 4)), requires_grad=True)

    def attn_loss():
        ctx, _ = layers.attend(attn, q, vals)
        return ad.sum_all(ad.tanh(ctx))

    all_ok &= report_line("additive attention", ad.grad_check(
        attn_loss, {"q": q, "vals": vals, "w_q": attn.w_q, "w_k": attn.w_k, "v": attn.v}))

    logits = Tensor(rng.uniform(-2, 2, 6), requires_grad=True)
    all_ok &= report_line("label-smoothed CE", ad.grad_check(
        lambda: layers.label_smoothed_ce(logits, 2, 0.1), {"logits": logits}))

    print("architectures (end-to-end training loss):")
    caption = [START, 4, 5, 6, END]
    for arch in ARCHITECTURES:
        cfg = ModelConfig(
            architecture=arch, vocab_size=9, embed_dim=6, feature_dim=7,
            decoder_units=5, grid_h=3 if arch == "focalis" else None,
            grid_w=3 if arch == "focalis" else None, attn_dim=4, enc_units=3,
        )
        model = build(cfg, seed=1)
        if arch == "focalis":
            feats = FeatureGrid(3, 3, 7, rng.uniform(-1, 1, (3, 3, 7)).astype(np.float32))
        else:
            feats = FeatureVector(7, rng.uniform(-1, 1, 7))
        rep = ad.grad_check(lambda: forward_train(model, feats, caption, epsilon=0.1),
                            model.parameters())
        all_ok &= report_line(arch, rep)

    print("all checks passed" if all_ok else "SOME CHECKS FAILED")
    return 0 if all_ok else 1


if __name__ == "__main__":
    sys.exit(main())
