"""Attention heatmap export: one binary PGM (P5) per generated word, weights
min-max normalized to [0, 255] over the grid, plus a JSON sidecar with the
raw weights."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np


def weights_to_pgm_bytes(weights: np.ndarray, grid_h: int, grid_w: int) -> bytes:
    weights = np.asarray(weights, dtype=np.float64)
    if weights.size != grid_h * grid_w:
        raise ValueError(
            f"heatmap: {weights.size} weights do not fill a {grid_h}x{grid_w} grid"
        )
    lo, hi = weights.min(), weights.max()
    if hi - lo > 0:
        pixels = np.round((weights - lo) / (hi - lo) * 255.0).astype(np.uint8)
    else:
        pixels = np.full(weights.size, 127, dtype=np.uint8)  # uniform gray
    header = f"P5\n{grid_w} {grid_h}\n255\n".encode("ascii")
    return header + pixels.reshape(grid_h, grid_w).tobytes()


def export_attention_heatmap(
    words: list[str],
    weights_per_step: list[np.ndarray],
    grid_h: int,
    grid_w: int,
    out_dir: str | Path,
    prefix: str = "attn",
) -> list[Path]:
    """Write heatmap + sidecar files per step; returns the written paths."""
    if len(words) != len(weights_per_step):
        raise ValueError(
            f"heatmap: {len(words)} words but {len(weights_per_step)} weight vectors"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for step, (word, weights) in enumerate(zip(words, weights_per_step)):
        safe = "".join(ch if ch.isalnum() else "_" for ch in word)
        pgm = out_dir / f"{prefix}_{step:02d}_{safe}.pgm"
        pgm.write_bytes(weights_to_pgm_bytes(weights, grid_h, grid_w))
        sidecar = out_dir / f"{prefix}_{step:02d}_{safe}.json"
        sidecar.write_text(
            json.dumps({"word": word, "step": step, "weights": [float(w) for w in np.ravel(weights)]}),
            encoding="utf-8",
        )
        written.extend([pgm, sidecar])
    return written
