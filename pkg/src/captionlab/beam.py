"""Beam-search caption generation.

A hypothesis retires into the finished pool when it emits the end token or
hits max_len; ranking uses the cumulative log-probability, optionally
divided by length**alpha. Ties break deterministically on the token ids.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import END, START


@dataclass
class BeamConfig:
    beam_width: int = 7
    max_len: int = 30
    length_norm_alpha: float = 0.0

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")


@dataclass
class BeamHypothesis:
    tokens: list[int]           # generated tokens, without the start token
    log_prob: float
    finished: bool
    attention: list[np.ndarray] = field(default_factory=list)
    _state: object = None

    def score(self, alpha: float) -> float:
        if alpha > 0.0 and self.tokens:
            return self.log_prob / (len(self.tokens) ** alpha)
        return self.log_prob


def _log_probs(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def beam_search(
    model,
    features,
    config: BeamConfig,
    start_id: int = START,
    end_id: int = END,
) -> list[BeamHypothesis]:
    """Returns finished + live hypotheses, best first. The model must expose
    init_state(features) and decode_step(state, token) -> (logits, state, attn)."""
    alpha = config.length_norm_alpha
    with ad.no_grad():
        root_state = model.init_state(features)
        live = [BeamHypothesis(tokens=[], log_prob=0.0, finished=False, _state=root_state)]
        finished: list[BeamHypothesis] = []

        for _ in range(config.max_len):
            if not live:
                break
            candidates = []
            for hyp in live:
                last = hyp.tokens[-1] if hyp.tokens else start_id
                logits, state, attn = model.decode_step(hyp._state, last)
                lp = _log_probs(np.asarray(logits.data, dtype=np.float64))
                for tok in range(lp.shape[0]):
                    candidates.append((hyp, tok, hyp.log_prob + float(lp[tok]), state, attn))
            # deterministic: score desc, then token sequence ascending
            candidates.sort(key=lambda c: (-c[2], c[0].tokens + [c[1]]))
            next_live = []
            for hyp, tok, score, state, attn in candidates[: config.beam_width]:
                new = BeamHypothesis(
                    tokens=hyp.tokens + [tok],
                    log_prob=score,
                    finished=(tok == end_id),
                    attention=hyp.attention + ([attn] if attn is not None else []),
                    _state=state,
                )
                if new.finished:
                    finished.append(new)
                else:
                    next_live.append(new)
            live = next_live

        for hyp in live:
            hyp.finished = True  # max length hit
        pool = finished + live
        pool.sort(key=lambda h: (-h.score(alpha), h.tokens))
        return pool


def greedy_decode(
    model,
    features,
    max_len: int = 30,
    start_id: int = START,
    end_id: int = END,
) -> BeamHypothesis:
    """Plain argmax decoding (ties to the lowest token id), independent of
    beam_search so the K=1 reduction can be cross-checked."""
    with ad.no_grad():
        state = model.init_state(features)
        tokens: list[int] = []
        attention: list[np.ndarray] = []
        log_prob = 0.0
        last = start_id
        for _ in range(max_len):
            logits, state, attn = model.decode_step(state, last)
            lp = _log_probs(np.asarray(logits.data, dtype=np.float64))
            tok = int(np.argmax(lp))
            tokens.append(tok)
            log_prob += float(lp[tok])
            if attn is not None:
                attention.append(attn)
            if tok == end_id:
                break
            last = tok
        return BeamHypothesis(tokens=tokens, log_prob=log_prob, finished=True, attention=attention)
