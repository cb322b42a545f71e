"""The four caption architectures, built on one shared interface:
teacher-forced training forward pass plus single-step decode.

genesis   static GAP vector, unidirectional LSTM decoder, additive fusion
contexta  static GAP vector, Bi-LSTM decoder over the prefix, concat fusion
clarity   contexta with a richer (higher-dim) feature source
focalis   spatial Bi-LSTM encoder + additive attention, unidirectional decoder

The Bi-LSTM decoder is defined as "re-run the Bi-LSTM over the whole prefix
each step and take the last row". Because the forward direction is causal
and the backward direction starts fresh at the prefix end, the last row
collapses to concat(causal forward state, one backward step on the current
input) -- the implementation uses that identity; the literal full-prefix
re-run lives in tests as the cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import layers
from .autodiff import Tensor
from .data import END, START
from .features import FeatureGrid, FeatureVector

ARCHITECTURES = ("genesis", "contexta", "clarity", "focalis")


@dataclass
class ModelConfig:
    architecture: str
    vocab_size: int
    embed_dim: int
    feature_dim: int
    decoder_units: int = 256
    grid_h: int | None = None   # attention models only
    grid_w: int | None = None
    attn_dim: int = 256
    enc_units: int | None = None  # spatial encoder units per direction; defaults to decoder_units
    fusion: str = "auto"

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(
                f"unknown architecture {self.architecture!r}; valid: {', '.join(ARCHITECTURES)}"
            )
        if self.fusion == "auto":
            self.fusion = "add" if self.architecture == "genesis" else "concat"
        if self.architecture == "genesis" and self.fusion != "add":
            raise ValueError("genesis uses additive fusion")
        if self.architecture in ("contexta", "clarity") and self.fusion != "concat":
            raise ValueError(f"{self.architecture} uses concat fusion")
        if self.architecture == "focalis" and (self.grid_h is None or self.grid_w is None):
            raise ValueError("focalis requires grid_h and grid_w")
        if self.enc_units is None:
            self.enc_units = self.decoder_units


@dataclass
class CaptionModel:
    config: ModelConfig
    embedding: Tensor
    img_proj: layers.Dense | None = None
    decoder: layers.LstmCell | None = None          # genesis / focalis
    decoder_bi: layers.BiLstm | None = None         # contexta / clarity
    spatial_encoder: layers.BiLstm | None = None    # focalis
    attention: layers.AdditiveAttention | None = None
    out_proj: layers.Dense = None  # type: ignore[assignment]

    def parameters(self) -> dict[str, Tensor]:
        """Stable name -> tensor map, the unit of checkpointing."""
        params: dict[str, Tensor] = {"embedding": self.embedding}

        def add_dense(prefix: str, d: layers.Dense | None):
            if d is not None:
                params[f"{prefix}.w"] = d.w
                params[f"{prefix}.b"] = d.b

        def add_cell(prefix: str, cell: layers.LstmCell | None):
            if cell is not None:
                params[f"{prefix}.w_x"] = cell.w_x
                params[f"{prefix}.w_h"] = cell.w_h
                params[f"{prefix}.bias"] = cell.bias

        add_dense("img_proj", self.img_proj)
        add_cell("decoder", self.decoder)
        if self.decoder_bi is not None:
            add_cell("decoder.fwd", self.decoder_bi.fwd)
            add_cell("decoder.bwd", self.decoder_bi.bwd)
        if self.spatial_encoder is not None:
            add_cell("spatial.fwd", self.spatial_encoder.fwd)
            add_cell("spatial.bwd", self.spatial_encoder.bwd)
        if self.attention is not None:
            params["attention.w_q"] = self.attention.w_q
            params["attention.w_k"] = self.attention.w_k
            params["attention.v"] = self.attention.v
        add_dense("out_proj", self.out_proj)
        return params

    def param_count(self) -> int:
        return sum(p.data.size for p in self.parameters().values())

    # beam search talks to models through these two methods
    def init_state(self, features):
        return init_state(self, features)

    def decode_step(self, state, token: int):
        return decode_step(self, state, token)


def build(config: ModelConfig, seed: int) -> CaptionModel:
    """Deterministic construction: same config + seed gives identical parameters."""
    rng = np.random.default_rng(seed)
    cfg = config
    emb = layers.init_embedding(rng, cfg.vocab_size, cfg.embed_dim)
    u = cfg.decoder_units

    if cfg.architecture == "genesis":
        img_proj = layers.init_dense(rng, cfg.feature_dim, u)
        decoder = layers.init_lstm_cell(rng, cfg.embed_dim, u)
        out = layers.init_dense(rng, u, cfg.vocab_size)
        return CaptionModel(cfg, emb, img_proj=img_proj, decoder=decoder, out_proj=out)

    if cfg.architecture in ("contexta", "clarity"):
        img_proj = layers.init_dense(rng, cfg.feature_dim, u)
        decoder_bi = layers.init_bilstm(rng, cfg.embed_dim, u)
        out = layers.init_dense(rng, 2 * u + u, cfg.vocab_size)
        return CaptionModel(cfg, emb, img_proj=img_proj, decoder_bi=decoder_bi, out_proj=out)

    # focalis
    enc = layers.init_bilstm(rng, cfg.feature_dim, cfg.enc_units)
    value_dim = 2 * cfg.enc_units
    attn = layers.init_attention(rng, u, value_dim, cfg.attn_dim)
    decoder = layers.init_lstm_cell(rng, cfg.embed_dim + value_dim, u)
    # deep output: logits read the attention context directly, mirroring the
    # static-vector models whose output layer sees the image projection
    out = layers.init_dense(rng, u + value_dim, cfg.vocab_size)
    return CaptionModel(cfg, emb, decoder=decoder, spatial_encoder=enc, attention=attn, out_proj=out)


# ---------------------------------------------------------------------------
# feature plumbing

def _check_features(model: CaptionModel, features) -> None:
    cfg = model.config
    if cfg.architecture == "focalis":
        if not isinstance(features, FeatureGrid):
            raise TypeError(f"focalis expects a FeatureGrid, got {type(features).__name__}")
        if (features.grid_h, features.grid_w) != (cfg.grid_h, cfg.grid_w):
            raise ValueError(
                f"grid {features.grid_h}x{features.grid_w} does not match "
                f"model grid {cfg.grid_h}x{cfg.grid_w}"
            )
        dim = features.channels
    else:
        if not isinstance(features, FeatureVector):
            raise TypeError(
                f"{cfg.architecture} expects a FeatureVector, got {type(features).__name__}"
            )
        dim = features.dim
    if dim != cfg.feature_dim:
        raise ValueError(f"feature dim {dim} does not match model feature_dim {cfg.feature_dim}")


def encode_spatial(model: CaptionModel, grid: FeatureGrid) -> Tensor:
    """Spatial Bi-LSTM over the raster-ordered patch sequence: (S, 2*enc_units)."""
    xs = Tensor(grid.patches().astype(np.float64))
    return layers.bilstm_sequence(model.spatial_encoder, xs)


def _img_projection(model: CaptionModel, features: FeatureVector) -> Tensor:
    return model.img_proj(Tensor(features.data))


# ---------------------------------------------------------------------------
# per-step logits (shared by training and decoding)

@dataclass
class DecodeState:
    arch: str
    h: Tensor
    c: Tensor
    img: Tensor | None = None      # projected image vector (static-vector models)
    values: Tensor | None = None   # encoded patches (focalis)
    keys: Tensor | None = None     # projected attention keys (focalis)
    steps: int = 0


def _focalis_state(model: CaptionModel, values: Tensor) -> DecodeState:
    u = model.config.decoder_units
    keys = layers.attention_keys(model.attention, values)
    return DecodeState("focalis", h=Tensor(np.zeros(u)), c=Tensor(np.zeros(u)),
                       values=values, keys=keys)


def init_state(model: CaptionModel, features) -> DecodeState:
    _check_features(model, features)
    cfg = model.config
    if cfg.architecture == "focalis":
        return _focalis_state(model, encode_spatial(model, features))
    img = _img_projection(model, features)
    # image projection seeds both h0 and c0
    return DecodeState(cfg.architecture, h=img, c=img, img=img)


def init_states_batch(model: CaptionModel, features_list) -> list[DecodeState]:
    """Initial states for a batch. For focalis the spatial Bi-LSTM runs once
    over all grids stacked example-wise (same math as per-example encoding,
    one tape node per time step instead of per example per step)."""
    if model.config.architecture != "focalis" or len(features_list) == 1:
        return [init_state(model, f) for f in features_list]
    for f in features_list:
        _check_features(model, f)
    enc = model.spatial_encoder
    n = len(features_list)
    s = features_list[0].n_cells
    m2 = 2 * enc.units
    steps = [
        Tensor(np.stack([f.patches()[t].astype(np.float64) for f in features_list]))
        for t in range(s)
    ]  # each (B, C), constant inputs
    h = c = Tensor(np.zeros((n, enc.units)))
    fwd = []
    for t in range(s):
        h, c = layers.lstm_step(enc.fwd, steps[t], h, c)
        fwd.append(h)
    h = c = Tensor(np.zeros((n, enc.units)))
    bwd: list[Tensor] = [None] * s  # type: ignore[list-item]
    for t in reversed(range(s)):
        h, c = layers.lstm_step(enc.bwd, steps[t], h, c)
        bwd[t] = h
    # (S, B*2u) time-major stack; example b owns the column block [b*2u, (b+1)*2u)
    rows = [ad.reshape(ad.concat([fwd[t], bwd[t]], axis=-1), (1, n * m2)) for t in range(s)]
    stacked = ad.concat(rows, axis=0)
    return [
        _focalis_state(model, ad.slice_last(stacked, b * m2, (b + 1) * m2))
        for b in range(n)
    ]


def decode_step(
    model: CaptionModel, state: DecodeState, token: int
) -> tuple[Tensor, DecodeState, np.ndarray | None]:
    """One autoregressive step: (logits over V, next state, attention weights or None)."""
    cfg = model.config
    if state.arch != cfg.architecture:
        raise ValueError(f"state built for {state.arch!r}, model is {cfg.architecture!r}")
    emb = ad.reshape(ad.gather_rows(model.embedding, [token]), (cfg.embed_dim,))

    if cfg.architecture == "genesis":
        h, c = layers.lstm_step(model.decoder, emb, state.h, state.c)
        fused = ad.add(h, state.img)
        logits = model.out_proj(fused)
        return logits, DecodeState("genesis", h=h, c=c, img=state.img, steps=state.steps + 1), None

    if cfg.architecture in ("contexta", "clarity"):
        h, c = layers.lstm_step(model.decoder_bi.fwd, emb, state.h, state.c)
        # backward direction of the prefix Bi-LSTM: one fresh step on the
        # current input (see module docstring for the collapsing identity)
        hb, _ = layers.lstm_step(model.decoder_bi.bwd, emb, state.img, state.img)
        fused = ad.concat([h, hb, state.img])
        logits = model.out_proj(fused)
        next_state = DecodeState(cfg.architecture, h=h, c=c, img=state.img, steps=state.steps + 1)
        return logits, next_state, None

    # focalis: previous hidden state is the attention query
    context, weights = layers.attend(model.attention, state.h, state.values, keys=state.keys)
    x = ad.concat([emb, context])
    h, c = layers.lstm_step(model.decoder, x, state.h, state.c)
    logits = model.out_proj(ad.concat([h, context]))
    next_state = DecodeState("focalis", h=h, c=c, values=state.values, keys=state.keys,
                             steps=state.steps + 1)
    return logits, next_state, weights.data.copy()


def _check_caption(caption: list[int]) -> None:
    if len(caption) < 2:
        raise ValueError("caption must have at least 2 tokens (start, end)")
    if caption[0] != START or caption[-1] != END:
        raise ValueError("caption must be framed with start and end tokens")


def logits_from_state(model: CaptionModel, state: DecodeState, caption: list[int]) -> list[Tensor]:
    _check_caption(caption)
    logits_per_step = []
    for token in caption[:-1]:
        logits, state, _ = decode_step(model, state, token)
        logits_per_step.append(logits)
    return logits_per_step


def forward_logits(model: CaptionModel, features, caption: list[int]) -> list[Tensor]:
    """Teacher-forced per-position logits: position t predicts caption[t+1]."""
    return logits_from_state(model, init_state(model, features), caption)


def caption_loss(
    model: CaptionModel, state: DecodeState, caption: list[int], epsilon: float
) -> Tensor:
    """Mean label-smoothed cross-entropy over the teacher-forced positions,
    decoding from an already-initialized state."""
    logits_per_step = logits_from_state(model, state, caption)
    targets = caption[1:]
    losses = [
        layers.label_smoothed_ce(logits, tgt, epsilon)
        for logits, tgt in zip(logits_per_step, targets)
    ]
    total = losses[0]
    for term in losses[1:]:
        total = ad.add(total, term)
    return ad.mul(total, Tensor(np.array(1.0 / len(losses))))


def forward_train(
    model: CaptionModel, features, caption: list[int], epsilon: float = 0.1
) -> Tensor:
    """Mean label-smoothed cross-entropy over the teacher-forced positions."""
    return caption_loss(model, init_state(model, features), caption, epsilon)


def bi_decoder_logits_reference(
    model: CaptionModel, features: FeatureVector, caption: list[int]
) -> list[np.ndarray]:
    """Literal definition of the Bi-LSTM decoder: for each position t, run the
    full Bi-LSTM over prefix[0..t] and take the last row. Test oracle for the
    optimized path in decode_step."""
    if model.config.architecture not in ("contexta", "clarity"):
        raise ValueError("reference path only applies to Bi-LSTM decoders")
    _check_features(model, features)
    img = _img_projection(model, features)
    init = (img, img)
    out = []
    for t in range(len(caption) - 1):
        prefix = caption[: t + 1]
        emb = ad.gather_rows(model.embedding, prefix)
        rows = layers.bilstm_sequence(model.decoder_bi, emb, init_fwd=init, init_bwd=init)
        last = ad.reshape(ad.gather_rows(rows, [t]), (2 * model.config.decoder_units,))
        fused = ad.concat([last, img])
        out.append(model.out_proj(fused).data.copy())
    return out
