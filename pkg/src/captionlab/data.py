"""Vocabulary, tokenization, and the synthetic captioned-scene generator.

The generated captions encode spatial facts ("a red square in the top left")
that are destroyed by global average pooling, which is what makes the
bottleneck ablation work.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import FeatureGrid, SceneObject, SceneSpec, synth_scene_features

PAD, START, END, UNK = 0, 1, 2, 3
SPECIALS = ["<pad>", "<start>", "<end>", "<unk>"]

_PUNCT = set(string.punctuation)


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip ASCII punctuation except
    within-word hyphens."""
    out = []
    for chunk in text.lower().split():
        kept = "".join(ch for ch in chunk if ch not in _PUNCT or ch == "-")
        kept = kept.strip("-")
        if kept:
            out.append(kept)
    return out


class Vocabulary:
    """Bidirectional token<->id map with fixed reserved specials."""

    def __init__(self, tokens: list[str]):
        self.id_to_token = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}

    def __len__(self) -> int:
        return len(self.id_to_token)

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def encode(self, tokens: list[str], frame: bool = False) -> list[int]:
        ids = [self.lookup(t) for t in tokens]
        return [START] + ids + [END] if frame else ids

    def decode(self, ids: list[int], strip_specials: bool = True) -> list[str]:
        toks = [self.id_to_token[i] for i in ids]
        if strip_specials:
            toks = [t for t in toks if t not in SPECIALS]
        return toks

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for i, tok in enumerate(self.id_to_token):
                f.write(f"{tok}\t{i}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        pairs = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.rstrip("\n")
                if not line:
                    continue
                tok, idx = line.split("\t")
                pairs.append((int(idx), tok))
        pairs.sort()
        vocab = cls.__new__(cls)
        vocab.id_to_token = [tok for _, tok in pairs]
        vocab.token_to_id = {t: i for i, t in enumerate(vocab.id_to_token)}
        return vocab


def build_vocab(corpus: list[list[str]], min_count: int = 1) -> Vocabulary:
    """Tokens with count >= min_count, ordered by count desc then lexicographic."""
    if not corpus:
        raise ValueError("build_vocab: empty corpus")
    counts: dict[str, int] = {}
    for seq in corpus:
        for tok in seq:
            counts[tok] = counts.get(tok, 0) + 1
    kept = sorted(
        (t for t, c in counts.items() if c >= min_count),
        key=lambda t: (-counts[t], t),
    )
    return Vocabulary(kept)


# ---------------------------------------------------------------------------
# synthetic scenes with positional captions

@dataclass
class CaptionedExample:
    features: FeatureGrid
    references: list[list[int]]  # each start ... end framed
    ref_texts: list[str] = field(default_factory=list)
    scene: SceneSpec | None = None


def region_phrase(row: int, col: int, grid_h: int, grid_w: int) -> str:
    rows = ["top", "middle", "bottom"]
    cols = ["left", "center", "right"]
    return f"{rows[min(row * 3 // grid_h, 2)]} {cols[min(col * 3 // grid_w, 2)]}"


def _relation(a: SceneObject, b: SceneObject) -> tuple[str, str]:
    dr, dc = b.row - a.row, b.col - a.col
    if abs(dc) >= abs(dr):
        return ("to the left of", "to the right of") if dc > 0 else ("to the right of", "to the left of")
    return ("above", "below") if dr > 0 else ("below", "above")


def captions_for_scene(scene: SceneSpec) -> list[str]:
    """Two reference captions per scene, from fixed spatial templates."""
    if len(scene.objects) == 1:
        o = scene.objects[0]
        pos = region_phrase(o.row, o.col, scene.grid_h, scene.grid_w)
        return [
            f"a {o.identity} in the {pos}",
            f"the {pos} shows a {o.identity}",
        ]
    a, b = scene.objects[0], scene.objects[1]
    rel, inv = _relation(a, b)
    return [
        f"a {a.identity} {rel} a {b.identity}",
        f"a {b.identity} {inv} a {a.identity}",
    ]


def gen_scenes(
    n_scenes: int,
    grid_h: int,
    grid_w: int,
    classes: list[str],
    colors: list[str],
    seed: int,
    two_object_prob: float = 0.3,
) -> list[SceneSpec]:
    if n_scenes < 1:
        raise ValueError("gen_scenes: n_scenes must be >= 1")
    n_cells = grid_h * grid_w
    if n_cells < 2 and two_object_prob > 0:
        raise ValueError("gen_scenes: grid too small for two-object scenes")
    rng = np.random.default_rng([seed, n_scenes, grid_h, grid_w])
    scenes = []
    for _ in range(n_scenes):
        n_obj = 2 if (two_object_prob > 0 and rng.random() < two_object_prob) else 1
        cells = rng.choice(n_cells, size=n_obj, replace=False)
        objs = [
            SceneObject(
                cls=classes[int(rng.integers(len(classes)))],
                color=colors[int(rng.integers(len(colors)))],
                row=int(cell) // grid_w,
                col=int(cell) % grid_w,
            )
            for cell in cells
        ]
        scenes.append(SceneSpec(grid_h=grid_h, grid_w=grid_w, objects=objs))
    return scenes


@dataclass
class DatasetBundle:
    examples: list[CaptionedExample]
    vocab: Vocabulary


def examples_from_scenes(
    scenes: list[SceneSpec],
    channels: int,
    noise_sigma: float,
    seed: int,
    vocab: Vocabulary | None = None,
) -> DatasetBundle:
    all_caps = [captions_for_scene(s) for s in scenes]
    if vocab is None:
        vocab = build_vocab([tokenize(c) for caps in all_caps for c in caps])
    examples = []
    for i, (scene, caps) in enumerate(zip(scenes, all_caps)):
        grid = synth_scene_features(
            scene, channels=channels, noise_sigma=noise_sigma, seed=seed, salt=i
        )
        refs = [vocab.encode(tokenize(c), frame=True) for c in caps]
        examples.append(CaptionedExample(features=grid, references=refs, ref_texts=caps, scene=scene))
    return DatasetBundle(examples=examples, vocab=vocab)


def gen_dataset(
    n_scenes: int,
    grid_h: int = 6,
    grid_w: int = 6,
    classes: tuple[str, ...] = ("square", "circle", "triangle"),
    colors: tuple[str, ...] = ("red", "green", "blue"),
    seed: int = 0,
    channels: int = 16,
    noise_sigma: float = 0.1,
    two_object_prob: float = 0.3,
) -> DatasetBundle:
    """Seeded end-to-end dataset: scenes, features, captions, vocabulary."""
    max_objects = 2 if two_object_prob > 0 else 1
    if grid_h * grid_w < max_objects:
        raise ValueError("gen_dataset: more objects than cells")
    scenes = gen_scenes(n_scenes, grid_h, grid_w, list(classes), list(colors), seed, two_object_prob)
    return examples_from_scenes(scenes, channels=channels, noise_sigma=noise_sigma, seed=seed)


def position_witness_pair(
    grid_h: int = 6,
    grid_w: int = 6,
    channels: int = 16,
    seed: int = 0,
) -> tuple[CaptionedExample, CaptionedExample]:
    """Two scenes with the same object multiset at different positions:
    their references differ but their GAP features are identical (sigma=0)."""
    a = SceneSpec(grid_h, grid_w, [SceneObject("square", "red", 0, 0)])
    b = SceneSpec(grid_h, grid_w, [SceneObject("square", "red", grid_h - 1, grid_w - 1)])
    bundle = examples_from_scenes([a, b], channels=channels, noise_sigma=0.0, seed=seed)
    return bundle.examples[0], bundle.examples[1]


def batch(references: list[list[int]], pad_to: int) -> tuple[np.ndarray, np.ndarray]:
    """Pad id sequences to a (n, pad_to) matrix plus a real-token mask."""
    longest = max((len(r) for r in references), default=0)
    if pad_to < longest:
        raise ValueError(f"batch: pad_to={pad_to} shorter than longest reference ({longest})")
    ids = np.full((len(references), pad_to), PAD, dtype=np.int64)
    mask = np.zeros((len(references), pad_to), dtype=bool)
    for i, ref in enumerate(references):
        ids[i, : len(ref)] = ref
        mask[i, : len(ref)] = True
    return ids, mask


# ---------------------------------------------------------------------------
# on-disk dataset: manifest.tsv + features/*.cfg + vocab.tsv

def save_dataset(bundle: DatasetBundle, out_dir: str | Path) -> Path:
    from .features import save_features

    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, ex in enumerate(bundle.examples):
        rel = f"features/{i:06d}.cfg"
        save_features(ex.features, out_dir / rel)
        lines.append("\t".join([rel] + list(ex.ref_texts)))
    (out_dir / "manifest.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    bundle.vocab.save(out_dir / "vocab.tsv")
    return out_dir


def load_dataset(in_dir: str | Path) -> DatasetBundle:
    from .features import load_features

    in_dir = Path(in_dir)
    manifest = in_dir / "manifest.tsv"
    if not manifest.exists():
        raise FileNotFoundError(f"dataset manifest not found: {manifest}")
    vocab = Vocabulary.load(in_dir / "vocab.tsv")
    examples = []
    for line in manifest.read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        parts = line.split("\t")
        grid = load_features(in_dir / parts[0])
        texts = parts[1:]
        refs = [vocab.encode(tokenize(t), frame=True) for t in texts]
        examples.append(CaptionedExample(features=grid, references=refs, ref_texts=texts))
    return DatasetBundle(examples=examples, vocab=vocab)
