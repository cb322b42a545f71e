"""Visual feature sources: binary feature-grid files and a deterministic
synthetic generator that stands in for a pretrained CNN backbone.

Feature file layout: magic b"CFG1", three little-endian uint32 extents
(grid_h, grid_w, channels), then grid_h*grid_w*channels little-endian
float32 values, row-major.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"CFG1"


class FeatureFileError(ValueError):
    """Malformed feature file (bad magic / header)."""


class TruncatedPayloadError(FeatureFileError):
    """Feature file payload shorter than the header promises."""


@dataclass
class FeatureGrid:
    """H x W x C spatial features; data stored float32, row-major."""

    grid_h: int
    grid_w: int
    channels: int
    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        expected = (self.grid_h, self.grid_w, self.channels)
        if self.data.shape != expected:
            raise ValueError(f"FeatureGrid: data shape {self.data.shape} != {expected}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("FeatureGrid: non-finite values")

    @property
    def n_cells(self) -> int:
        return self.grid_h * self.grid_w

    def patches(self) -> np.ndarray:
        """Row-major raster flattening to (S, C) patch vectors."""
        return self.data.reshape(self.n_cells, self.channels)


@dataclass
class FeatureVector:
    dim: int
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.shape != (self.dim,):
            raise ValueError(f"FeatureVector: data shape {self.data.shape} != ({self.dim},)")


def to_vector(grid: FeatureGrid) -> FeatureVector:
    """Global average pooling: per-channel mean over all spatial cells."""
    return FeatureVector(dim=grid.channels, data=grid.patches().astype(np.float64).mean(axis=0))


def save_features(grid: FeatureGrid, path: str | Path) -> None:
    path = Path(path)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<III", grid.grid_h, grid.grid_w, grid.channels))
        f.write(grid.data.astype("<f4").tobytes())


def load_features(path: str | Path) -> FeatureGrid:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"feature file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise FeatureFileError(f"{path}: bad magic, expected {MAGIC!r}")
    h, w, c = struct.unpack("<III", raw[4:16])
    if h < 1 or w < 1 or c < 1:
        raise FeatureFileError(f"{path}: non-positive extents ({h}, {w}, {c})")
    expected = h * w * c
    payload = raw[16:]
    actual = len(payload) // 4
    if actual < expected:
        raise TruncatedPayloadError(
            f"{path}: expected {expected} float32 values, found {actual}"
        )
    data = np.frombuffer(payload[: expected * 4], dtype="<f4").reshape(h, w, c)
    return FeatureGrid(grid_h=h, grid_w=w, channels=c, data=data.copy())


# ---------------------------------------------------------------------------
# synthetic scenes

@dataclass(frozen=True)
class SceneObject:
    cls: str
    color: str
    row: int
    col: int

    @property
    def identity(self) -> str:
        return f"{self.color} {self.cls}"


@dataclass
class SceneSpec:
    grid_h: int
    grid_w: int
    objects: list[SceneObject] = field(default_factory=list)

    def __post_init__(self):
        cells = set()
        for obj in self.objects:
            if not (0 <= obj.row < self.grid_h and 0 <= obj.col < self.grid_w):
                raise ValueError(
                    f"object {obj.identity} at ({obj.row}, {obj.col}) outside "
                    f"{self.grid_h}x{self.grid_w} grid"
                )
            if (obj.row, obj.col) in cells:
                raise ValueError(f"two objects share cell ({obj.row}, {obj.col})")
            cells.add((obj.row, obj.col))


def _identity_seed(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")


def identity_embedding(name: str, channels: int, seed: int) -> np.ndarray:
    """Fixed random-but-seeded embedding; depends only on (name, channels, seed)."""
    rng = np.random.default_rng([seed, channels, _identity_seed(name)])
    return rng.normal(0.0, 1.0, size=channels)


def synth_scene_features(
    scene: SceneSpec,
    channels: int,
    noise_sigma: float,
    seed: int,
    salt: int = 0,
) -> FeatureGrid:
    """Every cell gets the embedding of its occupant (or the background
    embedding) plus gaussian noise. The noise stream is keyed off the scene
    content and the caller's salt, so identical calls are bit-identical.

    Dataset builders pass a distinct salt per example (two photos of the same
    scene are not the same photo); without it, a model could memorize the
    per-scene noise fingerprint instead of reading the features."""
    grid = np.tile(
        identity_embedding("background", channels, seed),
        (scene.grid_h, scene.grid_w, 1),
    )
    for obj in scene.objects:
        grid[obj.row, obj.col, :] = identity_embedding(obj.identity, channels, seed)
    if noise_sigma > 0.0:
        content = ";".join(
            f"{o.identity}@{o.row},{o.col}" for o in sorted(scene.objects, key=lambda o: (o.row, o.col))
        )
        noise_rng = np.random.default_rng(
            [seed, channels, salt, _identity_seed("noise|" + content)]
        )
        grid = grid + noise_rng.normal(0.0, noise_sigma, size=grid.shape)
    return FeatureGrid(scene.grid_h, scene.grid_w, channels, grid.astype(np.float32))
