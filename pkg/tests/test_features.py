import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from captionlab.features import (
    MAGIC,
    FeatureFileError,
    FeatureGrid,
    FeatureVector,
    SceneObject,
    SceneSpec,
    TruncatedPayloadError,
    identity_embedding,
    load_features,
    save_features,
    synth_scene_features,
    to_vector,
)


def random_grid(rng, h=3, w=4, c=5):
    return FeatureGrid(h, w, c, rng.uniform(-2, 2, (h, w, c)).astype(np.float32))


class TestFeatureGrid:
    def test_patches_raster_order(self):
        data = np.arange(2 * 3 * 1, dtype=np.float32).reshape(2, 3, 1)
        grid = FeatureGrid(2, 3, 1, data)
        assert grid.patches().reshape(-1).tolist() == [0, 1, 2, 3, 4, 5]
        assert grid.n_cells == 6

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            FeatureGrid(2, 2, 3, np.zeros((2, 2, 2), dtype=np.float32))

    def test_nonfinite_rejected(self):
        data = np.zeros((1, 1, 2), dtype=np.float32)
        data[0, 0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            FeatureGrid(1, 1, 2, data)

    def test_vector_shape_check(self):
        with pytest.raises(ValueError):
            FeatureVector(3, np.zeros(4))


class TestGlobalAveragePooling:
    def test_constant_grid(self):
        grid = FeatureGrid(2, 2, 3, np.full((2, 2, 3), 5.0, dtype=np.float32))
        vec = to_vector(grid)
        assert vec.dim == 3 and np.allclose(vec.data, 5.0)

    def test_hand_mean(self):
        data = np.zeros((1, 2, 1), dtype=np.float32)
        data[0, 0, 0], data[0, 1, 0] = 1.0, 3.0
        assert to_vector(FeatureGrid(1, 2, 1, data)).data.tolist() == [2.0]

    def test_spatial_permutation_invariance(self):
        rng = np.random.default_rng(0)
        grid = random_grid(rng)
        patches = grid.patches().copy()
        perm = rng.permutation(grid.n_cells)
        shuffled = FeatureGrid(3, 4, 5, patches[perm].reshape(3, 4, 5))
        assert np.allclose(to_vector(grid).data, to_vector(shuffled).data, atol=1e-6)


class TestFileRoundTrip:
    def test_bitwise_round_trip(self, tmp_path):
        grid = random_grid(np.random.default_rng(1))
        path = tmp_path / "x.cfg"
        save_features(grid, path)
        loaded = load_features(path)
        assert (loaded.grid_h, loaded.grid_w, loaded.channels) == (3, 4, 5)
        assert np.array_equal(loaded.data, grid.data)

    def test_header_layout(self, tmp_path):
        grid = FeatureGrid(2, 3, 1, np.ones((2, 3, 1), dtype=np.float32))
        path = tmp_path / "x.cfg"
        save_features(grid, path)
        raw = path.read_bytes()
        assert raw[:4] == MAGIC == b"CFG1"
        assert struct.unpack("<III", raw[4:16]) == (2, 3, 1)
        assert len(raw) == 16 + 2 * 3 * 1 * 4

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_features(tmp_path / "nope.cfg")

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_bytes(b"XXXX" + b"\x00" * 20)
        with pytest.raises(FeatureFileError, match="magic"):
            load_features(path)

    def test_zero_extent(self, tmp_path):
        path = tmp_path / "zero.cfg"
        path.write_bytes(MAGIC + struct.pack("<III", 0, 3, 1))
        with pytest.raises(FeatureFileError, match="extent"):
            load_features(path)

    def test_truncated_payload(self, tmp_path):
        grid = FeatureGrid(2, 2, 2, np.ones((2, 2, 2), dtype=np.float32))
        path = tmp_path / "trunc.cfg"
        save_features(grid, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-4])
        with pytest.raises(TruncatedPayloadError, match="expected 8"):
            load_features(path)

    def test_truncated_is_a_feature_file_error(self):
        assert issubclass(TruncatedPayloadError, FeatureFileError)

    @given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 6), st.integers(0, 2**31 - 1))
    @settings(max_examples=25, deadline=None)
    def test_round_trip_property(self, h, w, c, seed):
        import tempfile
        from pathlib import Path

        rng = np.random.default_rng(seed)
        grid = FeatureGrid(h, w, c, rng.normal(size=(h, w, c)).astype(np.float32))
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "g.cfg"
            save_features(grid, path)
            assert np.array_equal(load_features(path).data, grid.data)


class TestSceneSpec:
    def test_out_of_bounds(self):
        with pytest.raises(ValueError, match="outside"):
            SceneSpec(2, 2, [SceneObject("square", "red", 2, 0)])

    def test_shared_cell(self):
        with pytest.raises(ValueError, match="share cell"):
            SceneSpec(3, 3, [SceneObject("square", "red", 1, 1), SceneObject("circle", "blue", 1, 1)])

    def test_identity_string(self):
        assert SceneObject("square", "red", 0, 0).identity == "red square"


class TestIdentityEmbedding:
    def test_deterministic(self):
        a = identity_embedding("red square", 8, 0)
        b = identity_embedding("red square", 8, 0)
        assert np.array_equal(a, b)

    def test_name_sensitivity(self):
        assert not np.allclose(identity_embedding("red square", 8, 0), identity_embedding("blue square", 8, 0))

    def test_seed_sensitivity(self):
        assert not np.allclose(identity_embedding("red square", 8, 0), identity_embedding("red square", 8, 1))

    def test_channel_count(self):
        assert identity_embedding("x", 13, 0).shape == (13,)


class TestSynthScene:
    def scene(self):
        return SceneSpec(4, 4, [SceneObject("square", "red", 1, 2)])

    def test_deterministic(self):
        a = synth_scene_features(self.scene(), 8, 0.1, seed=7)
        b = synth_scene_features(self.scene(), 8, 0.1, seed=7)
        assert np.array_equal(a.data, b.data)

    def test_object_cell_differs_from_background(self):
        grid = synth_scene_features(self.scene(), 8, 0.0, seed=7)
        assert not np.allclose(grid.data[1, 2], grid.data[0, 0])
        # all background cells identical at sigma=0
        assert np.array_equal(grid.data[0, 0], grid.data[3, 3])

    def test_noiseless_object_cell_is_identity_embedding(self):
        grid = synth_scene_features(self.scene(), 8, 0.0, seed=7)
        emb = identity_embedding("red square", 8, 7).astype(np.float32)
        assert np.allclose(grid.data[1, 2], emb, atol=1e-6)

    def test_noise_perturbs_but_preserves_signal(self):
        clean = synth_scene_features(self.scene(), 8, 0.0, seed=7)
        noisy = synth_scene_features(self.scene(), 8, 0.1, seed=7)
        diff = noisy.data.astype(np.float64) - clean.data.astype(np.float64)
        assert 0.0 < np.abs(diff).max() < 1.0

    def test_salt_decorrelates_identical_scenes(self):
        """Two photos of the same scene (different salts) share the signal
        but not the noise, so repeated scenes cannot be memorized bitwise."""
        a = synth_scene_features(self.scene(), 8, 0.1, seed=7, salt=0)
        b = synth_scene_features(self.scene(), 8, 0.1, seed=7, salt=1)
        assert not np.array_equal(a.data, b.data)
        assert np.abs(a.data.astype(np.float64) - b.data.astype(np.float64)).max() < 1.0

    def test_position_bottleneck_witness(self):
        """Same object at two positions: spatial grids differ, GAP vectors
        coincide. This is the information loss the ablation measures."""
        here = SceneSpec(4, 4, [SceneObject("square", "red", 0, 0)])
        there = SceneSpec(4, 4, [SceneObject("square", "red", 3, 3)])
        g1 = synth_scene_features(here, 8, 0.0, seed=0)
        g2 = synth_scene_features(there, 8, 0.0, seed=0)
        assert not np.allclose(g1.data, g2.data)
        assert np.allclose(to_vector(g1).data, to_vector(g2).data, atol=1e-7)
