"""Tests for the seeded synthetic world."""

from __future__ import annotations

import numpy as np
import pytest

from bindspace.encoder import forward, serialize
from bindspace.errors import ConfigError
from bindspace.formats import serialize_dataset
from bindspace.models import WorldConfig
from bindspace.seeding import derive_seed, rng_for
from bindspace.synthworld import (
    clean_observations,
    eval_bundle,
    generate_world,
    latent_ranges,
    reference_encoders,
    text_map,
    world_seeds,
)


@pytest.fixture(scope="module")
def small_cfg():
    return WorldConfig(stage1_pairs=120, stage2_pairs=60, extra_pairs=30, eval_locations=40, seed=3)


@pytest.fixture(scope="module")
def world(small_cfg):
    return generate_world(small_cfg)


class TestSeeding:
    def test_pure(self):
        assert derive_seed(7, "stage/a") == derive_seed(7, "stage/a")

    def test_purposes_and_masters_differ(self):
        seeds = {derive_seed(m, p) for m in (0, 1) for p in ("world/latent", "split/stage1")}
        assert len(seeds) == 4

    def test_fits_in_63_bits(self):
        assert 0 <= derive_seed(2**40, "x") < 2**63

    def test_rng_for_is_reproducible(self):
        assert rng_for(5, "noise").normal() == rng_for(5, "noise").normal()


class TestGenerateWorld:
    def test_deterministic(self, small_cfg, world):
        again = generate_world(small_cfg)
        for name, ds in world.datasets.items():
            assert serialize_dataset(ds) == serialize_dataset(again.datasets[name])
        assert serialize_dataset(world.bundle) == serialize_dataset(again.bundle)

    def test_seed_changes_data(self, small_cfg, world):
        other = generate_world(small_cfg.model_copy(update={"seed": 4}))
        assert not np.array_equal(world.stage1.observations["satellite"], other.stage1.observations["satellite"])

    def test_shapes(self, small_cfg, world):
        assert world.stage1.modalities == ("satellite", "ground")
        assert world.stage2.modalities == ("satellite", "audio")
        assert world.stage1.observations["ground"].shape == (120, small_cfg.ground_dim)
        assert world.stage2.observations["audio"].shape == (60, small_cfg.audio_dim)
        assert world.bundle.modalities == ("satellite", "ground", "audio", "text")
        assert world.bundle.size == 40

    def test_latent_ranges_are_disjoint(self, world):
        sets = [set(ds.ids.tolist()) for ds in world.datasets.values()] + [set(world.bundle.ids.tolist())]
        for i, a in enumerate(sets):
            for b in sets[i + 1 :]:
                assert not a & b

    def test_split_is_exhaustive_and_disjoint(self, world):
        ds = world.stage1
        train, held = set(ds.train_indices.tolist()), set(ds.heldout_indices.tolist())
        assert not train & held
        assert train | held == set(range(ds.size))
        assert len(held) == 12

    def test_bundle_rows_are_all_held_out(self, world):
        assert not world.bundle.train_mask.any()

    def test_noise_free_observations_are_exact(self, small_cfg):
        cfg = small_cfg.model_copy(update={"noise_std": 0.0})
        w = generate_world(cfg)
        lo, hi = latent_ranges(cfg)["stage1"]
        expected = clean_observations(cfg, "satellite", w.latents[lo:hi])
        assert np.array_equal(w.stage1.observations["satellite"], expected.astype(np.float32).astype(np.float64))

    def test_tuples_regenerate_from_latents(self, small_cfg, world):
        lo, hi = latent_ranges(small_cfg)["eval"]
        z = world.latents[lo:hi]
        for m in world.bundle.modalities:
            clean = clean_observations(small_cfg, m, z)
            residual = world.bundle.observations[m] - clean
            assert np.abs(residual).max() < 6 * small_cfg.noise_std

    def test_observations_single_precision(self, world):
        obs = world.stage1.observations["ground"]
        assert np.array_equal(obs, obs.astype(np.float32).astype(np.float64))

    def test_stage_pairs_too_small(self):
        with pytest.raises(ValueError):
            WorldConfig(stage1_pairs=0)

    def test_world_seeds_cover_all_purposes(self, small_cfg):
        seeds = world_seeds(small_cfg)
        assert seeds["world/latent"] == derive_seed(3, "world/latent")
        assert "split/stage2" in seeds and "noise/eval/text" in seeds


class TestEvalBundle:
    def test_default_is_everything(self, world):
        assert eval_bundle(world) is world.bundle

    def test_prefix(self, world):
        sub = eval_bundle(world, 10)
        assert sub.size == 10
        assert np.array_equal(sub.ids, world.bundle.ids[:10])

    def test_zero_is_empty(self, world):
        assert eval_bundle(world, 0).size == 0

    def test_too_many(self, world):
        with pytest.raises(ConfigError, match="exceeds"):
            eval_bundle(world, 41)


class TestExtraModalities:
    def test_extra_dataset(self):
        cfg = WorldConfig(
            stage1_pairs=20, stage2_pairs=20, extra_pairs=16, eval_locations=8,
            extra_modalities={"elevation": 5, "climate": 3},
        )
        w = generate_world(cfg)
        assert w.datasets["satellite-elevation"].modalities == ("satellite", "elevation")
        assert w.datasets["satellite-climate"].dim("climate") == 3
        assert "elevation" in w.bundle.modalities
        ranges = latent_ranges(cfg)
        assert ranges["satellite-climate"][0] < ranges["satellite-elevation"][0]

    def test_reserved_name(self):
        with pytest.raises(ValueError):
            WorldConfig(extra_modalities={"audio": 4})

    def test_unknown_modality(self, world):
        with pytest.raises(ConfigError):
            world.stage1.train("audio")


class TestTextAlignment:
    def test_text_map_has_orthonormal_rows(self, small_cfg):
        q = text_map(small_cfg)
        assert np.allclose(q @ q.T, np.eye(small_cfg.ground_dim), atol=1e-12)

    def test_reference_encoders_are_frozen_and_seeded(self, small_cfg):
        refs = reference_encoders(small_cfg, 8, ["ground", "text"])
        assert all(r.frozen and r.reference for r in refs.values())
        again = reference_encoders(small_cfg, 8, ["ground"])
        assert serialize(again["ground"]) == serialize(refs["ground"])

    def test_matched_ground_and_text_embed_close(self, small_cfg, world):
        refs = reference_encoders(small_cfg, 8, ["ground", "text"])
        g = forward(refs["ground"], world.bundle.observations["ground"])
        t = forward(refs["text"], world.bundle.observations["text"])
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        t /= np.linalg.norm(t, axis=1, keepdims=True)
        matched = np.sum(g * t, axis=1)
        shuffled = np.sum(g * np.roll(t, 1, axis=0), axis=1)
        assert matched.mean() > 0.9
        assert matched.mean() > shuffled.mean() + 0.2

    def test_unknown_modality(self, small_cfg):
        with pytest.raises(ConfigError):
            reference_encoders(small_cfg, 8, ["sonar"])
