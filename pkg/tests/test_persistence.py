"""Binary checkpoint / dataset containers and the run-config file format."""

import numpy as np
import pytest

from xmodal.checkpoint import load_checkpoint, save_checkpoint
from xmodal.config import RunConfig
from xmodal.data import DatasetSpec, generate_dataset, load_dataset, save_dataset
from xmodal.network import ConfigError, Model


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path, rng):
        arrays = {
            "a.w": rng.standard_normal((3, 4, 5)),
            "a.b": rng.standard_normal(7),
            "scalarish": rng.standard_normal(()),
        }
        path = tmp_path / "m.mtmf"
        save_checkpoint(arrays, path)
        loaded = load_checkpoint(path)
        assert set(loaded) == set(arrays)
        for k in arrays:
            assert loaded[k].shape == arrays[k].shape
            assert loaded[k].tobytes() == np.ascontiguousarray(arrays[k]).tobytes()

    def test_magic_and_version_checked(self, tmp_path):
        bad = tmp_path / "bad.mtmf"
        bad.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            load_checkpoint(bad)
        trunc = tmp_path / "trunc.mtmf"
        trunc.write_bytes(b"MTMF\x01\x00\x00\x00" + b"\x02\x00\x00\x00a")
        with pytest.raises(ValueError, match="truncated"):
            load_checkpoint(trunc)

    def test_model_state_round_trip(self, tmp_path, micro_config):
        model = Model.initialize(micro_config, 0)
        path = tmp_path / "model.mtmf"
        save_checkpoint(model.params.state_arrays(), path)
        clone = Model.initialize(micro_config, 99)
        clone.params.load_arrays(load_checkpoint(path))
        for name, t in model.params.items():
            assert clone.params[name].data.tobytes() == t.data.tobytes()


class TestDatasetFile:
    def test_round_trip(self, tmp_path):
        ds = generate_dataset(DatasetSpec(num_identities=3, images_per_identity=2,
                                          image_shape=(1, 5, 4), latent_dim=3, seed=4))
        path = tmp_path / "d.xmds"
        save_dataset(ds, path)
        loaded = load_dataset(path)
        assert loaded.spec == ds.spec
        np.testing.assert_array_equal(loaded.ids, ds.ids)
        np.testing.assert_array_equal(loaded.mods, ds.mods)
        # pixels travel as f32
        np.testing.assert_allclose(loaded.images, ds.images, atol=1e-6)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.xmds"
        path.write_bytes(b"WHAT" + b"\x00" * 8)
        with pytest.raises(ValueError, match="magic"):
            load_dataset(path)


class TestRunConfig:
    def test_defaults_match_stated_values(self):
        cfg = RunConfig()
        assert cfg.lr_specific == 0.01
        assert cfg.lr_shared == 0.1
        assert cfg.momentum == 0.9
        assert cfg.weight_decay == 0.0005
        assert cfg.decay_factor == 0.1
        assert cfg.decay_every_epochs == 7
        assert (cfg.n_ids, cfg.k_per_mod) == (8, 4)

    def test_file_round_trip(self, tmp_path):
        cfg = RunConfig(lr_specific=0.003, epochs=2, use_relation=False,
                        backbone_channels=(2, 4, 8), loss="ranking")
        path = tmp_path / "run.cfg"
        cfg.to_file(path)
        assert RunConfig.from_file(path) == cfg

    def test_unknown_key_named(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("learning_rate=0.1\n")
        with pytest.raises(ConfigError, match="learning_rate"):
            RunConfig.from_file(path)

    def test_bad_value_named(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("epochs=three\n")
        with pytest.raises(ConfigError, match="epochs"):
            RunConfig.from_file(path)

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("no equals sign here\n")
        with pytest.raises(ConfigError):
            RunConfig.from_file(path)

    def test_comments_and_blanks_ignored(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# comment\n\nepochs=3\n")
        assert RunConfig.from_file(path).epochs == 3

    def test_invalid_values_rejected(self):
        with pytest.raises(ConfigError):
            RunConfig(lr_shared=0.0)
        with pytest.raises(ConfigError):
            RunConfig(loss="contrastive")
        with pytest.raises(ConfigError):
            RunConfig(batches_per_epoch=0)

    def test_derived_configs_consistent(self):
        cfg = RunConfig()
        net = cfg.net_config()
        assert net.image_shape == (cfg.image_channels, cfg.image_height, cfg.image_width)
        assert net.num_identities == cfg.num_identities
        ds = cfg.dataset_spec()
        assert ds.seed == cfg.data_seed
        sw = cfg.switches()
        assert sw.loss == cfg.loss
