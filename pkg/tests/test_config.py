import pytest

from velinv.config import DATA_ROOT_ENV, ConfigError, equidistant_columns, resolve


class TestPresets:
    def test_paper_preset_geometry(self):
        cfg = resolve("paper")
        assert cfg.grid.shape == (200, 300)
        assert len(cfg.acq.emitter_columns) == 9
        assert len(cfg.acq.receiver_columns) == 300
        assert cfg.acq.t_total == 2.0
        assert cfg.acq.dt_record == 0.01
        assert cfg.acq.n_samples == 200  # 9 gathers of 300 x 200 per record
        assert cfg.n_samples == 1600
        assert cfg.train.epochs_max == 50
        assert cfg.train.lr == 1e-4
        assert cfg.train.batch_size == 10
        assert cfg.net_base_width == 32
        assert cfg.bootstrap_count == 10
        assert cfg.ablation_shots == (1, 3, 9)
        assert cfg.render_profiles == (750.0, 1500.0, 2250.0)

    def test_desk_preset_geometry(self):
        cfg = resolve("desk")
        assert cfg.grid.shape == (64, 96)
        assert len(cfg.acq.emitter_columns) == 5
        assert cfg.acq.t_total == 1.2
        assert cfg.n_samples == 256
        assert cfg.train.epochs_max == 15
        assert cfg.net_base_width == 16
        assert cfg.bootstrap_count == 5
        assert cfg.ablation_shots == (1, 3)

    def test_every_parameter_resolved(self):
        for preset in ("paper", "desk"):
            cfg = resolve(preset)
            assert cfg.features.resample_height == cfg.grid.ny
            assert cfg.source.f0 > 0
            assert cfg.scene.rng_seed == cfg.seed

    def test_unknown_preset(self):
        with pytest.raises(ConfigError, match="unknown preset"):
            resolve("napkin")


class TestEquidistantColumns:
    def test_paper_layout_spans_surface(self):
        cols = equidistant_columns(300, 9)
        assert cols[0] == 0 and cols[-1] == 299
        assert len(cols) == 9
        assert cols[len(cols) // 2] == 150
        gaps = [b - a for a, b in zip(cols, cols[1:])]
        assert max(gaps) - min(gaps) <= 1

    def test_single_emitter_centered(self):
        assert equidistant_columns(96, 1) == (48,)

    def test_too_many_rejected(self):
        with pytest.raises(ConfigError):
            equidistant_columns(8, 9)


class TestOverrides:
    def test_file_overrides_preset(self, tmp_path):
        config = tmp_path / "run.toml"
        config.write_text("seed = 7\n[train]\nepochs_max = 3\n")
        cfg = resolve("desk", config_path=config)
        assert cfg.seed == 7
        assert cfg.train.epochs_max == 3
        assert cfg.grid.nx == 96  # untouched desk value

    def test_flags_override_file(self, tmp_path):
        config = tmp_path / "run.toml"
        config.write_text("seed = 7\n")
        cfg = resolve("desk", config_path=config, overrides={"seed": 9})
        assert cfg.seed == 9

    def test_preset_key_inside_file(self, tmp_path):
        config = tmp_path / "run.toml"
        config.write_text('preset = "paper"\n')
        cfg = resolve("desk", config_path=config)
        assert cfg.preset == "paper"
        assert cfg.grid.nx == 300

    def test_env_var_data_root(self, monkeypatch):
        monkeypatch.setenv(DATA_ROOT_ENV, "/somewhere/data")
        cfg = resolve("desk")
        assert str(cfg.data_root) == "/somewhere/data"
        monkeypatch.delenv(DATA_ROOT_ENV)
        assert str(resolve("desk").data_root) == "data"

    def test_explicit_emitter_columns(self, tmp_path):
        config = tmp_path / "run.toml"
        config.write_text("[acquisition]\nemitter_columns = [5, 40, 90]\n")
        cfg = resolve("desk", config_path=config)
        assert cfg.acq.emitter_columns == (5, 40, 90)

    def test_invalid_values_become_config_errors(self, tmp_path):
        config = tmp_path / "run.toml"
        config.write_text("[acquisition]\nt_total = -2.0\n")
        with pytest.raises(ConfigError, match="invalid configuration"):
            resolve("desk", config_path=config)

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="not found"):
            resolve("desk", config_path="/no/such.toml")

    def test_bad_solver_order(self):
        with pytest.raises(ConfigError, match="solver_order"):
            resolve("desk", overrides={"solver_order": 3})
