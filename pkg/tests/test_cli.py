import json

import numpy as np
import pytest

from velinv import cli, core, net
from velinv.features import FeatureConfig
from velinv.net import NetworkConfig, init_weights, save_weights

TINY_TOML = """
preset = "desk"
seed = 99
n_samples = 10

[grid]
nx = 24
ny = 16
dx = 10.0
dy = 10.0

[acquisition]
n_emitters = 3
t_total = 0.3
dt_record = 0.01

[scene]
n_layers = [2, 3]
inclusion_area_fraction = [0.04, 0.20]
interface_undulation_amplitude = 20.0

[net]
base_width = 4
depth = 2

[train]
epochs_max = 1
lr = 1e-3
batch_size = 4

[ablation]
shots = [1]
bootstrap_count = 3

[render]
profiles = [50.0, 120.0]
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    ws = tmp_path_factory.mktemp("cli_ws")
    config = ws / "tiny.toml"
    config.write_text(TINY_TOML)
    data = ws / "data"
    rc = cli.main(["gen", "--config", str(config), "--data", str(data)])
    assert rc == 0
    return {"root": ws, "config": str(config), "data": str(data)}


class TestGen:
    def test_dataset_files(self, workspace):
        data = workspace["root"] / "data"
        assert (data / "manifest.json").exists()
        svm = sorted(data.glob("*.svm"))
        sgr = sorted(data.glob("*.sgr"))
        assert len(svm) == 10 and len(sgr) == 10

    def test_idempotent_rerun(self, workspace):
        data = workspace["root"] / "data"
        manifest_before = (data / "manifest.json").read_bytes()
        rc = cli.main(["gen", "--config", workspace["config"], "--data", workspace["data"]])
        assert rc == 0
        assert (data / "manifest.json").read_bytes() == manifest_before


class TestSimulate:
    def test_record_and_snapshots(self, workspace):
        data = workspace["root"] / "data"
        out = workspace["root"] / "sim_out"
        model = str(data / "sample_0000.svm")
        rc = cli.main(["simulate", model, "--config", workspace["config"],
                       "--out", str(out), "--snapshots", "0.05,0.1"])
        assert rc == 0
        record = core.load_record(out / "sample_0000_shot.sgr")
        assert record.n_shots == 1
        arrays, meta = core.read_arrays(out / "sample_0000_snapshots.snp",
                                        expect_kind="snapshots")
        assert arrays["vmag"].shape[0] == 2
        assert meta["times"] == [0.05, 0.1]

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numerical_failure_exit_code(self, workspace, tmp_path, capsys):
        bad_toml = tmp_path / "bad_amp.toml"
        bad_toml.write_text(TINY_TOML + "\n[source]\nf0 = 15.0\namplitude = inf\n")
        model = str(workspace["root"] / "data" / "sample_0000.svm")
        rc = cli.main(["simulate", model, "--config", str(bad_toml),
                       "--out", str(tmp_path / "o")])
        assert rc == 4
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert err["error"] == "numerical"


@pytest.fixture(scope="module")
def trained(workspace):
    out = workspace["root"] / "train_out"
    rc = cli.main(["train", "--config", workspace["config"],
                   "--data", workspace["data"], "--out", str(out)])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def ablated(workspace):
    out = workspace["root"] / "ablate_out"
    rc = cli.main(["ablate", "--config", workspace["config"],
                   "--data", workspace["data"], "--out", str(out)])
    assert rc == 0
    return out


class TestTrainEval:
    def test_outputs(self, trained):
        assert (trained / "checkpoint.wts").exists()
        assert (trained / "curves.csv").exists()
        assert (trained / "curves.png").exists()
        lines = (trained / "curves.csv").read_text().strip().splitlines()
        assert lines[0] == "epoch,loss,val_ssim"
        assert len(lines) == 2

    def test_eval_metrics(self, trained, workspace, capsys):
        rc = cli.main(["eval", str(trained / "checkpoint.wts"),
                       "--config", workspace["config"], "--data", workspace["data"],
                       "--split", "test", "--out", str(trained)])
        assert rc == 0
        metrics = json.loads(capsys.readouterr().out)
        assert np.isfinite(metrics["mean_ssim"])
        assert np.isfinite(metrics["mean_mse"])
        assert (trained / "metrics.json").exists()

    def test_dump_features(self, workspace, tmp_path):
        out = tmp_path / "dump_out"
        rc = cli.main(["train", "--config", workspace["config"],
                       "--data", workspace["data"], "--out", str(out),
                       "--dump-features"])
        assert rc == 0
        dumps = sorted((out / "features").glob("*.ten"))
        assert len(dumps) == 9  # train + val folds of the tiny dataset
        arrays, meta = core.read_arrays(dumps[0], expect_kind="input_tensor")
        assert arrays["tensor"].shape == (3, 16, 24)
        assert 0.0 <= arrays["tensor"].min() and arrays["tensor"].max() <= 1.0

    def test_eval_untrained_checkpoint(self, workspace, tmp_path, capsys):
        w = init_weights(NetworkConfig(in_channels=3, base_width=4, depth=2), seed=0)
        ckpt = tmp_path / "fresh.wts"
        save_weights(ckpt, w, FeatureConfig(resample_height=16, shot_subset="all"))
        rc = cli.main(["eval", str(ckpt), "--config", workspace["config"],
                       "--data", workspace["data"]])
        assert rc == 0
        metrics = json.loads(capsys.readouterr().out)
        assert np.isfinite(metrics["mean_ssim"])


class TestAblateRender:
    def test_report_files(self, ablated):
        report = ablated / "report"
        for name in ("table1.csv", "shapiro.csv", "levene.csv", "anova_fourier.csv",
                     "anova_reg.csv", "ensembles.csv", "summary.json", "hist_shots1.png"):
            assert (report / name).exists(), name

    def test_model_heatmap_and_profiles(self, workspace, ablated):
        data = workspace["root"] / "data"
        out = workspace["root"] / "render_out"
        ensemble_dir = ablated / "populations" / "shots1_fourier0_reg0"
        ckpt = next(ensemble_dir.glob("*.wts"))
        rc = cli.main(["render", "--config", workspace["config"],
                       "--model", str(data / "sample_0001.svm"),
                       "--checkpoint", str(ckpt),
                       "--ensemble-dir", str(ensemble_dir),
                       "--profiles", "50,120", "--out", str(out)])
        assert rc == 0
        assert (out / "sample_0001_model.png").exists()
        assert (out / "prediction_single.png").exists()
        assert (out / "prediction_ensemble.png").exists()
        for x in ("0050", "0120"):
            assert (out / f"profile_x{x}.csv").exists()
            assert (out / f"profile_x{x}.png").exists()
        header = (out / "profile_x0050.csv").read_text().splitlines()[0]
        assert header == "depth_m,truth,single_model,ensemble"

    def test_report_histograms(self, workspace, ablated):
        out = workspace["root"] / "render_hist"
        rc = cli.main(["render", "--config", workspace["config"],
                       "--report", str(ablated / "report"), "--out", str(out)])
        assert rc == 0
        assert (out / "hist_shots1.png").exists()

    def test_snapshot_panel(self, workspace):
        data = workspace["root"] / "data"
        sim_out = workspace["root"] / "sim_out"
        out = workspace["root"] / "render_snap"
        assert (sim_out / "sample_0000_snapshots.snp").exists()
        rc = cli.main(["render", "--config", workspace["config"],
                       "--snapshots", str(sim_out / "sample_0000_snapshots.snp"),
                       "--out", str(out)])
        assert rc == 0
        assert (out / "snapshots.png").exists()

    def test_png_rendering_deterministic(self, workspace, ablated):
        out1 = workspace["root"] / "det1"
        out2 = workspace["root"] / "det2"
        for out in (out1, out2):
            rc = cli.main(["render", "--config", workspace["config"],
                           "--report", str(ablated / "report"), "--out", str(out)])
            assert rc == 0
        assert (out1 / "hist_shots1.png").read_bytes() == (out2 / "hist_shots1.png").read_bytes()


class TestErrorPaths:
    def test_missing_manifest_is_data_error(self, workspace, tmp_path, capsys):
        rc = cli.main(["train", "--config", workspace["config"],
                       "--data", str(tmp_path / "nowhere")])
        assert rc == 3
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert err["error"] == "data"

    def test_malformed_config_is_config_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("grid = {nx = ")
        rc = cli.main(["gen", "--config", str(bad), "--data", str(tmp_path / "d")])
        assert rc == 2
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert err["error"] == "config"

    def test_missing_checkpoint_is_data_error(self, workspace):
        rc = cli.main(["eval", str(workspace["root"] / "ghost.wts"),
                       "--config", workspace["config"], "--data", workspace["data"]])
        assert rc == 3

    def test_render_without_inputs_is_config_error(self, workspace, tmp_path):
        rc = cli.main(["render", "--config", workspace["config"],
                       "--out", str(tmp_path / "r")])
        assert rc == 2

    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["gen", "--frobnicate"])
        assert exc.value.code == 2

    def test_help_lists_commands(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        for cmd in ("gen", "simulate", "train", "eval", "ablate", "render"):
            assert cmd in out
