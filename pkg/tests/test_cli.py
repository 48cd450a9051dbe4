import imageio.v3 as iio
import numpy as np
import pytest
from click.testing import CliRunner

from evtforge.cli import PipelineConfig, main
from evtforge.core import DepthMap
from evtforge.evtio import read_header, read_stream
from evtforge.generator import generate
from evtforge.ingest import load_sequence, to_log
from evtforge.losses import write_depth
from evtforge.sampler import SamplerConfig, build_plan, sample_log_frames
from evtforge.volume import read_volume

from conftest import make_moving_edge_frames


@pytest.fixture
def runner():
    return CliRunner()


def _write_frame_dir(directory, frames):
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        iio.imwrite(directory / f"f_{i:04d}.pgm",
                    np.rint(frame.intensity * 255).astype(np.uint8))
    times = "\n".join(str(frame.t) for frame in frames)
    (directory / "timestamps.txt").write_text(times + "\n")


@pytest.fixture
def edge_dir(tmp_path):
    frames = make_moving_edge_frames()
    d = tmp_path / "frames"
    _write_frame_dir(d, frames)
    return d


@pytest.fixture
def static_dir(tmp_path):
    frames = make_moving_edge_frames(speed_px_per_frame=0.0, n_frames=10)
    d = tmp_path / "static"
    _write_frame_dir(d, frames)
    return d


class TestPipelineConfig:
    def test_parse_print_identity(self):
        cfg = PipelineConfig(contrast_c=0.2, dt_max_us=5000, threads=4)
        assert PipelineConfig.from_text(cfg.to_text()) == cfg

    def test_parse_print_identity_with_auto(self):
        cfg = PipelineConfig()
        assert PipelineConfig.from_text(cfg.to_text()) == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown key"):
            PipelineConfig.from_text("bogus = 1\n")

    def test_defaults_match_contract(self):
        cfg = PipelineConfig()
        assert cfg.contrast_c == 0.15
        assert cfg.dt_min_us == 100
        assert cfg.bins == 5
        assert cfg.window_us == 166666
        assert cfg.lambda_weight == 0.6
        assert cfg.scales == 4


class TestGenerateCommand:
    def test_static_fixture_zero_events(self, runner, static_dir, tmp_path):
        out = tmp_path / "out.evt"
        result = runner.invoke(main, ["generate", str(static_dir), str(out)])
        assert result.exit_code == 0, result.output
        assert "events = 0" in result.output
        assert read_header(out).event_count == 0

    def test_matches_library_pipeline(self, runner, edge_dir, tmp_path):
        out = tmp_path / "out.evt"
        result = runner.invoke(main, ["generate", str(edge_dir), str(out)])
        assert result.exit_code == 0, result.output

        frames = load_sequence(edge_dir)
        logs = [to_log(f) for f in frames]
        plan = build_plan(logs, SamplerConfig())
        stream = generate(sample_log_frames(logs, plan), 0.15, 24, 16)
        got = read_stream(out)
        assert got == stream
        assert f"events = {len(stream)}" in result.output

    def test_missing_directory_exits_2(self, runner, tmp_path):
        result = runner.invoke(main, ["generate", str(tmp_path / "nope"), str(tmp_path / "o.evt")])
        assert result.exit_code == 2
        assert "cannot read frames" in result.output

    def test_no_partial_file_on_failure(self, runner, tmp_path, edge_dir):
        out = tmp_path / "out.evt"
        result = runner.invoke(main, ["generate", str(edge_dir), str(out), "--contrast-c", "-1"])
        assert result.exit_code == 1
        assert not out.exists()

    def test_byte_identical_across_runs_and_threads(self, runner, edge_dir, tmp_path):
        outputs = []
        for name, threads in (("a", "1"), ("b", "1"), ("c", "4")):
            out = tmp_path / f"{name}.evt"
            result = runner.invoke(main, ["generate", str(edge_dir), str(out), "--threads", threads])
            assert result.exit_code == 0
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1] == outputs[2]

    def test_config_file_overridden_by_flags(self, runner, edge_dir, tmp_path):
        cfg_file = tmp_path / "cfg"
        cfg_file.write_text(PipelineConfig(contrast_c=0.3).to_text())
        out_cfg = tmp_path / "cfg.evt"
        out_flag = tmp_path / "flag.evt"
        r1 = runner.invoke(main, ["generate", str(edge_dir), str(out_cfg), "--config", str(cfg_file)])
        r2 = runner.invoke(main, ["generate", str(edge_dir), str(out_flag),
                                  "--config", str(cfg_file), "--contrast-c", "0.15"])
        assert r1.exit_code == 0 and r2.exit_code == 0
        assert read_header(out_cfg).event_count < read_header(out_flag).event_count

    def test_help_lists_flags_with_defaults(self, runner):
        result = runner.invoke(main, ["generate", "--help"])
        for flag, default in (("--contrast-c", "0.15"), ("--dt-min-us", "100"),
                              ("--dt-max-us", None), ("--threads", None), ("--config", None)):
            assert flag in result.output
            if default:
                assert default in result.output

    def test_threads_env_var_fallback(self, runner, edge_dir, tmp_path):
        out_env = tmp_path / "env.evt"
        out_flag = tmp_path / "flag.evt"
        r1 = runner.invoke(main, ["generate", str(edge_dir), str(out_env)],
                           env={"EVTFORGE_THREADS": "4"})
        r2 = runner.invoke(main, ["generate", str(edge_dir), str(out_flag), "--threads", "4"])
        assert r1.exit_code == 0 and r2.exit_code == 0
        assert out_env.read_bytes() == out_flag.read_bytes()

    def test_sampler_c_decouples_sampling_constant(self, runner, edge_dir, tmp_path):
        # coarse sampling strides past source frames, changing the events;
        # a dense override must restore the default-C output
        out_coarse = tmp_path / "coarse.evt"
        out_dense = tmp_path / "dense.evt"
        out_base = tmp_path / "base.evt"
        r = runner.invoke(main, ["generate", str(edge_dir), str(out_base)])
        assert r.exit_code == 0
        r = runner.invoke(main, ["generate", str(edge_dir), str(out_coarse),
                                 "--sampler-c", "5.0", "--dt-max-us", "200000"])
        assert r.exit_code == 0
        r = runner.invoke(main, ["generate", str(edge_dir), str(out_dense),
                                 "--sampler-c", "0.15"])
        assert r.exit_code == 0
        # linearizing across source frames shifts crossing timestamps
        assert out_coarse.read_bytes() != out_base.read_bytes()
        assert out_dense.read_bytes() == out_base.read_bytes()


class TestVolumizeCommand:
    def _generate(self, runner, edge_dir, tmp_path, name="s.evt"):
        out = tmp_path / name
        assert runner.invoke(main, ["generate", str(edge_dir), str(out)]).exit_code == 0
        return out

    def test_empty_stream_gives_zero_volume(self, runner, static_dir, tmp_path):
        stream_file = tmp_path / "empty.evt"
        assert runner.invoke(main, ["generate", str(static_dir), str(stream_file)]).exit_code == 0
        out = tmp_path / "v.evol"
        result = runner.invoke(main, ["volumize", str(stream_file), str(out)])
        assert result.exit_code == 0, result.output
        vol = read_volume(out)
        assert vol.bins == 5
        assert np.all(vol.data == 0.0)

    def test_byte_identical_across_runs(self, runner, edge_dir, tmp_path):
        stream_file = self._generate(runner, edge_dir, tmp_path)
        outs = []
        for name in ("a.evol", "b.evol"):
            out = tmp_path / name
            assert runner.invoke(main, ["volumize", str(stream_file), str(out)]).exit_code == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_help_lists_flags(self, runner):
        result = runner.invoke(main, ["volumize", "--help"])
        assert "--bins" in result.output and "5" in result.output
        assert "--window-us" in result.output and "166666" in result.output


class TestStatsCommand:
    def test_totals_match_header(self, runner, edge_dir, tmp_path):
        stream_file = tmp_path / "s.evt"
        assert runner.invoke(main, ["generate", str(edge_dir), str(stream_file)]).exit_code == 0
        result = runner.invoke(main, ["stats", str(stream_file), "--window-us", "50000"])
        assert result.exit_code == 0, result.output
        lines = result.output.strip().splitlines()
        total = next(int(l.split(" = ")[1]) for l in lines if l.startswith("total_events"))
        header_count = next(int(l.split(" = ")[1]) for l in lines if l.startswith("header_count"))
        windows = [l for l in lines if l.startswith("window=")]
        assert total == header_count == read_header(stream_file).event_count
        assert sum(int(w.split("total=")[1].split()[0]) for w in windows) == total

    def test_manifest_mode(self, runner, edge_dir, tmp_path):
        s1 = tmp_path / "a.evt"
        s2 = tmp_path / "b.evt"
        for s in (s1, s2):
            assert runner.invoke(main, ["generate", str(edge_dir), str(s)]).exit_code == 0
        result = runner.invoke(main, ["stats", str(s1), str(s2),
                                      "--categories", "driving,hiking"])
        assert result.exit_code == 0, result.output
        assert "sequence.a.category = driving" in result.output
        assert "total.sequences = 2" in result.output


class TestWarpAndLossesCommands:
    def test_warp_writes_iwe_and_pgm(self, runner, edge_dir, tmp_path):
        stream_file = tmp_path / "s.evt"
        assert runner.invoke(main, ["generate", str(edge_dir), str(stream_file)]).exit_code == 0
        depth_file = tmp_path / "d.edpt"
        write_depth(DepthMap.constant(24, 16, 2.0), depth_file)
        out = tmp_path / "w.eiwe"
        pgm = tmp_path / "w.pgm"
        result = runner.invoke(main, ["warp", str(stream_file), str(depth_file), str(out),
                                      "--fx", "100", "--fy", "100", "--cx", "11.5", "--cy", "7.5",
                                      "--pgm", str(pgm)])
        assert result.exit_code == 0, result.output
        assert out.exists() and pgm.exists()
        assert "contrast_loss = " in result.output

    def test_losses_identical_maps(self, runner, tmp_path):
        depth_file = tmp_path / "d.edpt"
        write_depth(DepthMap.constant(16, 16, 2.0), depth_file)
        result = runner.invoke(main, ["losses", str(depth_file), str(depth_file),
                                      "--contrast", "-0.75"])
        assert result.exit_code == 0, result.output
        lines = dict(l.split(" = ") for l in result.output.strip().splitlines())
        assert float(lines["si"]) == 0.0
        assert float(lines["grad"]) == 0.0
        assert float(lines["teacher"]) == 0.0
        assert float(lines["l1_distill"]) == 0.0
        assert float(lines["contrast"]) == -0.75
        assert float(lines["student"]) == -0.75

    def test_losses_help_lists_lambda_default(self, runner):
        result = runner.invoke(main, ["losses", "--help"])
        assert "--lambda" in result.output and "0.6" in result.output
        assert "--scales" in result.output and "4" in result.output


class TestOptimizeCommand:
    def test_end_to_end_with_synth(self, runner, tmp_path):
        stream_file = tmp_path / "synth.evt"
        depth_file = tmp_path / "synth.edpt"
        result = runner.invoke(main, ["synth", str(stream_file), "--seed", "0",
                                      "--tx", "0.1", "--depth", "2.0",
                                      "--depth-out", str(depth_file)])
        assert result.exit_code == 0, result.output
        assert "alignment_tx = 0.1" in result.output

        trace_file = tmp_path / "trace.csv"
        result = runner.invoke(main, ["optimize", str(stream_file), str(trace_file),
                                      "--fx", "100", "--fy", "100", "--cx", "31.5", "--cy", "31.5",
                                      "--params", "tx", "--depth-file", str(depth_file),
                                      "--budget", "300"])
        assert result.exit_code == 0, result.output
        lines = dict(l.split(" = ") for l in result.output.strip().splitlines())
        assert abs(float(lines["tx"]) - 0.1) / 0.1 < 0.05

        rows = trace_file.read_text().strip().splitlines()
        assert rows[0] == "iteration,tx,loss"
        losses_col = [float(r.split(",")[-1]) for r in rows[1:]]
        assert all(a >= b for a, b in zip(losses_col, losses_col[1:]))

    def test_requires_depth_source(self, runner, tmp_path):
        stream_file = tmp_path / "synth.evt"
        assert runner.invoke(main, ["synth", str(stream_file)]).exit_code == 0
        result = runner.invoke(main, ["optimize", str(stream_file), str(tmp_path / "t.csv"),
                                      "--fx", "100", "--fy", "100", "--cx", "31.5", "--cy", "31.5"])
        assert result.exit_code == 1
        assert "depth" in result.output
