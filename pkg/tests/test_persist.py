"""Config, CSV, checkpoint, and SVG rendering tests."""

import json
import os
import re

import numpy as np
import pytest

from compflow import envs, flow, nnet, persist


class TestConfig:
    def test_empty_file_yields_reference_defaults(self, tmp_path):
        p = tmp_path / "empty.cfg"
        p.write_text("")
        cfg = persist.load_config(p)
        assert cfg["rl.gamma"] == 0.99
        assert cfg["rl.alpha_ent"] == 0.2
        assert cfg["rl.target_update_rate"] == 5e-3
        assert cfg["rl.omega"] == 5.0
        assert cfg["rl.batch_size"] == 128
        assert cfg["rl.buffer_capacity"] == 10 ** 6
        assert cfg["rl.lr"] == 3e-4
        assert cfg["rl.hidden_dim"] == 256
        assert cfg["flow.hidden_layers"] == 6
        assert cfg["flow.hidden_dim"] == 256
        assert cfg["flow.batch_size"] == 1024
        assert cfg["flow.ode_steps"] == 10
        assert cfg["flow.train_freq"] == 5000

    def test_out_of_range_value_names_key_and_range(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("rl.xi = 1.5\n")
        with pytest.raises(persist.ConfigError, match=r"rl\.xi must be in \(0, 1\]"):
            persist.load_config(p)

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("rl.unknown_knob = 3\n")
        with pytest.raises(persist.ConfigError, match="unknown config key"):
            persist.load_config(p)

    def test_roundtrip_is_identity(self, tmp_path):
        p = tmp_path / "a.cfg"
        p.write_text("flow.eta = 12.5\nrl.beta = 0.2\nenv.id = gaussian\n")
        cfg = persist.load_config(p)
        q = tmp_path / "b.cfg"
        q.write_text(persist.serialize_config(cfg))
        assert persist.load_config(q) == cfg

    def test_hash_stable_across_key_order(self, tmp_path):
        a = tmp_path / "a.cfg"
        b = tmp_path / "b.cfg"
        a.write_text("flow.eta = 12\nrl.beta = 0.2\n")
        b.write_text("rl.beta = 0.2\nflow.eta = 12\n")
        assert persist.config_hash(persist.load_config(a)) == \
            persist.config_hash(persist.load_config(b))

    def test_hash_differs_on_value_change(self, tmp_path):
        a = tmp_path / "a.cfg"
        a.write_text("flow.eta = 12\n")
        b = tmp_path / "b.cfg"
        b.write_text("flow.eta = 13\n")
        assert persist.config_hash(persist.load_config(a)) != \
            persist.config_hash(persist.load_config(b))

    def test_overrides_validated_like_files(self):
        with pytest.raises(persist.ConfigError):
            persist.parse_overrides(["rl.gamma=1.5"])
        items = persist.parse_overrides(["flow.eta=3.5", "env.id=patrol"])
        assert items == {"flow.eta": 3.5, "env.id": "patrol"}

    def test_comments_and_blank_lines_ignored(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("# a comment\n\nflow.eta = 2.0  # trailing\n")
        assert persist.load_config(p)["flow.eta"] == 2.0


class TestFloatFormat:
    def test_roundtrip_exact_for_awkward_floats(self):
        rng = np.random.default_rng(0)
        values = list(rng.standard_normal(200)) + [0.1, 1e-300, 1e300, 2 ** -52, np.pi]
        for v in values:
            assert float(persist.format_float(v)) == float(v)


class TestDatasetCSV:
    def test_roundtrip(self, tmp_path):
        env = envs.PointMassEnv(horizon=10)
        ds = envs.generate_offline_dataset(env, envs.uniform_policy(env), 25,
                                           np.random.default_rng(1))
        path = tmp_path / "data.csv"
        persist.write_dataset(path, ds)
        header = path.read_text().split("\n")[0]
        assert header == "s0,s1,s2,s3,a0,a1,r,sp0,sp1,sp2,sp3,done"
        back = persist.read_dataset(path)
        assert np.array_equal(back.states, ds.states)
        assert np.array_equal(back.actions, ds.actions)
        assert np.array_equal(back.rewards, ds.rewards)
        assert np.array_equal(back.next_states, ds.next_states)
        assert np.array_equal(back.dones, ds.dones)

    def test_read_log_records_paths(self, tmp_path):
        env = envs.PointMassEnv(horizon=10)
        ds = envs.generate_offline_dataset(env, envs.uniform_policy(env), 5,
                                           np.random.default_rng(2))
        path = tmp_path / "d.csv"
        persist.write_dataset(path, ds)
        persist.reset_dataset_read_log()
        persist.read_dataset(path)
        assert persist.dataset_read_log() == [str(path)]


class TestMetrics:
    def record(self, step, val=1.0):
        return {"step": step, "eval_return_mean": val, "eval_return_std": 0.1,
                "critic_loss": 0.2, "actor_loss": 0.3, "lambda": 0.4,
                "mean_kept_gap": 0.5, "mean_rejected_gap": 0.6, "buffer_size": step}

    def test_write_read_roundtrip(self, tmp_path):
        p = tmp_path / "m.csv"
        with persist.MetricsWriter(p) as w:
            for i in range(3):
                w.write(self.record(i + 1, val=float(i)))
        mf = persist.read_metrics(p)
        assert not mf.truncated
        assert [r["step"] for r in mf.records] == [1, 2, 3]
        assert mf.records[2]["eval_return_mean"] == 2.0

    def test_partial_final_line_tolerated_and_flagged(self, tmp_path):
        p = tmp_path / "m.csv"
        with persist.MetricsWriter(p) as w:
            w.write(self.record(1))
            w.write(self.record(2))
        with open(p, "a") as fh:
            fh.write("3,0.5,0.1,")  # crash mid-record: no newline, short row
        mf = persist.read_metrics(p)
        assert mf.truncated
        assert [r["step"] for r in mf.records] == [1, 2]

    def test_header_mismatch_shows_both(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("step,foo\n1,2\n")
        with pytest.raises(ValueError) as exc:
            persist.read_metrics(p)
        assert "step,foo" in str(exc.value)
        assert persist.METRICS_HEADER in str(exc.value)


class TestRunLayout:
    def test_distinct_seed_directories(self, tmp_path):
        cfg = persist.make_config()
        d1 = persist.run_directory(tmp_path, cfg, 1)
        d2 = persist.run_directory(tmp_path, cfg, 2)
        assert d1 != d2
        assert os.path.dirname(d1) == os.path.dirname(d2)
        assert os.path.basename(os.path.dirname(d1)) == persist.config_hash(cfg)

    def test_manifest_written_once(self, tmp_path):
        cfg = persist.make_config()
        d = persist.run_directory(tmp_path, cfg, 0)
        persist.write_manifest(d, cfg, [0])
        first = open(os.path.join(d, "manifest.json")).read()
        persist.write_manifest(d, cfg, [99])
        assert open(os.path.join(d, "manifest.json")).read() == first
        manifest = persist.read_manifest(d)
        assert manifest["config_hash"] == persist.config_hash(cfg)
        assert manifest["seeds"] == [0]

    def test_runs_root_env_var_override(self, tmp_path, monkeypatch):
        cfg = persist.make_config()
        monkeypatch.setenv("COMPFLOW_RUNS_DIR", str(tmp_path / "elsewhere"))
        assert persist.runs_root(cfg, "cli_dir") == str(tmp_path / "elsewhere")
        monkeypatch.delenv("COMPFLOW_RUNS_DIR")
        assert persist.runs_root(cfg, "cli_dir") == "cli_dir"
        assert persist.runs_root(cfg, None) == "runs"


class TestCheckpoints:
    def test_snapshot_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        net = nnet.init_dense([3, 8, 2], rng)
        fcfg = flow.FlowTrainConfig(hidden_layers=1, hidden_dim=8, batch_size=4, iters=0)
        fl = flow.new_flow(1, 1, 1, (1.0, 2.0), fcfg, rng)
        snapshot = {
            "nets": {"actor": net},
            "flows": {"online_flow": fl},
            "arrays": {"buffer": rng.standard_normal((5, 3))},
            "meta": {"step": 42, "rng_states": {"env": np.random.default_rng(0).bit_generator.state}},
        }
        d = persist.save_checkpoint(tmp_path, 42, snapshot)
        assert persist.latest_checkpoint(tmp_path) == d
        back = persist.load_checkpoint(d)
        assert back["step"] == 42
        assert np.array_equal(back["arrays"]["buffer"], snapshot["arrays"]["buffer"])
        for a, b in zip(back["nets"]["actor"].params(), net.params()):
            assert np.array_equal(a, b)
        assert back["flows"]["online_flow"].t_start == 1.0
        assert back["meta"]["rng_states"]["env"] == snapshot["meta"]["rng_states"]["env"]

    def test_latest_pointer_survives_new_checkpoints(self, tmp_path):
        rng = np.random.default_rng(4)
        net = nnet.init_dense([2, 2], rng)
        snap = {"nets": {"n": net}, "arrays": {}, "meta": {"step": 1}}
        persist.save_checkpoint(tmp_path, 1, snap)
        snap2 = {"nets": {"n": net}, "arrays": {}, "meta": {"step": 2}}
        d2 = persist.save_checkpoint(tmp_path, 2, snap2)
        assert persist.latest_checkpoint(tmp_path) == d2

    def test_atomic_write_leaves_no_partial_file(self, tmp_path):
        target = tmp_path / "out.bin"
        persist.atomic_write_bytes(target, b"hello")
        assert target.read_bytes() == b"hello"
        leftovers = [f for f in os.listdir(tmp_path) if f.startswith(".tmp")]
        assert leftovers == []


def write_metrics_file(path, steps, values):
    with persist.MetricsWriter(path) as w:
        for s, v in zip(steps, values):
            w.write({"step": s, "eval_return_mean": v, "eval_return_std": 0.0,
                     "critic_loss": 0.0, "actor_loss": 0.0, "lambda": 0.0,
                     "mean_kept_gap": 0.0, "mean_rejected_gap": 0.0,
                     "buffer_size": s})


class TestSVG:
    def _polyline_points(self, svg):
        pts = re.findall(r'<polyline class="mean" points="([^"]+)"', svg)
        return [[tuple(map(float, p.split(","))) for p in one.split()] for one in pts]

    def _band_points(self, svg):
        pts = re.findall(r'<polygon class="band" points="([^"]+)"', svg)
        return [[tuple(map(float, p.split(","))) for p in one.split()] for one in pts]

    def test_two_point_single_run(self, tmp_path):
        m = tmp_path / "m.csv"
        write_metrics_file(m, [0, 100], [0.0, 1.0])
        out = tmp_path / "curve.svg"
        persist.render_learning_curve([("run", [str(m)])], out)
        svg = out.read_text()
        lines = self._polyline_points(svg)
        assert len(lines) == 1 and len(lines[0]) == 2
        (x0, y0), (x1, y1) = lines[0]
        assert x1 > x0 and y1 < y0  # higher return is higher on the canvas
        assert "<svg" in svg and "xmlns" in svg
        assert "step" in svg and "return" in svg

    def test_identical_seeds_zero_height_band(self, tmp_path):
        m1 = tmp_path / "a.csv"
        m2 = tmp_path / "b.csv"
        for m in (m1, m2):
            write_metrics_file(m, [0, 50, 100], [0.0, 0.5, 0.25])
        out = tmp_path / "curve.svg"
        persist.render_learning_curve([("pair", [str(m1), str(m2)])], out)
        band = self._band_points(out.read_text())[0]
        upper, lower = band[:3], band[3:][::-1]
        for (xu, yu), (xl, yl) in zip(upper, lower):
            assert xu == xl and yu == yl

    def test_band_halfwidth_matches_std_oracle(self, tmp_path):
        rng = np.random.default_rng(5)
        steps = [0, 10, 20, 30]
        curves = [rng.standard_normal(4) for _ in range(4)]
        paths = []
        for i, c in enumerate(curves):
            p = tmp_path / f"s{i}.csv"
            write_metrics_file(p, steps, c)
            paths.append(str(p))
        out = tmp_path / "curve.svg"
        persist.render_learning_curve([("g", paths)], out)
        svg = out.read_text()
        mean_px = self._polyline_points(svg)[0]
        band = self._band_points(svg)[0]
        upper, lower = band[:4], band[4:][::-1]
        stack = np.stack(curves)
        mean, std = stack.mean(0), stack.std(0, ddof=1)
        # recover the y pixel scale from two mean vertices, then check the band
        (x0, py0), (x1, py1) = mean_px[0], mean_px[1]
        scale = (py1 - py0) / (mean[1] - mean[0])
        for j in range(4):
            half_px = (lower[j][1] - upper[j][1]) / 2.0
            assert half_px == pytest.approx(abs(scale) * std[j], abs=0.02)

    def test_mismatched_step_grids_rejected(self, tmp_path):
        m1 = tmp_path / "a.csv"
        m2 = tmp_path / "b.csv"
        write_metrics_file(m1, [0, 10], [0.0, 1.0])
        write_metrics_file(m2, [0, 20], [0.0, 1.0])
        with pytest.raises(ValueError):
            persist.render_learning_curve([("g", [str(m1), str(m2)])], tmp_path / "c.svg")

    def test_empty_group_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            persist.render_learning_curve([], tmp_path / "c.svg")
        with pytest.raises(ValueError):
            persist.render_learning_curve([("g", [])], tmp_path / "c.svg")
