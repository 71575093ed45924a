import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from terramesh.cli import main
from terramesh.formats import load_estimates, load_map, read_bundle, validate_bundle
from terramesh.properties import GRAVITY, load_models
from terramesh.sim import scenario_library, world_to_dict


def run_cli(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim") / "bundle"
    code = run_cli(
        "simulate", "--scenario", "two-class-split", "--seed", 5, "--out", out, "--frames", 4
    )
    assert code == 0
    return out


@pytest.fixture(scope="module")
def run_dir(sim_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run") / "recursive"
    code = run_cli(
        "run", "--bundle", sim_dir, "--out", out,
        "--mesh-side", 0.25, "--mesh-extent", 2.5,
    )
    assert code == 0
    return out


class TestSimulate:
    def test_bundle_is_valid(self, sim_dir):
        assert validate_bundle(sim_dir) == []
        assert (sim_dir / "truth.json").exists()

    def test_unknown_scenario_lists_options(self, capsys):
        code = run_cli("simulate", "--scenario", "not-a-scene", "--seed", 1, "--out", "/tmp/x")
        assert code == 2
        err = capsys.readouterr().err
        assert err.startswith("error:")
        assert "two-class-split" in err and "imbalanced-noisy" in err

    def test_rerun_is_bit_identical(self, sim_dir, tmp_path):
        again = tmp_path / "again"
        assert run_cli(
            "simulate", "--scenario", "two-class-split", "--seed", 5, "--out", again, "--frames", 4
        ) == 0
        for path in sorted(sim_dir.iterdir()):
            assert (again / path.name).read_bytes() == path.read_bytes()

    def test_spec_file_scenario(self, tmp_path):
        spec = scenario_library()["flat-single-class"]
        spec_path = tmp_path / "world.json"
        spec_path.write_text(json.dumps(world_to_dict(spec)))
        out = tmp_path / "bundle"
        assert run_cli("simulate", "--spec", spec_path, "--seed", 2, "--out", out, "--frames", 2) == 0
        assert validate_bundle(out) == []
        manifest, frames = read_bundle(out)
        assert len(frames) == 2


class TestRun:
    def test_outputs_exist(self, run_dir):
        for name in ("map.bin", "map.bin.txt", "estimates.bin", "timing.csv", "summary.json"):
            assert (run_dir / name).exists(), name

    def test_summary_contents(self, run_dir):
        summary = json.loads((run_dir / "summary.json").read_text())
        assert summary["frames_processed"] == 4
        assert summary["frames_skipped"] == 0
        assert summary["estimator"] == "recursive"
        assert summary["faces_observed"] > 0
        assert summary["faces_observed"] <= summary["faces_total"]

    def test_flat_zero_noise_full_coverage(self, tmp_path):
        bundle = tmp_path / "flat"
        assert run_cli("simulate", "--scenario", "flat-single-class", "--seed", 1, "--out", bundle) == 0
        out = tmp_path / "flatrun"
        assert run_cli(
            "run", "--bundle", bundle, "--out", out, "--mesh-side", 0.2, "--mesh-extent", 2.0
        ) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["faces_observed"] == summary["faces_total"]
        assert summary["faces_with_estimate"] == summary["faces_total"]
        # every observed face is fully confident in one class
        mesh, _ = load_map(out / "map.bin")
        weights = mesh.alpha / mesh.alpha.sum(axis=1, keepdims=True)
        assert np.all(weights.max(axis=1) == 1.0)

    def test_baseline_estimator_leaves_alpha_untouched(self, sim_dir, tmp_path):
        out = tmp_path / "baseline"
        assert run_cli(
            "run", "--bundle", sim_dir, "--out", out,
            "--mesh-side", 0.25, "--mesh-extent", 2.5,
            "--estimator", "unimodal_nonrecursive",
        ) == 0
        mesh, header = load_map(out / "map.bin")
        assert np.all(mesh.alpha == 0.0)
        assert header["estimator"] == "unimodal_nonrecursive"
        _, est = load_estimates(out / "estimates.bin")
        assert est.known.any()

    def test_rerun_exports_identical(self, sim_dir, run_dir, tmp_path):
        out = tmp_path / "again"
        assert run_cli(
            "run", "--bundle", sim_dir, "--out", out,
            "--mesh-side", 0.25, "--mesh-extent", 2.5,
        ) == 0
        for name in ("map.bin", "estimates.bin", "summary.json"):
            assert (out / name).read_bytes() == (run_dir / name).read_bytes()

    def test_config_file_with_flag_override(self, sim_dir, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"mesh_side": 0.5, "mesh_extent": 2.5, "estimator": "recursive"}))
        out = tmp_path / "cfgrun"
        assert run_cli(
            "run", "--bundle", sim_dir, "--out", out, "--config", cfg, "--mesh-side", 0.25
        ) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["mesh"]["side_length_m"] == 0.25  # flag wins
        assert summary["mesh"]["half_extent_m"] == 2.5

    def test_unknown_config_key_rejected(self, sim_dir, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"mesh_sides": 0.5}))
        code = run_cli("run", "--bundle", sim_dir, "--out", tmp_path / "x", "--config", cfg)
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_update_mode_hard(self, sim_dir, tmp_path):
        out = tmp_path / "hard"
        assert run_cli(
            "run", "--bundle", sim_dir, "--out", out,
            "--mesh-side", 0.25, "--mesh-extent", 2.5, "--update-mode", "hard",
        ) == 0
        mesh, _ = load_map(out / "map.bin")
        observed = mesh.alpha.sum(axis=1) > 0
        assert np.allclose(mesh.alpha[observed] % 1.0, 0.0)  # integer counts

    def test_all_frames_invalid_yields_empty_map(self, tmp_path):
        # a bundle whose frames are all flagged invalid runs to completion
        # with everything unknown, for any estimator
        from terramesh.formats import write_bundle
        from terramesh.geometry import CameraIntrinsics, Pose
        from terramesh.pipeline import FrameBundle

        intr = CameraIntrinsics(fx=20.0, fy=20.0, cx=4.5, cy=3.5, width=10, height=8)
        catalog, _ = load_models()
        frames = [
            FrameBundle(
                depth=np.full((8, 10), np.nan),
                scores=np.full((8, 10, 10), 0.1),
                pose=Pose.identity(),
                intrinsics=intr,
                frame_id=i,
                timestamp=0.1 * i,
                valid=False,
            )
            for i in range(2)
        ]
        bundle = tmp_path / "invalid"
        write_bundle(bundle, frames, class_names=catalog.names)
        for kind in ("recursive", "unimodal_nonrecursive"):
            out = tmp_path / kind
            assert run_cli(
                "run", "--bundle", bundle, "--out", out,
                "--mesh-side", 0.5, "--mesh-extent", 1.0, "--estimator", kind,
            ) == 0
            summary = json.loads((out / "summary.json").read_text())
            assert summary["frames_processed"] == 0
            assert summary["frames_skipped"] == 2
            assert summary["faces_with_estimate"] == 0

    def test_timing_csv_schema(self, run_dir):
        with open(run_dir / "timing.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["frame", "project_s", "assign_s", "elevation_s", "semantics_s", "total_s"]
        assert len(rows) == 1 + 4


@pytest.fixture(scope="module")
def eval_dir(sim_dir, run_dir, tmp_path_factory):
    base = tmp_path_factory.mktemp("evalset")
    paths = [run_dir / "estimates.bin"]
    for kind in ("multimodal_nonrecursive", "unimodal_nonrecursive"):
        out = base / kind
        assert run_cli(
            "run", "--bundle", sim_dir, "--out", out,
            "--mesh-side", 0.25, "--mesh-extent", 2.5, "--estimator", kind,
        ) == 0
        paths.append(out / "estimates.bin")
    report = base / "report"
    code = run_cli(
        "eval", "--truth", sim_dir / "truth.json", "--out", report, "--estimates", *paths
    )
    assert code == 0
    return report


class TestEval:
    def test_comparative_table(self, eval_dir):
        with open(eval_dir / "summary.csv") as fh:
            rows = list(csv.reader(fh))
        assert len(rows) == 4
        names = [r[0] for r in rows[1:]]
        assert names == ["recursive", "multimodal_nonrecursive", "unimodal_nonrecursive"]
        for name in names:
            assert (eval_dir / f"pr_low_{name}.csv").exists()
            assert (eval_dir / f"pr_high_{name}.csv").exists()

    def test_summary_text_includes_ordering(self, eval_dir):
        text = (eval_dir / "summary.txt").read_text()
        assert "ordering recursive-best-kl" in text
        assert "ordering recursive-best-ap-low" in text

    def test_scenario_mismatch_refused(self, run_dir, tmp_path, capsys):
        other = tmp_path / "other"
        assert run_cli("simulate", "--scenario", "ramp", "--seed", 5, "--out", other, "--frames", 2) == 0
        code = run_cli(
            "eval", "--truth", other / "truth.json", "--out", tmp_path / "r",
            "--estimates", run_dir / "estimates.bin",
        )
        assert code == 2
        assert "different scenario" in capsys.readouterr().err

    def test_mesh_mismatch_refused(self, sim_dir, run_dir, tmp_path, capsys):
        out = tmp_path / "coarser"
        assert run_cli(
            "run", "--bundle", sim_dir, "--out", out,
            "--mesh-side", 0.5, "--mesh-extent", 2.5,
        ) == 0
        code = run_cli(
            "eval", "--truth", sim_dir / "truth.json", "--out", tmp_path / "r2",
            "--estimates", run_dir / "estimates.bin", out / "estimates.bin",
        )
        assert code == 2
        assert "mesh configuration differs" in capsys.readouterr().err


class TestFitdist:
    def write_log(self, path, mu, mass, n=6000, noise=0.05, seed=0, metadata_mass=False):
        rng = np.random.default_rng(seed)
        t = np.arange(n) * 0.01
        force = mu * mass * GRAVITY + rng.normal(0.0, noise * mass * GRAVITY, size=n)
        lines = []
        if metadata_mass:
            lines.append(f"# mass_kg={mass}")
        lines.append("t_seconds,force_newtons")
        lines.extend(f"{ti},{fi}" for ti, fi in zip(t, force))
        path.write_text("\n".join(lines) + "\n")

    def test_synthetic_gaussian_logs(self, tmp_path):
        logs = tmp_path / "logs"
        logs.mkdir()
        self.write_log(logs / "ice.csv", 0.19, 2.0, seed=1, metadata_mass=True)
        self.write_log(logs / "concrete.csv", 0.54, 2.0, seed=2, metadata_mass=True)
        out = tmp_path / "models.tsv"
        assert run_cli("fitdist", "--logs", logs, "--out", out, "--cutoff", 8.0) == 0
        catalog, models = load_models(out)
        assert catalog.names == ("concrete", "ice")  # sorted file order
        by_name = {m.class_name: m for m in models}
        assert by_name["ice"].mu == pytest.approx(0.19, abs=0.01)
        assert by_name["concrete"].mu == pytest.approx(0.54, abs=0.01)
        ks_rows = list(csv.reader(open(str(out) + ".ks.csv")))
        assert ks_rows[0][:2] == ["class", "best_family"]
        assert all(r[1] == "gaussian" for r in ks_rows[1:])

    def test_mass_flag(self, tmp_path):
        logs = tmp_path / "logs"
        logs.mkdir()
        self.write_log(logs / "wood.csv", 0.37, 3.0, seed=3)
        out = tmp_path / "m.tsv"
        assert run_cli("fitdist", "--logs", logs, "--out", out, "--mass", 3.0) == 0
        _, models = load_models(out)
        assert models[0].mu == pytest.approx(0.37, abs=0.01)

    def test_missing_mass_is_error(self, tmp_path, capsys):
        logs = tmp_path / "logs"
        logs.mkdir()
        self.write_log(logs / "wood.csv", 0.37, 3.0, seed=3)
        assert run_cli("fitdist", "--logs", logs, "--out", tmp_path / "m.tsv") == 2
        assert "mass" in capsys.readouterr().err

    def test_empty_dir_is_error(self, tmp_path, capsys):
        logs = tmp_path / "empty"
        logs.mkdir()
        assert run_cli("fitdist", "--logs", logs, "--out", tmp_path / "m.tsv") == 2
        assert "error:" in capsys.readouterr().err

    def test_output_roundtrips_through_loader(self, tmp_path):
        logs = tmp_path / "logs"
        logs.mkdir()
        self.write_log(logs / "snow.csv", 0.39, 2.5, seed=4, metadata_mass=True)
        out = tmp_path / "m.tsv"
        assert run_cli("fitdist", "--logs", logs, "--out", out) == 0
        catalog, models = load_models(out)
        out2 = tmp_path / "m2.tsv"
        from terramesh.properties import save_models

        save_models(out2, models)
        assert out.read_bytes() == out2.read_bytes()


class TestValidateAndBench:
    def test_validate_good(self, sim_dir, capsys):
        assert run_cli("validate", "--bundle", sim_dir) == 0
        assert "valid" in capsys.readouterr().out

    def test_validate_bad(self, sim_dir, tmp_path, capsys):
        import shutil

        broken = tmp_path / "broken"
        shutil.copytree(sim_dir, broken)
        next(broken.glob("*.depth.f32")).unlink()
        assert run_cli("validate", "--bundle", broken) == 1
        assert "invalid:" in capsys.readouterr().out

    def test_bench_writes_csv(self, tmp_path):
        out = tmp_path / "bench.csv"
        assert run_cli(
            "bench", "--out", out, "--trials", 3, "--sides", "0.08,0.16",
            "--extent", 0.48, "--frame", "60x40",
        ) == 0
        rows = list(csv.reader(open(out)))
        assert rows[0][0] == "side_length_m"
        assert len(rows) == 1 + 2 * 6  # two configs, six stages


class TestEntryPoints:
    def test_module_invocation(self):
        proc = subprocess.run(
            [sys.executable, "-m", "terramesh", "--help"], capture_output=True, text=True
        )
        assert proc.returncode == 0
        for sub in ("simulate", "run", "eval", "fitdist", "validate", "bench"):
            assert sub in proc.stdout

    @pytest.mark.parametrize(
        "sub", ["simulate", "run", "eval", "fitdist", "validate", "bench"]
    )
    def test_subcommand_help(self, sub, capsys):
        with pytest.raises(SystemExit) as exc:
            main([sub, "--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        assert "--" in out
