"""Command-line harness: simulate | run | eval | fitdist | validate | bench.

Every subcommand exits 0 on success and nonzero with a single
``error: <message>`` line on stderr otherwise.  Seeds are mandatory wherever
randomness exists; nothing is seeded from the wall clock.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .elevation import SensorNoiseModel
from .errors import TerrameshError
from .evaluation import (
    bench_update,
    evaluate_estimator,
    write_bench_csv,
    write_pr_csv,
    write_summary_csv,
)
from .formats import (
    load_estimates,
    load_truth,
    read_bundle,
    save_estimates,
    save_map,
    save_truth,
    scenario_hash,
    validate_bundle,
    write_bundle,
)
from .mesh import MeshConfig, init_mesh
from .pipeline import EstimatorKind, FaceScores, Mapper, PipelineConfig, estimate_properties
from .properties import (
    ForceLog,
    FitSelection,
    PropertyModel,
    fit_and_select,
    friction_from_force,
    load_models,
    save_models,
)
from .sim import render_frames, scenario_library, world_from_dict, world_to_dict


class CliError(TerrameshError):
    pass


# -- simulate ----------------------------------------------------------------


def cmd_simulate(args) -> int:
    if args.scenario:
        library = scenario_library()
        if args.scenario not in library:
            known = ", ".join(sorted(library))
            raise CliError(f"unknown scenario {args.scenario!r}; valid scenarios: {known}")
        spec = library[args.scenario]
    else:
        doc = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        spec = world_from_dict(doc)
    spec = spec.with_seed(args.seed)

    frames, truth = render_frames(spec, limit=args.frames)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    world = world_to_dict(spec)
    write_bundle(
        out,
        frames,
        class_names=truth.class_names,
        scenario={"name": spec.name, "hash": scenario_hash(world)},
    )
    save_truth(out / "truth.json", world, truth.class_names, truth.models)
    valid = sum(1 for f in frames if f.valid)
    print(f"wrote {len(frames)} frames ({valid} valid) to {out}")
    return 0


# -- run ----------------------------------------------------------------------


def _merge_run_config(args) -> dict:
    cfg = {
        "estimator": "recursive",
        "update_mode": "soft",
        "mesh_side": 0.02,
        "mesh_extent": 5.0,
        "models": None,
        "noise": [0.001, 0.0, 0.0019],
        "pose_cov": None,
        "recenter": False,
    }
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config file: {exc}") from exc
        unknown = set(file_cfg) - set(cfg)
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    # explicit flags win over the config file
    for key, value in (
        ("estimator", args.estimator),
        ("update_mode", args.update_mode),
        ("mesh_side", args.mesh_side),
        ("mesh_extent", args.mesh_extent),
        ("models", args.models),
    ):
        if value is not None:
            cfg[key] = value
    if args.noise is not None:
        cfg["noise"] = [float(v) for v in args.noise.split(",")]
    if args.recenter:
        cfg["recenter"] = True
    return cfg


def cmd_run(args) -> int:
    cfg = _merge_run_config(args)
    manifest, frames = read_bundle(args.bundle)
    catalog, models = load_models(cfg["models"])
    if catalog.k != manifest["num_classes"]:
        raise CliError(
            f"bundle has {manifest['num_classes']} classes, model file has {catalog.k}"
        )
    if list(catalog.names) != list(manifest["class_names"]):
        raise CliError("bundle class names disagree with the model catalog")

    a, b, c = cfg["noise"]
    mesh_cfg = MeshConfig(
        side_length_m=float(cfg["mesh_side"]),
        half_extent_m=float(cfg["mesh_extent"]),
        num_classes=catalog.k,
    )
    kind = EstimatorKind(cfg["estimator"])
    pose_cov = cfg["pose_cov"]
    pipeline_cfg = PipelineConfig(
        noise_model=SensorNoiseModel(a=a, b=b, c=c),
        update_mode=cfg["update_mode"],
        accumulate_alpha=kind is EstimatorKind.RECURSIVE,
        recenter=bool(cfg["recenter"]),
        pose_cov_override=None if pose_cov is None else np.array(pose_cov, dtype=float),
    )
    mapper = Mapper(init_mesh(mesh_cfg), pipeline_cfg).run(frames)
    last_scores = mapper.last_scores
    if last_scores is None:
        # every frame was skipped: the baselines have no current frame, so
        # all faces stay unknown
        last_scores = FaceScores(
            sums=np.zeros_like(mapper.mesh.alpha),
            counts=np.zeros(mapper.mesh.num_faces, dtype=np.int64),
        )
    estimates = estimate_properties(mapper.mesh, kind, models, last_scores)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scenario = manifest.get("scenario") or {}
    save_map(
        mapper.mesh,
        out / "map.bin",
        class_names=catalog.names,
        frame_count=mapper.frames_processed,
        extra={"estimator": kind.value, "scenario_hash": scenario.get("hash")},
    )
    save_estimates(out / "estimates.bin", estimates, mapper.mesh, kind.value, scenario.get("hash"))

    with open(out / "timing.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "project_s", "assign_s", "elevation_s", "semantics_s", "total_s"])
        for i, t in enumerate(mapper.timings):
            writer.writerow([i, repr(t.project), repr(t.assign), repr(t.elevation), repr(t.semantics), repr(t.total)])

    summary = {
        "estimator": kind.value,
        "update_mode": cfg["update_mode"],
        "frames_processed": mapper.frames_processed,
        "frames_skipped": mapper.frames_skipped,
        "faces_total": mapper.mesh.num_faces,
        "faces_observed": int(mapper.observed.sum()),
        "faces_with_estimate": int(estimates.known.sum()),
        "scenario": scenario,
        "mesh": {
            "side_length_m": mesh_cfg.side_length_m,
            "half_extent_m": mesh_cfg.half_extent_m,
            "num_classes": mesh_cfg.num_classes,
        },
    }
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(
        f"processed {mapper.frames_processed} frames "
        f"({mapper.frames_skipped} skipped); "
        f"{summary['faces_observed']}/{summary['faces_total']} faces observed"
    )
    return 0


# -- eval -----------------------------------------------------------------------


def cmd_eval(args) -> int:
    truth_doc = load_truth(args.truth)
    world = world_from_dict(truth_doc["world"])
    truth_hash = truth_doc["scenario_hash"]
    models = [
        PropertyModel(m["name"], m["mu"], m["sigma"]) for m in truth_doc["models"]
    ]

    loaded = []
    mesh_key = None
    for path in args.estimates:
        header, estimates = load_estimates(path)
        if header.get("scenario_hash") != truth_hash:
            raise CliError(
                f"{path}: estimates were produced for a different scenario than {args.truth}"
            )
        key = (
            header["side_length_m"],
            header["half_extent_m"],
            header["num_classes"],
            tuple(header["center"]),
        )
        if mesh_key is None:
            mesh_key = key
        elif key != mesh_key:
            raise CliError(f"{path}: mesh configuration differs between estimate files")
        loaded.append((header["estimator"], estimates))
    if not loaded:
        raise CliError("no estimate files supplied")

    side, extent, k, center = mesh_key
    mesh = init_mesh(MeshConfig(side_length_m=side, half_extent_m=extent, num_classes=int(k)))
    mesh.center = np.asarray(center, dtype=float)
    centroids = mesh.face_centroids()
    truth_classes = world.class_map.classify(centroids[:, 0], centroids[:, 1])

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    for name, estimates in loaded:
        report = evaluate_estimator(name, estimates, truth_classes, models)
        reports.append(report)
        write_pr_csv(out / f"pr_low_{name}.csv", report.pr_low)
        write_pr_csv(out / f"pr_high_{name}.csv", report.pr_high)
    write_summary_csv(out / "summary.csv", reports)

    lines = ["estimator  kl_mean  kl_median  ap_low  ap_high  accuracy  known/total"]
    for r in reports:
        lines.append(
            f"{r.estimator}  {r.kl_mean:.4f}  {r.kl_median:.4f}  "
            f"{r.ap_low:.4f}  {r.ap_high:.4f}  {r.accuracy:.4f}  "
            f"{r.faces_known}/{r.faces_total}"
        )
    by_name = {r.estimator: r for r in reports}
    if len(reports) > 1 and "recursive" in by_name:
        others = [r for r in reports if r.estimator != "recursive"]
        kl_ok = all(by_name["recursive"].kl_mean < r.kl_mean for r in others)
        ap_ok = all(by_name["recursive"].ap_low >= r.ap_low for r in others)
        lines.append(f"ordering recursive-best-kl: {'yes' if kl_ok else 'no'}")
        lines.append(f"ordering recursive-best-ap-low: {'yes' if ap_ok else 'no'}")
    text = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


# -- fitdist -----------------------------------------------------------------------


def _read_force_csv(path, mass_override):
    mass = mass_override
    times = []
    forces = []
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    start = 0
    if rows and rows[0] and rows[0][0].startswith("#"):
        token = rows[0][0].lstrip("# ").strip()
        if token.startswith("mass_kg="):
            file_mass = float(token.split("=", 1)[1])
            if mass is None:
                mass = file_mass
        start = 1
    if len(rows) <= start or [c.strip() for c in rows[start]] != ["t_seconds", "force_newtons"]:
        raise CliError(f"{path}: expected header 't_seconds,force_newtons'")
    for row in rows[start + 1 :]:
        if not row:
            continue
        times.append(float(row[0]))
        forces.append(float(row[1]))
    if mass is None:
        raise CliError(f"{path}: device mass missing (use --mass or a '# mass_kg=' row)")
    return ForceLog(np.array(times), np.array(forces), mass_kg=mass)


def cmd_fitdist(args) -> int:
    logs_dir = Path(args.logs)
    csv_paths = sorted(logs_dir.glob("*.csv"))
    if not csv_paths:
        raise CliError(f"no .csv force logs found in {logs_dir}")

    models = []
    selections: list[tuple[str, FitSelection]] = []
    for path in csv_paths:
        class_name = path.stem.replace("_", " ")
        log = _read_force_csv(path, args.mass)
        mu_samples = friction_from_force(log, cutoff_hz=args.cutoff)
        selection = fit_and_select(mu_samples)
        gauss = selection.params["gaussian"]
        models.append(PropertyModel(class_name, gauss["mu"], gauss["sigma"]))
        selections.append((class_name, selection))

    save_models(args.out, models)
    ks_path = str(args.out) + ".ks.csv"
    with open(ks_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "best_family", "ks_gaussian", "ks_lognormal", "ks_weibull", "n"])
        for class_name, sel in selections:
            writer.writerow(
                [
                    class_name,
                    sel.best_family,
                    repr(sel.ks.get("gaussian", float("nan"))),
                    repr(sel.ks.get("lognormal", float("nan"))),
                    repr(sel.ks.get("weibull", float("nan"))),
                    sel.n,
                ]
            )
    print(f"fitted {len(models)} classes -> {args.out} (KS table: {ks_path})")
    return 0


# -- validate ------------------------------------------------------------------------


def cmd_validate(args) -> int:
    issues = validate_bundle(args.bundle)
    if issues:
        for issue in issues:
            print(f"invalid: {issue}")
        return 1
    print("bundle is valid")
    return 0


# -- bench -----------------------------------------------------------------------------


def cmd_bench(args) -> int:
    sides = [float(s) for s in args.sides.split(",")]
    w, h = (int(v) for v in args.frame.split("x"))
    rows = bench_update(
        sides,
        half_extent_m=args.extent,
        image_size=(w, h),
        trials=args.trials,
    )
    write_bench_csv(args.out, rows)
    for r in rows:
        if r.stage == "update":
            print(
                f"side {r.side_length_m:g} m: {r.num_faces} faces, "
                f"{r.num_points} points, update {1e3 * r.mean_s:.2f} "
                f"+/- {1e3 * r.std_s:.2f} ms over {r.trials} trials"
            )
    print(f"wrote {args.out}")
    return 0


# -- parser -------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="terramesh",
        description="Probabilistic terrain mapping: simulate scenes, build maps, evaluate estimators.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a synthetic scenario into a frame bundle")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--scenario", help="name from the built-in scenario library")
    group.add_argument("--spec", help="path to a world-spec JSON file")
    p.add_argument("--seed", type=int, required=True, help="RNG seed (mandatory)")
    p.add_argument("--out", required=True, help="output bundle directory")
    p.add_argument("--frames", type=int, default=None, help="limit the number of frames")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("run", help="process a frame bundle into a map export")
    p.add_argument("--bundle", required=True, help="frame-bundle directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="JSON run-config file (flags win over it)")
    p.add_argument("--estimator", choices=[k.value for k in EstimatorKind])
    p.add_argument("--update-mode", dest="update_mode", choices=["soft", "hard"])
    p.add_argument("--mesh-side", dest="mesh_side", type=float, help="triangle leg length [m]")
    p.add_argument("--mesh-extent", dest="mesh_extent", type=float, help="window half extent [m]")
    p.add_argument("--models", help="friction-model file (default: shipped)")
    p.add_argument("--noise", help="depth noise coefficients a,b,c")
    p.add_argument("--recenter", action="store_true", help="recenter the mesh under the camera")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score estimate files against ground truth")
    p.add_argument("--truth", required=True, help="truth.json written by simulate")
    p.add_argument("--estimates", nargs="+", required=True, help="estimates.bin files")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fitdist", help="fit friction models from force logs")
    p.add_argument("--logs", required=True, help="directory of per-class force CSVs")
    p.add_argument("--out", required=True, help="output model file")
    p.add_argument("--mass", type=float, default=None, help="device mass [kg]")
    p.add_argument("--cutoff", type=float, default=5.0, help="low-pass cutoff [Hz]")
    p.set_defaults(func=cmd_fitdist)

    p = sub.add_parser("validate", help="check a frame bundle against the documented format")
    p.add_argument("--bundle", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("bench", help="time the map update across mesh resolutions")
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--sides", default="0.01,0.02,0.04,0.08", help="comma-separated element lengths [m]")
    p.add_argument("--extent", type=float, default=0.48, help="mesh half extent [m]")
    p.add_argument("--frame", default="424x240", help="synthetic frame size WxH")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TerrameshError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
