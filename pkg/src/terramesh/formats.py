"""Versioned on-disk formats: map exports, frame bundles, estimates, ground truth.

Binary container layout (shared by map and estimate files):

    line 1          magic: ``TERRAMESH-BIN v1``
    line 2          JSON: {"header": {...}, "arrays": [{name, dtype, shape}, ...]}
    remainder       raw array bytes, little-endian, C-order, in manifest order

Frame-bundle directory layout:

    manifest.json               format id/version, image geometry, class names,
                                per-frame pose (rotation row-major, translation,
                                rotation covariance), timestamps, file names
    frame_<id>.depth.f32        raw float32, height*width values, row-major
    frame_<id>.scores.f32       raw float32, height*width*num_classes values,
                                row-major with the class axis fastest

All writers emit deterministic bytes: JSON keys are sorted, floats use
shortest round-trip representation, and no wall-clock data is embedded.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import FormatError
from .geometry import CameraIntrinsics, Pose
from .mesh import Mesh, MeshConfig

BIN_MAGIC = b"TERRAMESH-BIN v1\n"
BUNDLE_FORMAT = "terramesh/frame-bundle"
BUNDLE_VERSION = 1
MAP_KIND = "map-export"
ESTIMATES_KIND = "face-estimates"
TRUTH_FORMAT = "terramesh/ground-truth"
TRUTH_VERSION = 1


def _json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_arrays(path, header: dict, arrays: dict) -> None:
    """Write the binary container: JSON header plus named raw arrays."""
    manifest = []
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dtype = arr.dtype.newbyteorder("<")
        arr = arr.astype(dtype, copy=False)
        manifest.append({"name": name, "dtype": dtype.str, "shape": list(arr.shape)})
        blobs.append(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(BIN_MAGIC)
        fh.write(_json_bytes({"header": header, "arrays": manifest}))
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)


def read_arrays(path):
    """Read a binary container back into ``(header, {name: array})``."""
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != BIN_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        try:
            meta = json.loads(fh.readline().decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: unreadable header: {exc}") from exc
        arrays = {}
        for entry in meta["arrays"]:
            dtype = np.dtype(entry["dtype"])
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * dtype.itemsize)
            if len(buf) != count * dtype.itemsize:
                raise FormatError(f"{path}: truncated array {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after declared arrays")
    return meta["header"], arrays


# -- map export ---------------------------------------------------------------


def save_map(mesh: Mesh, path, class_names, frame_count: int = 0, extra: dict | None = None) -> None:
    """Dump mesh state losslessly plus a human-readable sidecar header.

    Writes ``path`` (binary container) and ``path + '.txt'`` (sidecar).
    """
    vx, vy = mesh.vertex_positions()
    header = {
        "kind": MAP_KIND,
        "version": 1,
        "side_length_m": mesh.cfg.side_length_m,
        "half_extent_m": mesh.cfg.half_extent_m,
        "num_classes": mesh.cfg.num_classes,
        "center": [float(mesh.center[0]), float(mesh.center[1])],
        "frame_count": int(frame_count),
        "class_names": list(class_names),
    }
    if extra:
        header.update(extra)
    write_arrays(
        path,
        header,
        {
            "vertex_x": vx,
            "vertex_y": vy,
            "z_mean": mesh.z_mean,
            "z_var": mesh.z_var,
            "touched": mesh.touched.astype(np.uint8),
            "face_vertices": mesh.face_vertex_ids.astype(np.int32),
            "alpha": mesh.alpha,
        },
    )
    sidecar = [
        "terramesh map export v1",
        f"side_length_m: {mesh.cfg.side_length_m!r}",
        f"half_extent_m: {mesh.cfg.half_extent_m!r}",
        f"num_classes: {mesh.cfg.num_classes}",
        f"center: {float(mesh.center[0])!r} {float(mesh.center[1])!r}",
        f"vertices: {mesh.num_vertices}",
        f"faces: {mesh.num_faces}",
        f"frame_count: {int(frame_count)}",
        "classes: " + ", ".join(class_names),
    ]
    with open(str(path) + ".txt", "w", encoding="utf-8") as fh:
        fh.write("\n".join(sidecar) + "\n")


def load_map(path):
    """Rebuild a mesh from :func:`save_map` output; returns ``(mesh, header)``."""
    header, arrays = read_arrays(path)
    if header.get("kind") != MAP_KIND:
        raise FormatError(f"{path}: not a map export")
    cfg = MeshConfig(
        side_length_m=header["side_length_m"],
        half_extent_m=header["half_extent_m"],
        num_classes=header["num_classes"],
    )
    mesh = Mesh(cfg, center_xy=header["center"])
    vx, vy = mesh.vertex_positions()
    if not (np.array_equal(vx, arrays["vertex_x"]) and np.array_equal(vy, arrays["vertex_y"])):
        raise FormatError(f"{path}: vertex lattice does not match configuration")
    if not np.array_equal(mesh.face_vertex_ids, arrays["face_vertices"]):
        raise FormatError(f"{path}: face table does not match configuration")
    mesh.z_mean = arrays["z_mean"].astype(float)
    mesh.z_var = arrays["z_var"].astype(float)
    mesh.touched = arrays["touched"].astype(bool)
    mesh.alpha = arrays["alpha"].astype(float)
    if mesh.alpha.shape != (cfg.num_faces, cfg.num_classes):
        raise FormatError(f"{path}: alpha shape mismatch")
    return mesh, header


# -- frame bundles --------------------------------------------------------------


def _pose_to_dict(pose: Pose) -> dict:
    return {
        "rotation": [float(v) for v in pose.rotation.reshape(-1)],
        "translation": [float(v) for v in pose.translation],
        "rotation_cov": [float(v) for v in pose.rotation_cov.reshape(-1)],
    }


def _pose_from_dict(d: dict) -> Pose:
    return Pose(
        rotation=np.array(d["rotation"], dtype=float).reshape(3, 3),
        translation=np.array(d["translation"], dtype=float),
        rotation_cov=np.array(d["rotation_cov"], dtype=float).reshape(3, 3),
    )


def _intrinsics_to_dict(intr: CameraIntrinsics) -> dict:
    return {
        "fx": intr.fx,
        "fy": intr.fy,
        "cx": intr.cx,
        "cy": intr.cy,
        "width": intr.width,
        "height": intr.height,
    }


def _intrinsics_from_dict(d: dict) -> CameraIntrinsics:
    return CameraIntrinsics(
        fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
        width=int(d["width"]), height=int(d["height"]),
    )


def write_bundle(directory, frames, class_names, scenario: dict | None = None) -> None:
    """Write a frame-bundle directory consumable by the mapping pipeline."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    width = height = num_classes = None
    intrinsics = None
    for frame in frames:
        h, w = frame.depth.shape
        k = frame.scores.shape[2]
        if width is None:
            width, height, num_classes = w, h, k
            intrinsics = frame.intrinsics
        elif (w, h, k) != (width, height, num_classes):
            raise FormatError("all frames in a bundle must share image geometry")
        depth_name = f"frame_{frame.frame_id:06d}.depth.f32"
        scores_name = f"frame_{frame.frame_id:06d}.scores.f32"
        frame.depth.astype("<f4").tofile(directory / depth_name)
        frame.scores.astype("<f4").tofile(directory / scores_name)
        entries.append(
            {
                "frame_id": frame.frame_id,
                "timestamp": frame.timestamp,
                "valid": bool(frame.valid),
                "depth_file": depth_name,
                "scores_file": scores_name,
                "pose": _pose_to_dict(frame.pose),
            }
        )
    if width is None:
        raise FormatError("cannot write an empty bundle")
    manifest = {
        "format": BUNDLE_FORMAT,
        "version": BUNDLE_VERSION,
        "width": width,
        "height": height,
        "num_classes": num_classes,
        "class_names": list(class_names),
        "intrinsics": _intrinsics_to_dict(intrinsics),
        "frames": entries,
    }
    if scenario is not None:
        manifest["scenario"] = scenario
    with open(directory / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_bundle(directory):
    """Load a frame bundle; returns ``(manifest, [FrameBundle, ...])``."""
    from .pipeline import FrameBundle  # local import to avoid a cycle

    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    except OSError as exc:
        raise FormatError(f"cannot read bundle manifest: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"bundle manifest is not valid JSON: {exc}") from exc
    if manifest.get("format") != BUNDLE_FORMAT or manifest.get("version") != BUNDLE_VERSION:
        raise FormatError("unsupported bundle format or version")
    w, h, k = manifest["width"], manifest["height"], manifest["num_classes"]
    intr = _intrinsics_from_dict(manifest["intrinsics"])
    frames = []
    for entry in manifest["frames"]:
        depth = np.fromfile(directory / entry["depth_file"], dtype="<f4")
        scores = np.fromfile(directory / entry["scores_file"], dtype="<f4")
        if depth.size != w * h:
            raise FormatError(f"{entry['depth_file']}: expected {w * h} values, got {depth.size}")
        if scores.size != w * h * k:
            raise FormatError(
                f"{entry['scores_file']}: expected {w * h * k} values, got {scores.size}"
            )
        frames.append(
            FrameBundle(
                depth=depth.reshape(h, w),
                scores=scores.reshape(h, w, k),
                pose=_pose_from_dict(entry["pose"]),
                intrinsics=intr,
                frame_id=int(entry["frame_id"]),
                timestamp=float(entry["timestamp"]),
                valid=bool(entry.get("valid", True)),
            )
        )
    return manifest, frames


def validate_bundle(directory) -> list:
    """Check a bundle directory against the documented format; returns issues."""
    directory = Path(directory)
    issues = []
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        return [f"missing manifest.json in {directory}"]
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        return [f"manifest.json is not valid JSON: {exc}"]
    if manifest.get("format") != BUNDLE_FORMAT:
        issues.append(f"format is {manifest.get('format')!r}, expected {BUNDLE_FORMAT!r}")
    if manifest.get("version") != BUNDLE_VERSION:
        issues.append(f"version is {manifest.get('version')!r}, expected {BUNDLE_VERSION}")
    for key in ("width", "height", "num_classes", "class_names", "intrinsics", "frames"):
        if key not in manifest:
            issues.append(f"manifest misses key {key!r}")
    if issues:
        return issues
    w, h, k = manifest["width"], manifest["height"], manifest["num_classes"]
    if len(manifest["class_names"]) != k:
        issues.append("class_names length disagrees with num_classes")
    try:
        _intrinsics_from_dict(manifest["intrinsics"])
    except Exception as exc:
        issues.append(f"bad intrinsics: {exc}")
    for entry in manifest["frames"]:
        fid = entry.get("frame_id")
        for key, count in (("depth_file", w * h), ("scores_file", w * h * k)):
            name = entry.get(key)
            path = directory / name if name else None
            if path is None or not path.is_file():
                issues.append(f"frame {fid}: missing {key}")
                continue
            if path.stat().st_size != count * 4:
                issues.append(
                    f"frame {fid}: {name} is {path.stat().st_size} bytes, expected {count * 4}"
                )
        try:
            _pose_from_dict(entry["pose"])
        except Exception as exc:
            issues.append(f"frame {fid}: bad pose: {exc}")
        if not issues and entry.get("valid", True):
            scores = np.fromfile(directory / entry["scores_file"], dtype="<f4").reshape(h, w, k)
            sums = scores.sum(axis=2)
            if np.any(scores < 0) or np.abs(sums - 1.0).max() > 1e-4:
                issues.append(f"frame {fid}: score vectors are not normalized")
    return issues


# -- ground truth ----------------------------------------------------------------


def scenario_hash(world_dict: dict) -> str:
    return hashlib.sha256(_json_bytes(world_dict)).hexdigest()


def save_truth(path, world_dict: dict, class_names, models) -> None:
    """Write the ground-truth sidecar: the world description plus per-class models."""
    doc = {
        "format": TRUTH_FORMAT,
        "version": TRUTH_VERSION,
        "scenario_hash": scenario_hash(world_dict),
        "world": world_dict,
        "class_names": list(class_names),
        "models": [
            {"name": m.class_name, "mu": m.mu, "sigma": m.sigma} for m in models
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_truth(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise FormatError(f"cannot read truth file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"truth file is not valid JSON: {exc}") from exc
    if doc.get("format") != TRUTH_FORMAT or doc.get("version") != TRUTH_VERSION:
        raise FormatError("unsupported ground-truth format or version")
    return doc


# -- per-face estimates -----------------------------------------------------------


def save_estimates(path, estimates, mesh: Mesh, estimator: str, scenario_hash_value: str | None) -> None:
    """Persist per-face mixture weights produced by one estimator."""
    header = {
        "kind": ESTIMATES_KIND,
        "version": 1,
        "estimator": estimator,
        "scenario_hash": scenario_hash_value,
        "side_length_m": mesh.cfg.side_length_m,
        "half_extent_m": mesh.cfg.half_extent_m,
        "num_classes": mesh.cfg.num_classes,
        "center": [float(mesh.center[0]), float(mesh.center[1])],
    }
    write_arrays(
        path,
        header,
        {
            "known": estimates.known.astype(np.uint8),
            "weights": estimates.weights,
        },
    )


def load_estimates(path):
    """Returns ``(header, FaceEstimates)``."""
    from .pipeline import FaceEstimates  # local import to avoid a cycle

    header, arrays = read_arrays(path)
    if header.get("kind") != ESTIMATES_KIND:
        raise FormatError(f"{path}: not an estimates file")
    return header, FaceEstimates(
        weights=arrays["weights"].astype(float),
        known=arrays["known"].astype(bool),
    )
