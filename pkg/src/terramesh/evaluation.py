"""Quantitative evaluation: KL to ground truth, precision-recall, accuracy, timing.

KL divergences between property mixtures have no closed form, so they are
computed by fixed-grid trapezoidal quadrature (4096 uniform nodes on
[-0.5, 1.5]) with a hard density floor; this is deterministic and
reproducible across runs, unlike Monte-Carlo estimates.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .errors import EvaluationError
from .pipeline import FaceEstimates

KL_GRID_LO = -0.5
KL_GRID_HI = 1.5
KL_GRID_NODES = 4096
DENSITY_FLOOR = 1e-300
# a density is "present" on the grid above this level; used only to detect
# estimates with no mass over the truth's support
SUPPORT_LEVEL = 1e-12

LOW_FRICTION_THRESHOLD = 0.5


def _grid():
    return np.linspace(KL_GRID_LO, KL_GRID_HI, KL_GRID_NODES)


def _component_pdfs(models, grid) -> np.ndarray:
    mus = np.array([m.mu for m in models])
    sigmas = np.array([m.sigma for m in models])
    z = (grid[None, :] - mus[:, None]) / sigmas[:, None]
    return np.exp(-0.5 * z * z) / (sigmas[:, None] * math.sqrt(2.0 * math.pi))


def _kl_on_grid(p_dens, q_dens, grid) -> np.ndarray:
    p = np.maximum(p_dens, DENSITY_FLOOR)
    q = np.maximum(q_dens, DENSITY_FLOOR)
    integrand = p * (np.log(p) - np.log(q))
    kl = np.trapezoid(integrand, grid, axis=-1)
    no_mass = np.any((p_dens > SUPPORT_LEVEL) & (q_dens <= DENSITY_FLOOR), axis=-1)
    kl = np.where(no_mass, np.inf, kl)
    # quadrature may dip a hair negative for identical inputs
    if np.any(kl[np.isfinite(kl)] < -1e-6):
        raise EvaluationError("KL quadrature produced a significantly negative value")
    return np.maximum(kl, 0.0)


def kl_mixture(p_true, q_est) -> float:
    """KL(p || q) between two property mixtures by fixed-grid quadrature."""
    grid = _grid()
    return float(_kl_on_grid(p_true.pdf(grid), q_est.pdf(grid), grid))


def gaussian_kl(mu1, s1, mu2, s2) -> float:
    """Closed-form KL between two univariate Gaussians (quadrature oracle)."""
    return math.log(s2 / s1) + (s1 * s1 + (mu1 - mu2) ** 2) / (2.0 * s2 * s2) - 0.5


def kl_per_face(estimates: FaceEstimates, truth_classes, models):
    """Per-face KL(truth || estimate); NaN where the estimate is unknown."""
    truth_classes = np.asarray(truth_classes)
    grid = _grid()
    comp = _component_pdfs(models, grid)
    out = np.full(truth_classes.size, np.nan)
    known = estimates.known
    if np.any(known):
        q = estimates.weights[known] @ comp
        p = comp[truth_classes[known]]
        out[known] = _kl_on_grid(p, q, grid)
    return out


def kl_summary(estimates: FaceEstimates, truth_classes, models):
    """Mean and median KL over faces with a known estimate."""
    per_face = kl_per_face(estimates, truth_classes, models)
    vals = per_face[~np.isnan(per_face)]
    if vals.size == 0:
        raise EvaluationError("no faces carry a known estimate")
    return float(np.mean(vals)), float(np.median(vals)), per_face


def low_friction_scores(estimates: FaceEstimates, models) -> np.ndarray:
    """Detector statistic for "low friction": mixture CDF mass at the threshold."""
    mus = np.array([m.mu for m in models])
    sigmas = np.array([m.sigma for m in models])
    phi = ndtr((LOW_FRICTION_THRESHOLD - mus) / sigmas)
    return estimates.weights @ phi


@dataclass
class PRResult:
    thresholds: np.ndarray
    recall: np.ndarray
    precision: np.ndarray
    average_precision: float
    positives: int
    base_rate: float


def pr_curve(estimates: FaceEstimates, truth_classes, models, positive: str = "low", threshold_sweep=None) -> PRResult:
    """Precision-recall for low/high-friction classification over faces.

    A face's true label derives from its true class mean; the detector score
    is the estimated probability mass on the positive side of the threshold.
    Faces without an estimate are never predicted positive but still count
    in the recall denominator (missed positives).  By default the decision
    threshold sweeps every distinct score in [0, 1] (the exact curve); pass
    ``threshold_sweep`` for a fixed grid instead.
    """
    truth_classes = np.asarray(truth_classes)
    if truth_classes.size == 0:
        raise EvaluationError("empty face set")
    mus = np.array([m.mu for m in models])
    true_low = mus[truth_classes] <= LOW_FRICTION_THRESHOLD
    if positive == "low":
        is_positive = true_low
        scores_all = low_friction_scores(estimates, models)
    elif positive == "high":
        is_positive = ~true_low
        scores_all = 1.0 - low_friction_scores(estimates, models)
    else:
        raise EvaluationError(f"unknown positive class {positive!r}")

    total_pos = int(is_positive.sum())
    if total_pos == 0:
        raise EvaluationError(f"no faces of positive class {positive!r}")

    known = estimates.known
    scores = scores_all[known]
    positives = is_positive[known]
    order = np.argsort(-scores, kind="stable")
    scores = scores[order]
    positives = positives[order]

    if threshold_sweep is None:
        # one PR point per distinct score value (predict positive at score >= t)
        boundaries = np.nonzero(np.diff(scores))[0]
        idx = np.append(boundaries, scores.size - 1) if scores.size else np.array([], dtype=int)
        thresholds = scores[idx]
    else:
        thresholds = np.sort(np.asarray(threshold_sweep, dtype=float))[::-1]
        idx = np.searchsorted(-scores, -thresholds, side="right") - 1
        keep = idx >= 0
        idx = idx[keep]
        thresholds = thresholds[keep]
    tp = np.cumsum(positives)[idx] if idx.size else np.array([], dtype=float)
    predicted = idx + 1
    recall = tp / total_pos
    precision = tp / np.maximum(predicted, 1)

    # anchor the curve at zero recall with the earliest precision
    r = np.concatenate([[0.0], recall])
    p = np.concatenate([[precision[0] if precision.size else 1.0], precision])
    ap = float(np.sum(np.diff(r) * 0.5 * (p[1:] + p[:-1])))
    return PRResult(
        thresholds=thresholds,
        recall=recall,
        precision=precision,
        average_precision=ap,
        positives=total_pos,
        base_rate=float(is_positive.mean()),
    )


def accuracy(estimates: FaceEstimates, truth_classes, models) -> float:
    """Fraction of faces whose low/high call at threshold 0.5 matches truth.

    Unknown faces count as incorrect.
    """
    truth_classes = np.asarray(truth_classes)
    if truth_classes.size == 0:
        raise EvaluationError("empty face set")
    mus = np.array([m.mu for m in models])
    true_low = mus[truth_classes] <= LOW_FRICTION_THRESHOLD
    scores = low_friction_scores(estimates, models)
    predicted_low = scores >= 0.5
    correct = estimates.known & (predicted_low == true_low)
    return float(correct.sum() / truth_classes.size)


# -- timing benchmark -------------------------------------------------------------


@dataclass
class BenchRow:
    side_length_m: float
    half_extent_m: float
    num_faces: int
    num_points: int
    trials: int
    stage: str
    mean_s: float
    std_s: float


def bench_frame(half_extent_m: float, image_size=(424, 240), altitude: float = 1.3):
    """One noiseless frame of a flat scene whose footprint covers the window.

    The camera is pitched off vertical so pixel rows never align exactly
    with the mesh lattice (an axis-aligned straight-down view is a
    degenerate geometry no real trajectory produces).
    """
    from .geometry import CameraIntrinsics, pose_from_camera
    from .properties import load_default_models
    from .sim import ClassMap, Heightfield, WorldSpec, render_frame

    catalog, _ = load_default_models()
    w, h = image_size
    pitch = math.radians(12.0)
    rx = np.array(
        [
            [1.0, 0.0, 0.0],
            [0.0, math.cos(pitch), -math.sin(pitch)],
            [0.0, math.sin(pitch), math.cos(pitch)],
        ]
    )
    down = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])
    center = np.array([0.0137, -altitude * math.tan(pitch), altitude])
    pose = pose_from_camera(center, rx @ down)
    fx = 0.92 * altitude * w / (2.0 * half_extent_m)
    fy = 0.92 * altitude * h / (2.0 * half_extent_m)
    intr = CameraIntrinsics(fx=fx, fy=fy, cx=(w - 1) / 2.0, cy=(h - 1) / 2.0, width=w, height=h)
    spec = WorldSpec(
        name="bench-flat",
        heightfield=Heightfield(base=0.0),
        class_map=ClassMap(default_class=0),
        trajectory=(pose,),
        intrinsics=intr,
        num_classes=catalog.k,
        max_range_m=6.0 * altitude,
        march_steps=96,
    )
    return render_frame(spec, 0)


def bench_update(
    side_lengths,
    half_extent_m: float = 0.48,
    image_size=(424, 240),
    trials: int = 100,
    warmup: int = 3,
) -> list:
    """Time the non-projection update stages across mesh resolutions.

    Replays one rendered frame ``trials`` times per mesh configuration on a
    warmed-up process.  Trials are interleaved round-robin across
    configurations so slow load drift hits every configuration equally.
    """
    from .mesh import MeshConfig, init_mesh
    from .pipeline import Mapper, PipelineConfig

    frame = bench_frame(half_extent_m, image_size)
    mappers = []
    for side in side_lengths:
        cfg = MeshConfig(side_length_m=side, half_extent_m=half_extent_m, num_classes=frame.scores.shape[2])
        mappers.append(Mapper(init_mesh(cfg), PipelineConfig()))
    for mapper in mappers:
        for _ in range(warmup):
            mapper.process(frame)
        mapper.timings.clear()
    for _ in range(trials):
        for mapper in mappers:
            mapper.process(frame)

    valid = int((np.isfinite(frame.depth) & (np.asarray(frame.depth) > 0)).sum())
    rows = []
    for side, mapper in zip(side_lengths, mappers):
        timings = mapper.timings
        stages = {
            "project": [t.project for t in timings],
            "assign": [t.assign for t in timings],
            "elevation": [t.elevation for t in timings],
            "semantics": [t.semantics for t in timings],
            "update": [t.update for t in timings],
            "total": [t.total for t in timings],
        }
        for stage, values in stages.items():
            arr = np.asarray(values)
            rows.append(
                BenchRow(
                    side_length_m=side,
                    half_extent_m=half_extent_m,
                    num_faces=mapper.mesh.num_faces,
                    num_points=valid,
                    trials=trials,
                    stage=stage,
                    mean_s=float(arr.mean()),
                    std_s=float(arr.std()),
                )
            )
    return rows


def write_bench_csv(path, rows) -> None:
    """Plot-ready CSV: one row per (mesh configuration, pipeline stage)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "side_length_m",
                "half_extent_m",
                "num_faces",
                "num_points",
                "trials",
                "stage",
                "mean_s",
                "std_s",
            ]
        )
        for r in rows:
            writer.writerow(
                [
                    repr(r.side_length_m),
                    repr(r.half_extent_m),
                    r.num_faces,
                    r.num_points,
                    r.trials,
                    r.stage,
                    repr(r.mean_s),
                    repr(r.std_s),
                ]
            )


# -- report assembly ---------------------------------------------------------------


@dataclass
class EstimatorReport:
    estimator: str
    kl_mean: float
    kl_median: float
    ap_low: float
    ap_high: float
    accuracy: float
    faces_known: int
    faces_total: int
    pr_low: PRResult = field(repr=False, default=None)
    pr_high: PRResult = field(repr=False, default=None)


def evaluate_estimator(name: str, estimates: FaceEstimates, truth_classes, models) -> EstimatorReport:
    kl_mean, kl_median, _ = kl_summary(estimates, truth_classes, models)
    pr_low = pr_curve(estimates, truth_classes, models, positive="low")
    pr_high = pr_curve(estimates, truth_classes, models, positive="high")
    return EstimatorReport(
        estimator=name,
        kl_mean=kl_mean,
        kl_median=kl_median,
        ap_low=pr_low.average_precision,
        ap_high=pr_high.average_precision,
        accuracy=accuracy(estimates, truth_classes, models),
        faces_known=int(estimates.known.sum()),
        faces_total=int(np.asarray(truth_classes).size),
        pr_low=pr_low,
        pr_high=pr_high,
    )


def write_summary_csv(path, reports) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "estimator",
                "kl_mean",
                "kl_median",
                "ap_low",
                "ap_high",
                "accuracy",
                "faces_known",
                "faces_total",
            ]
        )
        for r in reports:
            writer.writerow(
                [
                    r.estimator,
                    repr(r.kl_mean),
                    repr(r.kl_median),
                    repr(r.ap_low),
                    repr(r.ap_high),
                    repr(r.accuracy),
                    r.faces_known,
                    r.faces_total,
                ]
            )


def write_pr_csv(path, pr: PRResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "recall", "precision"])
        for t, r, p in zip(pr.thresholds, pr.recall, pr.precision):
            writer.writerow([repr(float(t)), repr(float(r)), repr(float(p))])
