"""Deterministic synthetic scenes: heightfield + class regions -> frame streams.

A world is an analytic heightfield (flat / ramp / sinusoid patches over a
flat base), a planar class-region map, a camera trajectory and a noise
specification.  Rendering ray-casts the pinhole camera against the
heightfield (grid march plus bisection, certified well below 1e-9), looks up
the true class per pixel, corrupts the class scores through a confusion
model and optionally the depth and the reported pose.  All randomness is
drawn from streams keyed on ``(seed, frame_id)`` in a fixed order, so a
render is reproducible regardless of scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, InputError
from .geometry import CameraIntrinsics, Pose, camera_center, pose_from_camera
from .pipeline import FrameBundle
from .properties import load_default_models, load_models

_DOWN_AXES = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]])

HEIGHT_KINDS = ("flat", "ramp", "sinusoid")
SCORE_MODES = ("hard", "soft", "soft_jitter")


# -- heightfield ---------------------------------------------------------------


@dataclass(frozen=True)
class HeightPatch:
    """One analytic terrain patch; ``region`` is (x0, x1, y0, y1) or None for everywhere.

    Later patches override earlier ones inside their region, so a ``flat``
    patch over a sub-region produces a step at the region border.
    """

    kind: str
    params: dict
    region: tuple | None = None

    def __post_init__(self):
        if self.kind not in HEIGHT_KINDS:
            raise ConfigurationError(f"unknown height patch kind {self.kind!r}")

    def value(self, x, y):
        p = self.params
        if self.kind == "flat":
            return np.full_like(np.asarray(x, dtype=float), p["z"])
        if self.kind == "ramp":
            return p["z0"] + p["gx"] * (x - p["x0"]) + p["gy"] * (y - p["y0"])
        return p["z0"] + p["amp"] * np.sin(
            2.0 * np.pi * (p["fx"] * x + p["fy"] * y) + p.get("phase", 0.0)
        )

    def contains(self, x, y):
        if self.region is None:
            return np.ones_like(np.asarray(x, dtype=float), dtype=bool)
        x0, x1, y0, y1 = self.region
        return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)


@dataclass(frozen=True)
class Heightfield:
    base: float = 0.0
    patches: tuple = ()

    def height(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        z = np.full(np.broadcast(x, y).shape, self.base)
        for patch in self.patches:
            mask = patch.contains(x, y)
            if np.any(mask):
                z = np.where(mask, patch.value(x, y), z)
        return z


# -- class regions ---------------------------------------------------------------


def points_in_polygon(x, y, polygon) -> np.ndarray:
    """Vectorized crossing-number test for a simple polygon (m, 2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    poly = np.asarray(polygon, dtype=float)
    inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
    m = poly.shape[0]
    j = m - 1
    for i in range(m):
        xi, yi = poly[i]
        xj, yj = poly[j]
        crosses = (yi > y) != (yj > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = (xj - xi) * (y - yi) / (yj - yi) + xi
        inside ^= crosses & (x < x_at)
        j = i
    return inside


def rect_polygon(x0, x1, y0, y1) -> np.ndarray:
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)


def polygon_area(polygon) -> float:
    poly = np.asarray(polygon, dtype=float)
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


@dataclass(frozen=True)
class ClassRegion:
    polygon: np.ndarray
    class_index: int


@dataclass(frozen=True)
class ClassMap:
    """First-listed region wins; everything else is the default class."""

    regions: tuple = ()
    default_class: int = 0

    def classify(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.full(np.broadcast(x, y).shape, self.default_class, dtype=np.int64)
        assigned = np.zeros_like(out, dtype=bool)
        for region in self.regions:
            fresh = points_in_polygon(x, y, region.polygon) & ~assigned
            out[fresh] = region.class_index
            assigned |= fresh
        return out


# -- noise ------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseSpec:
    """Sensor corruption: depth sigma(z) = a + b z + c z^2, class confusion, pose jitter.

    ``score_mode``: ``hard`` samples a one-hot class per pixel from the
    confusion row of the true class; ``soft`` emits the confusion row itself;
    ``soft_jitter`` draws the scores from a Dirichlet centered on that row
    with concentration ``jitter_kappa``.
    """

    depth_abc: tuple = (0.0, 0.0, 0.0)
    confusion: np.ndarray | None = None
    score_mode: str = "hard"
    jitter_kappa: float = 0.0
    pose_rot_cov: np.ndarray | None = None

    def __post_init__(self):
        if self.score_mode not in SCORE_MODES:
            raise ConfigurationError(f"unknown score mode {self.score_mode!r}")
        if self.confusion is not None:
            conf = np.asarray(self.confusion, dtype=float)
            if conf.ndim != 2 or conf.shape[0] != conf.shape[1]:
                raise ConfigurationError("confusion matrix must be square")
            if np.any(conf < 0) or np.abs(conf.sum(axis=1) - 1.0).max() > 1e-9:
                raise ConfigurationError("confusion rows must be probability vectors")
            object.__setattr__(self, "confusion", conf)
        if self.pose_rot_cov is not None:
            object.__setattr__(
                self, "pose_rot_cov", np.asarray(self.pose_rot_cov, dtype=float).reshape(3, 3)
            )

    def depth_sigma(self, depth):
        a, b, c = self.depth_abc
        depth = np.asarray(depth, dtype=float)
        return a + b * depth + c * depth * depth


def confusion_matrix(k: int, diagonal: float, partners: dict | None = None, partner_mass: float = 0.0) -> np.ndarray:
    """Row-stochastic confusion: ``diagonal`` mass on the truth, an optional
    extra mass on a designated confusable partner, the rest spread evenly."""
    if not (0.0 < diagonal <= 1.0):
        raise ConfigurationError("diagonal mass must be in (0, 1]")
    partners = partners or {}
    conf = np.zeros((k, k))
    for i in range(k):
        conf[i, i] = diagonal
        rest = 1.0 - diagonal
        partner = partners.get(i)
        if partner is not None and partner != i:
            conf[i, partner] += partner_mass
            rest -= partner_mass
        others = [j for j in range(k) if j != i and j != partners.get(i)]
        if others:
            conf[i, others] += rest / len(others)
    conf /= conf.sum(axis=1, keepdims=True)
    return conf


# -- world spec ---------------------------------------------------------------------


@dataclass(frozen=True)
class WorldSpec:
    """Complete synthetic-scene description; hashable to JSON for provenance."""

    name: str
    heightfield: Heightfield
    class_map: ClassMap
    trajectory: tuple
    intrinsics: CameraIntrinsics
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    seed: int = 0
    num_classes: int = 10
    max_range_m: float = 20.0
    march_steps: int = 256

    def with_seed(self, seed: int) -> "WorldSpec":
        return replace(self, seed=int(seed))


@dataclass
class GroundTruth:
    """Exact per-location scene truth plus the per-class property models."""

    world: WorldSpec
    class_names: tuple
    models: list

    def true_class_at(self, x, y) -> np.ndarray:
        return self.world.class_map.classify(x, y)

    def true_height_at(self, x, y) -> np.ndarray:
        return self.world.heightfield.height(x, y)

    def class_mus(self) -> np.ndarray:
        return np.array([m.mu for m in self.models])


# -- rendering ---------------------------------------------------------------------


def _surface_gap(heightfield, origin, dirs, d):
    pts = origin[None, :] + d[:, None] * dirs
    return pts[:, 2] - heightfield.height(pts[:, 0], pts[:, 1])


def _raycast(heightfield, origin, dirs, d_max, steps, d_min=1e-3, bisect_iters=48):
    """First surface crossing along each ray, parameterized by sensor depth.

    Rays are marched on a uniform grid to bracket the first sign change of
    camera-height-above-terrain, then bisected; the bracket is one march
    step wide, so terrain features narrower than that can be stepped over.
    Returns NaN where no crossing exists in (d_min, d_max].
    """
    n = dirs.shape[0]
    depth = np.full(n, np.nan)
    g_prev = _surface_gap(heightfield, origin, dirs, np.full(n, d_min))
    active = g_prev > 0.0
    d_prev = np.full(n, d_min)
    lo = np.full(n, np.nan)
    hi = np.full(n, np.nan)
    for d in np.linspace(d_min, d_max, steps + 1)[1:]:
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        g = _surface_gap(heightfield, origin, dirs[idx], np.full(idx.size, d))
        crossed = g <= 0.0
        hit = idx[crossed]
        lo[hit] = d_prev[hit]
        hi[hit] = d
        active[hit] = False
        d_prev[idx] = d
        g_prev[idx] = g

    bracketed = np.nonzero(np.isfinite(lo))[0]
    if bracketed.size:
        blo = lo[bracketed]
        bhi = hi[bracketed]
        bdirs = dirs[bracketed]
        for _ in range(bisect_iters):
            mid = 0.5 * (blo + bhi)
            g = _surface_gap(heightfield, origin, bdirs, mid)
            above = g > 0.0
            blo = np.where(above, mid, blo)
            bhi = np.where(above, bhi, mid)
        depth[bracketed] = 0.5 * (blo + bhi)
    return depth


def _pixel_rays(intrinsics: CameraIntrinsics):
    u = np.arange(intrinsics.width)
    v = np.arange(intrinsics.height)
    uu, vv = np.meshgrid(u, v)
    rays = np.column_stack(
        [
            ((uu - intrinsics.cx) / intrinsics.fx).ravel(),
            ((vv - intrinsics.cy) / intrinsics.fy).ravel(),
            np.ones(uu.size),
        ]
    )
    return rays


def _rodrigues(delta):
    theta = float(np.linalg.norm(delta))
    if theta < 1e-15:
        return np.eye(3)
    k = np.asarray(delta, dtype=float) / theta
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(theta) * kx + (1.0 - np.cos(theta)) * (kx @ kx)


def render_frame(spec: WorldSpec, frame_idx: int) -> FrameBundle:
    """Render one trajectory pose into a frame bundle (float64 arrays)."""
    pose_true = spec.trajectory[frame_idx]
    intr = spec.intrinsics
    k = spec.num_classes
    h, w = intr.height, intr.width
    timestamp = 0.1 * frame_idx

    origin = camera_center(pose_true)
    ground = float(spec.heightfield.height(origin[0], origin[1]))
    if origin[2] <= ground:
        # camera under the surface: no meaningful first hit exists
        return FrameBundle(
            depth=np.full((h, w), np.nan),
            scores=np.full((h, w, k), 1.0 / k),
            pose=pose_true,
            intrinsics=intr,
            frame_id=frame_idx,
            timestamp=timestamp,
            valid=False,
        )

    # sensor-z parameterization: ray point = origin + depth * (R^T ray)
    dirs = _pixel_rays(intr) @ pose_true.rotation
    depth = _raycast(spec.heightfield, origin, dirs, spec.max_range_m, spec.march_steps)

    hit = np.isfinite(depth)
    pts = origin[None, :] + depth[:, None] * dirs
    true_class = np.zeros(depth.size, dtype=np.int64)
    true_class[hit] = spec.class_map.classify(pts[hit, 0], pts[hit, 1])

    rng = np.random.default_rng(np.random.SeedSequence((spec.seed, frame_idx)))
    noise = spec.noise
    conf = noise.confusion if noise.confusion is not None else np.eye(k)
    if conf.shape[0] != k:
        raise InputError("confusion matrix size disagrees with num_classes")

    scores = np.zeros((depth.size, k))
    if noise.score_mode == "hard":
        cdf = np.cumsum(conf, axis=1)[true_class]
        r = rng.random(depth.size)
        sampled = np.minimum((cdf <= r[:, None]).sum(axis=1), k - 1)
        scores[np.arange(depth.size), sampled] = 1.0
    elif noise.score_mode == "soft":
        scores = conf[true_class]
    else:
        gammas = rng.gamma(shape=np.maximum(noise.jitter_kappa * conf[true_class], 0.0))
        totals = gammas.sum(axis=1, keepdims=True)
        totals[totals == 0.0] = 1.0
        scores = gammas / totals
    scores[~hit] = 1.0 / k

    sigma = noise.depth_sigma(depth[hit])
    if np.any(sigma > 0):
        noisy = depth.copy()
        noisy[hit] = depth[hit] + rng.standard_normal(hit.sum()) * sigma
        depth = noisy

    reported = pose_true
    if noise.pose_rot_cov is not None and np.any(noise.pose_rot_cov):
        delta = rng.multivariate_normal(np.zeros(3), noise.pose_rot_cov, method="cholesky")
        reported = Pose(
            rotation=_rodrigues(delta) @ pose_true.rotation,
            translation=pose_true.translation,
            rotation_cov=noise.pose_rot_cov,
        )
    elif noise.pose_rot_cov is not None:
        reported = Pose(
            rotation=pose_true.rotation,
            translation=pose_true.translation,
            rotation_cov=noise.pose_rot_cov,
        )

    return FrameBundle(
        depth=depth.reshape(h, w),
        scores=scores.reshape(h, w, k),
        pose=reported,
        intrinsics=intr,
        frame_id=frame_idx,
        timestamp=timestamp,
    )


def render_frames(spec: WorldSpec, models_path=None, limit: int | None = None):
    """Render the whole trajectory: ``([FrameBundle, ...], GroundTruth)``."""
    catalog, models = load_models(models_path) if models_path else load_default_models()
    if catalog.k != spec.num_classes:
        raise InputError("model catalog size disagrees with the world's class count")
    count = len(spec.trajectory) if limit is None else min(limit, len(spec.trajectory))
    frames = [render_frame(spec, i) for i in range(count)]
    return frames, GroundTruth(world=spec, class_names=catalog.names, models=models)


# -- scenario library ------------------------------------------------------------


def sweep_trajectory(rows, x_span, frames_per_row, altitude) -> tuple:
    """Straight-down serpentine sweep: one pass per row, alternating direction."""
    poses = []
    for i, y in enumerate(rows):
        xs = np.linspace(x_span[0], x_span[1], frames_per_row)
        if i % 2 == 1:
            xs = xs[::-1]
        for x in xs:
            poses.append(pose_from_camera(np.array([x, y, altitude]), _DOWN_AXES))
    return tuple(poses)


def _default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=60.0, fy=60.0, cx=39.5, cy=29.5, width=80, height=60)


# confusable pairs with well-separated friction means, so segmentation
# mistakes matter for property estimates
_CONFUSION_PARTNERS = {0: 8, 8: 0, 1: 9, 9: 1, 5: 7, 7: 5, 6: 4, 4: 6, 2: 3, 3: 2}


def noisy_variant(spec: WorldSpec, diagonal: float = 0.8) -> WorldSpec:
    k = spec.num_classes
    noise = NoiseSpec(
        depth_abc=(0.001, 0.0, 0.0019),
        confusion=confusion_matrix(k, diagonal, _CONFUSION_PARTNERS, partner_mass=0.14),
        score_mode="hard",
        pose_rot_cov=np.eye(3) * (5e-4) ** 2,
    )
    return replace(spec, name=spec.name + "-noisy", noise=noise)


def scenario_library() -> dict:
    """Named worlds covering the regimes the estimators differ on."""
    catalog, _ = load_default_models()
    idx = {name: i for i, name in enumerate(catalog.names)}
    k = catalog.k
    intr = _default_intrinsics()

    flat = WorldSpec(
        name="flat-single-class",
        heightfield=Heightfield(base=0.2),
        class_map=ClassMap(default_class=idx["grass"]),
        trajectory=sweep_trajectory([-1.0, 1.0], (-2.0, 2.0), 10, 4.0),
        intrinsics=intr,
        num_classes=k,
        march_steps=128,
    )

    split = WorldSpec(
        name="two-class-split",
        heightfield=Heightfield(base=0.0),
        class_map=ClassMap(
            regions=(
                ClassRegion(rect_polygon(-2.5, 0.0, -2.5, 2.5), idx["ice"]),
            ),
            default_class=idx["concrete"],
        ),
        trajectory=sweep_trajectory([-1.2, 1.2], (-2.2, 2.2), 10, 4.0),
        intrinsics=intr,
        num_classes=k,
        march_steps=128,
    )

    ramp = WorldSpec(
        name="ramp",
        heightfield=Heightfield(
            base=0.0,
            patches=(
                HeightPatch(
                    kind="ramp",
                    params={"z0": 0.0, "gx": 0.1, "gy": 0.0, "x0": 0.0, "y0": 0.0},
                    region=(0.0, 10.0, -10.0, 10.0),
                ),
            ),
        ),
        class_map=ClassMap(default_class=idx["concrete"]),
        trajectory=sweep_trajectory([-1.2, 1.2], (-2.2, 2.2), 10, 4.0),
        intrinsics=intr,
        num_classes=k,
        march_steps=256,
    )

    imbalanced = WorldSpec(
        name="imbalanced",
        heightfield=Heightfield(base=0.0),
        class_map=ClassMap(
            regions=(
                ClassRegion(rect_polygon(-3.0, -1.0, 0.0, 3.0), idx["grass"]),
                ClassRegion(rect_polygon(1.0, 3.0, -3.0, -1.0), idx["rubber"]),
                ClassRegion(rect_polygon(-3.0, -1.5, -3.0, -1.0), idx["rug"]),
                ClassRegion(rect_polygon(-1.0, 1.0, -1.0, 1.0), idx["ice"]),
                ClassRegion(rect_polygon(1.0, 3.0, 1.0, 2.5), idx["snow"]),
                ClassRegion(rect_polygon(-1.0, 0.5, -3.0, -1.5), idx["wood"]),
            ),
            default_class=idx["concrete"],
        ),
        trajectory=sweep_trajectory([-1.4, 1.4], (-2.6, 2.6), 25, 4.0),
        intrinsics=intr,
        num_classes=k,
        march_steps=128,
    )

    library = {}
    for spec in (flat, split, ramp, imbalanced):
        library[spec.name] = spec
        library[spec.name + "-noisy"] = noisy_variant(spec)
    return library


# -- serialization ---------------------------------------------------------------


def world_to_dict(spec: WorldSpec) -> dict:
    def floats(arr):
        return [float(v) for v in np.asarray(arr, dtype=float).reshape(-1)]

    return {
        "name": spec.name,
        "seed": spec.seed,
        "num_classes": spec.num_classes,
        "max_range_m": spec.max_range_m,
        "march_steps": spec.march_steps,
        "heightfield": {
            "base": spec.heightfield.base,
            "patches": [
                {
                    "kind": p.kind,
                    "params": {key: float(v) for key, v in sorted(p.params.items())},
                    "region": None if p.region is None else [float(v) for v in p.region],
                }
                for p in spec.heightfield.patches
            ],
        },
        "class_map": {
            "default_class": spec.class_map.default_class,
            "regions": [
                {
                    "class_index": r.class_index,
                    "polygon": [[float(a), float(b)] for a, b in np.asarray(r.polygon)],
                }
                for r in spec.class_map.regions
            ],
        },
        "intrinsics": {
            "fx": spec.intrinsics.fx,
            "fy": spec.intrinsics.fy,
            "cx": spec.intrinsics.cx,
            "cy": spec.intrinsics.cy,
            "width": spec.intrinsics.width,
            "height": spec.intrinsics.height,
        },
        "trajectory": [
            {
                "rotation": floats(p.rotation),
                "translation": floats(p.translation),
                "rotation_cov": floats(p.rotation_cov),
            }
            for p in spec.trajectory
        ],
        "noise": {
            "depth_abc": [float(v) for v in spec.noise.depth_abc],
            "confusion": None
            if spec.noise.confusion is None
            else [floats(row) for row in spec.noise.confusion],
            "score_mode": spec.noise.score_mode,
            "jitter_kappa": spec.noise.jitter_kappa,
            "pose_rot_cov": None
            if spec.noise.pose_rot_cov is None
            else floats(spec.noise.pose_rot_cov),
        },
    }


def world_from_dict(doc: dict) -> WorldSpec:
    hf = Heightfield(
        base=float(doc["heightfield"]["base"]),
        patches=tuple(
            HeightPatch(
                kind=p["kind"],
                params=dict(p["params"]),
                region=None if p["region"] is None else tuple(p["region"]),
            )
            for p in doc["heightfield"]["patches"]
        ),
    )
    cmap = ClassMap(
        regions=tuple(
            ClassRegion(np.array(r["polygon"], dtype=float), int(r["class_index"]))
            for r in doc["class_map"]["regions"]
        ),
        default_class=int(doc["class_map"]["default_class"]),
    )
    intr = CameraIntrinsics(
        fx=doc["intrinsics"]["fx"],
        fy=doc["intrinsics"]["fy"],
        cx=doc["intrinsics"]["cx"],
        cy=doc["intrinsics"]["cy"],
        width=int(doc["intrinsics"]["width"]),
        height=int(doc["intrinsics"]["height"]),
    )
    trajectory = tuple(
        Pose(
            rotation=np.array(p["rotation"], dtype=float).reshape(3, 3),
            translation=np.array(p["translation"], dtype=float),
            rotation_cov=np.array(p["rotation_cov"], dtype=float).reshape(3, 3),
        )
        for p in doc["trajectory"]
    )
    noise_doc = doc["noise"]
    noise = NoiseSpec(
        depth_abc=tuple(noise_doc["depth_abc"]),
        confusion=None
        if noise_doc["confusion"] is None
        else np.array(noise_doc["confusion"], dtype=float),
        score_mode=noise_doc["score_mode"],
        jitter_kappa=float(noise_doc["jitter_kappa"]),
        pose_rot_cov=None
        if noise_doc["pose_rot_cov"] is None
        else np.array(noise_doc["pose_rot_cov"], dtype=float).reshape(3, 3),
    )
    return WorldSpec(
        name=doc["name"],
        heightfield=hf,
        class_map=cmap,
        trajectory=trajectory,
        intrinsics=intr,
        noise=noise,
        seed=int(doc["seed"]),
        num_classes=int(doc["num_classes"]),
        max_range_m=float(doc["max_range_m"]),
        march_steps=int(doc["march_steps"]),
    )
