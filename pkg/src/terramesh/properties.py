"""Class-conditional terrain-property models and the friction-fitting toolchain.

Each terrain class carries a unimodal Gaussian over the friction coefficient.
A face's property estimate is the mixture of these Gaussians weighted by the
face's class predictive.  The fitting side ingests pull-force logs from a
drag-sled style device (mu = F / (m * g)), low-pass filters them, fits three
candidate families and ranks them by Kolmogorov-Smirnov distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy import signal, stats
from scipy.special import ndtr

from .errors import (
    ConfigurationError,
    DegenerateDataError,
    InputError,
    InsufficientDataError,
)
from .semantics import ClassCatalog, class_predictive

GRAVITY = 9.81

MODEL_FILE_MAGIC = "terramesh-friction-models v1"

FIT_FAMILIES = ("gaussian", "lognormal", "weibull")


@dataclass(frozen=True)
class PropertyModel:
    """Per-class Gaussian over a dimensionless terrain property."""

    class_name: str
    mu: float
    sigma: float

    def __post_init__(self):
        if not (self.sigma > 0):
            raise ConfigurationError(f"{self.class_name}: sigma must be positive")
        if not math.isfinite(self.mu):
            raise ConfigurationError(f"{self.class_name}: mu must be finite")


class PropertyMixture:
    """Gaussian mixture over a property; one mode per terrain class."""

    def __init__(self, weights, components):
        self.weights = np.asarray(weights, dtype=float)
        self.components = list(components)
        if self.weights.size != len(self.components):
            raise ConfigurationError("one weight per component required")
        if abs(self.weights.sum() - 1.0) > 1e-9 or np.any(self.weights < 0):
            raise ConfigurationError("weights must be a probability vector")
        self._mus = np.array([c.mu for c in self.components])
        self._sigmas = np.array([c.sigma for c in self.components])

    def mean(self) -> float:
        return float(self.weights @ self._mus)

    def variance(self) -> float:
        second = self.weights @ (self._sigmas**2 + self._mus**2)
        return float(second - self.mean() ** 2)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        z = (x[..., None] - self._mus) / self._sigmas
        dens = np.exp(-0.5 * z * z) / (self._sigmas * math.sqrt(2.0 * math.pi))
        return dens @ self.weights

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        z = (x[..., None] - self._mus) / self._sigmas
        return ndtr(z) @ self.weights


@dataclass
class MixtureStats:
    mean: float
    variance: float
    cdf_at: object


def mixture_stats(mixture: PropertyMixture) -> MixtureStats:
    """Closed-form mean/variance and a CDF evaluator for a mixture."""
    return MixtureStats(mixture.mean(), mixture.variance(), mixture.cdf)


def property_mixture(alpha, models):
    """Per-face property distribution: modes weighted by the class predictive.

    Returns ``None`` (unknown) when alpha carries no observations; such
    faces stay grey rather than pretending a uniform belief.
    """
    alpha = np.asarray(alpha, dtype=float)
    if alpha.size != len(models):
        raise ConfigurationError(
            f"alpha has {alpha.size} classes but {len(models)} models supplied"
        )
    weights = class_predictive(alpha)
    if weights is None:
        return None
    return PropertyMixture(weights, models)


# -- force-log ingestion ------------------------------------------------------


@dataclass
class ForceLog:
    """Timestamped pull-force samples plus the dragged mass."""

    times_s: np.ndarray
    forces_n: np.ndarray
    mass_kg: float
    gravity: float = GRAVITY

    def __post_init__(self):
        self.times_s = np.asarray(self.times_s, dtype=float)
        self.forces_n = np.asarray(self.forces_n, dtype=float)
        if self.times_s.shape != self.forces_n.shape or self.times_s.ndim != 1:
            raise InputError("times and forces must be matching 1-D arrays")
        if not np.all(np.isfinite(self.forces_n)) or not np.all(np.isfinite(self.times_s)):
            raise InputError("force log samples must be finite")
        if not (self.mass_kg > 0):
            raise InputError("device mass must be positive")


def smooth_exponential(x, alpha_coeff):
    """First-order exponential smoothing y_i = a*x_i + (1-a)*y_{i-1}, y_0 = x_0."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return x.copy()
    zi = signal.lfiltic([alpha_coeff], [1.0, -(1.0 - alpha_coeff)], y=[x[0]], x=[x[0]])
    y, _ = signal.lfilter([alpha_coeff], [1.0, -(1.0 - alpha_coeff)], x, zi=zi)
    return y


def friction_from_force(log: ForceLog, cutoff_hz: float | None = 5.0) -> np.ndarray:
    """Friction-coefficient samples: low-pass filtered force over m*g.

    ``cutoff_hz=None`` skips the filter.  The filter is first-order
    exponential smoothing with coefficient dt / (dt + 1/(2*pi*fc)), assuming
    a uniform sample period (the median of the time deltas).
    """
    if log.forces_n.size == 0:
        return np.empty(0)
    forces = log.forces_n
    if cutoff_hz is not None:
        if cutoff_hz <= 0:
            raise InputError("cutoff frequency must be positive")
        if log.times_s.size > 1:
            dt = float(np.median(np.diff(log.times_s)))
            if dt <= 0:
                raise InputError("timestamps must be increasing")
            tau = 1.0 / (2.0 * math.pi * cutoff_hz)
            forces = smooth_exponential(forces, dt / (dt + tau))
    return forces / (log.mass_kg * log.gravity)


# -- distribution fitting -----------------------------------------------------


def ks_statistic(samples, cdf) -> float:
    """Two-sided sup distance between the empirical CDF and a fitted CDF.

    For a continuous CDF the infimum over data is 1/(2n), attained when the
    CDF threads the midpoints of the empirical steps.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max((i / n - f).max(), (f - (i - 1) / n).max()))


@dataclass
class FitSelection:
    best_family: str
    params: dict
    ks: dict
    skipped: dict
    n: int


def fit_and_select(samples, min_samples: int = 30) -> FitSelection:
    """Fit Gaussian / log-normal / Weibull by ML and rank by KS distance.

    Families needing positive support are skipped (and reported) when the
    data contains non-positive values.  The family with the smallest KS
    statistic wins; ties break in the fixed family order.
    """
    x = np.asarray(samples, dtype=float)
    if x.size < min_samples:
        raise InsufficientDataError(f"need at least {min_samples} samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise InputError("samples must be finite")
    if x.std() == 0.0:
        raise DegenerateDataError("samples have zero spread; fit is undefined")

    params: dict = {}
    ks: dict = {}
    skipped: dict = {}

    mu = float(x.mean())
    sd = float(x.std())
    params["gaussian"] = {"mu": mu, "sigma": sd}
    ks["gaussian"] = ks_statistic(x, lambda v: stats.norm.cdf(v, loc=mu, scale=sd))

    if np.all(x > 0):
        logs = np.log(x)
        shape = float(logs.std())
        scale = float(np.exp(logs.mean()))
        if shape == 0.0:
            skipped["lognormal"] = "degenerate log-spread"
        else:
            params["lognormal"] = {"shape": shape, "scale": scale}
            ks["lognormal"] = ks_statistic(
                x, lambda v: stats.lognorm.cdf(v, shape, loc=0.0, scale=scale)
            )
        c, _, w_scale = stats.weibull_min.fit(x, floc=0.0)
        params["weibull"] = {"shape": float(c), "scale": float(w_scale)}
        ks["weibull"] = ks_statistic(
            x, lambda v: stats.weibull_min.cdf(v, c, loc=0.0, scale=w_scale)
        )
    else:
        skipped["lognormal"] = "non-positive samples"
        skipped["weibull"] = "non-positive samples"

    best = min(
        (family for family in FIT_FAMILIES if family in ks),
        key=lambda family: (ks[family], FIT_FAMILIES.index(family)),
    )
    return FitSelection(best_family=best, params=params, ks=ks, skipped=skipped, n=int(x.size))


# -- model file I/O -----------------------------------------------------------


def default_models_path():
    """Path of the friction-model file shipped with the package."""
    return resources.files("terramesh").joinpath("data/friction_models.tsv")


def load_models(path=None):
    """Read a friction-model file: ``(ClassCatalog, [PropertyModel, ...])``.

    The file is tab-separated, one class per line (name, mu, sigma), with a
    versioned magic first line.  Line order defines the class indices.
    """
    if path is None:
        path = default_models_path()
    try:
        if hasattr(path, "read_text"):
            text = path.read_text(encoding="utf-8")
        else:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read model file: {exc}") from exc

    lines = text.splitlines()
    if not lines or lines[0].strip() != MODEL_FILE_MAGIC:
        raise ConfigurationError(
            f"model file must start with {MODEL_FILE_MAGIC!r}"
        )
    models = []
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = raw.split("\t")
        if len(parts) != 3:
            raise ConfigurationError(f"line {lineno}: expected name<TAB>mu<TAB>sigma")
        name = parts[0].strip()
        try:
            mu = float(parts[1])
            sigma = float(parts[2])
        except ValueError as exc:
            raise ConfigurationError(f"line {lineno}: bad number: {exc}") from exc
        try:
            models.append(PropertyModel(name, mu, sigma))
        except ConfigurationError as exc:
            raise ConfigurationError(f"line {lineno}: {exc}") from exc
    if not models:
        raise ConfigurationError("model file contains no classes")
    names = [m.class_name for m in models]
    if len(set(names)) != len(names):
        raise ConfigurationError("duplicate class name in model file")
    return ClassCatalog(tuple(names)), models


def save_models(path, models) -> None:
    """Write a friction-model file (the exact inverse of :func:`load_models`)."""
    lines = [MODEL_FILE_MAGIC, "# class\tmu\tsigma"]
    for m in models:
        lines.append(f"{m.class_name}\t{m.mu!r}\t{m.sigma!r}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_default_models():
    return load_models(default_models_path())
