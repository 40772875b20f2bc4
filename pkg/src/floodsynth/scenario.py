"""Artificial disaster scenario generation.

A logistic model over terrain features scores every cell with an
initiation probability; counter-based pseudo-random draws turn the
probability surface into concrete initiation points, and each point gets
a triangular supply hydrograph. Everything is deterministic under a
64-bit seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .grid import Raster, TerrainFeatures
from .simulator import SupplySpec

FEATURE_NAMES = ("slope", "log_accumulation", "plan_curvature", "tangential_curvature")


@dataclass
class LogisticModel:
    """Initiation-probability model over the four terrain features.

    Features are standardized with the stored means/stds; flow
    accumulation enters as log(1 + a) before standardization.
    """

    weights: np.ndarray
    bias: float
    feature_means: np.ndarray
    feature_stds: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.feature_means = np.asarray(self.feature_means, dtype=np.float64)
        self.feature_stds = np.asarray(self.feature_stds, dtype=np.float64)
        if not np.all(np.isfinite(self.weights)) or not np.isfinite(self.bias):
            raise ValueError("model parameters must be finite")
        if np.any(self.feature_stds <= 0):
            raise ValueError("feature stds must be positive")

    def to_dict(self) -> dict:
        return {
            "weights": self.weights.tolist(),
            "bias": float(self.bias),
            "feature_means": self.feature_means.tolist(),
            "feature_stds": self.feature_stds.tolist(),
            "features": list(FEATURE_NAMES),
        }

    @staticmethod
    def from_dict(d: dict) -> "LogisticModel":
        return LogisticModel(
            weights=np.array(d["weights"], dtype=float),
            bias=float(d["bias"]),
            feature_means=np.array(d["feature_means"], dtype=float),
            feature_stds=np.array(d["feature_stds"], dtype=float),
        )


@dataclass
class HydrographTemplate:
    """Triangular supply hydrograph attached to every initiation point."""

    peak_discharge: float = 5.0      # m^3/s
    rise_time: float = 120.0         # s to the peak
    duration: float = 600.0          # s back to zero
    concentration: float = 0.3       # supplied sediment concentration

    def knots(self) -> list[tuple[float, float, float]]:
        c = self.concentration
        return [(0.0, 0.0, c), (self.rise_time, self.peak_discharge, c),
                (self.duration, 0.0, c)]


@dataclass
class Scenario:
    """One sampled disaster case: seed, points, supplies, fluidization."""

    seed: int
    gamma: float
    points: list[tuple[int, int]]
    supplies: list[SupplySpec]
    template: HydrographTemplate = field(default_factory=HydrographTemplate)

    def to_json(self) -> str:
        return json.dumps(
            {
                "seed": int(self.seed),
                "gamma": float(self.gamma),
                "points": [[int(r), int(c)] for r, c in self.points],
                "hydrograph_template": {
                    "peak_discharge": self.template.peak_discharge,
                    "rise_time": self.template.rise_time,
                    "duration": self.template.duration,
                    "concentration": self.template.concentration,
                },
            },
            indent=2,
        )

    @staticmethod
    def from_json(text: str) -> "Scenario":
        d = json.loads(text)
        tpl = HydrographTemplate(**d["hydrograph_template"])
        points = [tuple(p) for p in d["points"]]
        return build_scenario(points, d["gamma"], tpl, seed=d["seed"])


def feature_matrix(features: TerrainFeatures) -> tuple[np.ndarray, np.ndarray]:
    """(n_cells, 4) raw feature matrix and validity mask (flattened).

    Accumulation is log(1 + a); cells with any nodata feature are invalid.
    """
    grids = [
        features.slope,
        features.flow_accumulation,
        features.plan_curvature,
        features.tangential_curvature,
    ]
    valid = np.ones(grids[0].shape, dtype=bool)
    cols = []
    for k, g in enumerate(grids):
        vals = g.values.astype(np.float64).copy()
        valid &= g.valid_mask()
        if k == 1:
            vals = np.log1p(np.maximum(vals, 0.0))
        cols.append(vals.ravel())
    return np.stack(cols, axis=1), valid.ravel()


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def fit_logistic(features: TerrainFeatures, labels, max_iter: int = 100_000,
                 grad_tol: float = 1e-6, loss_history: list | None = None) -> LogisticModel:
    """Fit the initiation model by full-batch gradient descent.

    Minimizes mean cross-entropy on standardized features until the
    gradient norm drops below grad_tol or the iteration cap. The step
    size is halved whenever a step would increase the loss, so the loss
    is non-increasing from iteration to iteration (appended per iteration
    to loss_history when given).
    """
    X_raw, valid = feature_matrix(features)
    y = np.asarray(labels.values, dtype=np.float64).ravel()
    X_raw = X_raw[valid]
    y = y[valid]
    if y.min() == y.max():
        raise ValueError("labels must contain both classes")

    mu = X_raw.mean(axis=0)
    sd = X_raw.std(axis=0)
    # effectively-constant features get unit scale (their centered values
    # are float noise, so they stay out of the fit)
    sd = np.where(sd > 1e-12 * np.maximum(1.0, np.abs(mu)), sd, 1.0)
    X = (X_raw - mu) / sd

    w = np.zeros(X.shape[1])
    b = 0.0

    def loss_of(wv, bv):
        z = X @ wv + bv
        # stable log(1 + exp(-|z|)) form of the cross entropy
        return float(np.mean(np.logaddexp(0.0, z) - y * z))

    lr = 1.0
    loss = loss_of(w, b)
    if loss_history is not None:
        loss_history.append(loss)
    for _ in range(max_iter):
        p = _sigmoid(X @ w + b)
        r = p - y
        gw = X.T @ r / len(y)
        gb = float(r.mean())
        gnorm = float(np.sqrt(np.sum(gw ** 2) + gb ** 2))
        if gnorm < grad_tol:
            break
        while lr > 1e-12:
            w2 = w - lr * gw
            b2 = b - lr * gb
            new_loss = loss_of(w2, b2)
            if new_loss <= loss:
                w, b, loss = w2, b2, new_loss
                lr *= 1.1
                break
            lr *= 0.5
        else:
            break
        if loss_history is not None:
            loss_history.append(loss)
    return LogisticModel(weights=w, bias=b, feature_means=mu, feature_stds=sd)


def predict_probability(model: LogisticModel, features: TerrainFeatures) -> Raster:
    """Per-cell initiation probability; nodata features stay nodata."""
    X, valid = feature_matrix(features)
    Xs = (X - model.feature_means) / model.feature_stds
    z = Xs @ model.weights + model.bias
    p = _sigmoid(z)
    ref = features.slope
    out = np.where(valid, p, ref.nodata).reshape(ref.shape)
    return ref.with_values(out)


def apply_slope_mask(p: Raster, slope: Raster, min_slope_rad: float) -> Raster:
    """Zero the initiation probability below the slope threshold."""
    vals = p.values.copy()
    gentle = (slope.values != slope.nodata) & (slope.values < min_slope_rad)
    vals[gentle & (vals != p.nodata)] = 0.0
    return p.with_values(vals)


def sample_initiation_points(p: Raster, seed: int) -> list[tuple[int, int]]:
    """Independent Bernoulli draw per valid cell, row-major order.

    Uniforms come from the counter-based Philox generator seeded with
    `seed`, drawn for the full grid at once, so the same seed gives the
    same points on any platform and raising any p value can only add
    points (a cell fires iff u < p).
    """
    gen = np.random.Generator(np.random.Philox(seed))
    u = gen.random(p.shape)
    valid = p.valid_mask()
    hit = valid & (u < p.values)
    rows, cols = np.nonzero(hit)
    return list(zip(rows.tolist(), cols.tolist()))


def build_scenario(points, gamma: float, template: HydrographTemplate,
                   seed: int = 0) -> Scenario:
    """Attach the supply template to every sampled point."""
    knots = None
    supplies = []
    for r, c in points:
        if knots is None:
            knots = template.knots()
        supplies.append(SupplySpec(cell=(int(r), int(c)), hydrograph=knots))
    return Scenario(seed=seed, gamma=gamma, points=[(int(r), int(c)) for r, c in points],
                    supplies=supplies, template=template)
