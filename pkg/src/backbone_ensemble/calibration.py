"""Per-backbone temperature scaling and the calibrated combiners."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import LengthMismatch, NonPositiveTemperature
from .static import as_stack, confidence_select, log_softmax

T_MIN = 0.05
T_MAX = 50.0
GRID_POINTS = 64
GOLDEN_TOL = 1e-4
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class TemperatureVector:
    temps: np.ndarray
    names: list = field(default_factory=list)
    split: str = ""
    nll: dict = field(default_factory=dict)
    history: list = field(default_factory=list)

    def __len__(self):
        return len(self.temps)

    def to_dict(self) -> dict:
        return {
            "temps": {n: float(t) for n, t in zip(self.names, self.temps)},
            "nll": {n: float(self.nll[n]) for n in self.names if n in self.nll},
            "split": self.split,
        }

    @classmethod
    def from_dict(cls, doc) -> "TemperatureVector":
        names = list(doc["temps"])
        return cls(np.array([doc["temps"][n] for n in names], dtype=np.float64),
                   names, doc.get("split", ""), dict(doc.get("nll", {})))


def _temps_array(temps):
    t = temps.temps if isinstance(temps, TemperatureVector) else temps
    return np.asarray(t, dtype=np.float64)


def nll(logits, labels, t=1.0) -> float:
    """Mean negative log-likelihood of ``softmax(logits / t)``."""
    z = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.shape != (z.shape[0],):
        raise LengthMismatch(f"{z.shape[0]} rows but {labels.shape} labels")
    logp = log_softmax(z / t)
    return float(-logp[np.arange(len(labels)), labels].mean())


def apply_temperature(logits, t) -> np.ndarray:
    if not t > 0:
        raise NonPositiveTemperature(f"temperature must be > 0, got {t}")
    return np.asarray(logits, dtype=np.float64) / t


def fit_temperature(logits, labels) -> float:
    """Temperature in [T_MIN, T_MAX] minimizing the mean NLL.

    A 64-point log-spaced grid locates the basin, golden-section search on
    the neighbouring grid interval refines it. The result never has a higher
    NLL than the best grid point or than ``t = 1``.
    """
    z = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.shape != (z.shape[0],):
        raise LengthMismatch(f"{z.shape[0]} rows but {labels.shape} labels")

    def f(t):
        return nll(z, labels, t)

    grid = np.geomspace(T_MIN, T_MAX, GRID_POINTS)
    values = [f(t) for t in grid]
    i = int(np.argmin(values))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, GRID_POINTS - 1)]

    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > GOLDEN_TOL:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    t_golden = c if fc <= fd else d
    # strict improvement is needed to move off the grid point or t = 1
    best_t, best_f = float(grid[i]), values[i]
    for t, ft in ((t_golden, min(fc, fd)), (1.0, f(1.0))):
        if ft < best_f:
            best_t, best_f = float(t), ft
    return best_t


def fit_temperatures(stack, labels, names=None, split="") -> TemperatureVector:
    """Fit one temperature per backbone independently."""
    z = as_stack(stack)
    temps = np.array([fit_temperature(zb, labels) for zb in z])
    names = list(names) if names is not None else [str(i) for i in range(len(z))]
    losses = {n: nll(zb, labels, t) for n, zb, t in zip(names, z, temps)}
    return TemperatureVector(temps, names, split, losses)


def _scaled(stack, temps):
    z = as_stack(stack)
    t = _temps_array(temps)
    if t.shape != (z.shape[0],):
        raise LengthMismatch(f"{z.shape[0]} backbones but {t.shape} temperatures")
    if not np.all(t > 0):
        raise NonPositiveTemperature("temperatures must be > 0")
    return z / t[:, None, None]


def calibrated_log_avg(stack, temps) -> np.ndarray:
    """Mean over backbones of ``z_b / t_b``."""
    return _scaled(stack, temps).mean(axis=0)


def calibrated_confidence(stack, temps) -> np.ndarray:
    """Entropy-based selection on the temperature-scaled stack."""
    return confidence_select(_scaled(stack, temps))


def calibration_data(bundle, seed=0, fraction=0.1):
    """Logits and labels to fit temperatures on: the "val" split if present,
    else a stratified, seeded holdout of "train". Returns ``(stack, labels, split_id)``.
    """
    from .fewshot import holdout_split

    if "val" in bundle.splits:
        return bundle.load_logits("val"), bundle.load_labels("val"), "val"
    y = bundle.load_labels("train")
    _, hold = holdout_split(np.arange(len(y)), y, fraction, seed)
    return bundle.load_logits("train")[:, hold], y[hold], f"train-holdout(seed={seed})"


def calibrate_bundle(bundle, seed=0) -> TemperatureVector:
    z, y, split = calibration_data(bundle, seed)
    return fit_temperatures(z, y, bundle.names, split)
