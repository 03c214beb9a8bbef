"""Input-independent learned temperature vectors: genetic search and gradient fit."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ._nn import INV_SOFTPLUS_ONE, cross_entropy, sigmoid, softplus
from ._optim import Adam
from .calibration import T_MAX, T_MIN, TemperatureVector
from .errors import LengthMismatch, NonFiniteLoss, NonPositiveTemperature
from .static import as_stack


@dataclass
class GacConfig:
    population: int = 64
    generations: int = 200
    tournament_size: int = 3
    mutation_sigma: float = 0.1
    elitism: int = 2
    seed: int = 0

    def __post_init__(self):
        if min(self.population, self.generations, self.tournament_size) < 1:
            raise ValueError("GA counts must be >= 1")
        if self.population < self.elitism + 2:
            raise ValueError("population must be >= elitism + 2")


@dataclass
class SlConfig:
    steps: int = 500
    learning_rate: float = 1e-2
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or not self.learning_rate > 0:
            raise ValueError("steps must be >= 1 and learning_rate > 0")


def _check(z, labels):
    labels = np.asarray(labels)
    if labels.shape != (z.shape[1],):
        raise LengthMismatch(f"{z.shape[1]} examples but {labels.shape} labels")
    return labels


def combine_fixed(stack, temps) -> np.ndarray:
    """Weighted sum ``sum_b t_b * z_b`` with one fixed weight per backbone."""
    z = as_stack(stack)
    t = np.asarray(getattr(temps, "temps", temps), dtype=np.float64)
    if t.shape != (z.shape[0],):
        raise LengthMismatch(f"{z.shape[0]} backbones but {t.shape} temperatures")
    if not np.all(t > 0):
        raise NonPositiveTemperature("temperatures must be > 0")
    return np.tensordot(t, z, axes=1)


def fixed_loss(stack, labels, temps) -> float:
    z = as_stack(stack)
    return cross_entropy(combine_fixed(z, temps), _check(z, labels))[0]


# ---------------------------------------------------------------------------
# genetic search


def gac_fit(stack_val, labels, cfg: GacConfig | None = None, names=None) -> TemperatureVector:
    """Genetic search over log-temperatures minimizing validation cross-entropy.

    The all-ones temperature vector seeds the initial population, so with
    elitism the result is never worse than the plain logit sum. The returned
    vector's ``history`` holds the best-ever loss after each generation.
    """
    cfg = cfg or GacConfig()
    z = as_stack(stack_val)
    labels = _check(z, labels)
    n_b = z.shape[0]
    lo, hi = np.log(T_MIN), np.log(T_MAX)
    rng = np.random.default_rng(cfg.seed)

    def fitness(genome):
        return cross_entropy(np.tensordot(np.exp(genome), z, axes=1), labels)[0]

    pop = np.clip(rng.normal(0.0, 1.0, size=(cfg.population, n_b)), lo, hi)
    pop[0] = 0.0
    fit = np.array([fitness(g) for g in pop])
    best = int(np.argmin(fit))
    best_genome, best_fit = pop[best].copy(), fit[best]
    history = [float(best_fit)]

    for _ in range(cfg.generations):
        order = np.argsort(fit, kind="stable")
        children = [pop[i].copy() for i in order[: cfg.elitism]]
        while len(children) < cfg.population:
            parents = []
            for _ in range(2):
                contenders = rng.integers(0, cfg.population, size=cfg.tournament_size)
                parents.append(pop[contenders[np.argmin(fit[contenders])]])
            mix = rng.uniform(0.0, 1.0, size=n_b)
            child = parents[0] + mix * (parents[1] - parents[0])
            child = child + rng.normal(0.0, cfg.mutation_sigma, size=n_b)
            children.append(np.clip(child, lo, hi))
        pop = np.array(children)
        fit = np.array([fitness(g) for g in pop])
        gen_best = int(np.argmin(fit))
        if fit[gen_best] < best_fit:
            best_genome, best_fit = pop[gen_best].copy(), fit[gen_best]
        history.append(float(best_fit))

    names = list(names) if names is not None else [str(i) for i in range(n_b)]
    temps = np.clip(np.exp(best_genome), T_MIN, T_MAX)
    return TemperatureVector(temps, names, "", {"val_loss": float(best_fit)}, history)


# ---------------------------------------------------------------------------
# gradient-fitted static temperatures


def sl_loss_grad(theta, stack, labels):
    """Cross-entropy of ``sum_b softplus(theta_b) z_b`` and its gradient in theta."""
    z = as_stack(stack)
    labels = _check(z, labels)
    theta = np.asarray(theta, dtype=np.float64)
    loss, g = cross_entropy(np.tensordot(softplus(theta), z, axes=1), labels)
    dt = np.einsum("nc,bnc->b", g, z)
    return loss, dt * sigmoid(theta)


def sl_fit(stack_val, labels, cfg: SlConfig | None = None, names=None) -> TemperatureVector:
    """Full-batch Adam on softplus-parameterized temperatures, starting at t = 1.

    Returns the iterate with the lowest validation loss; ``history`` is the
    loss at every step, starting with the initial one.
    """
    cfg = cfg or SlConfig()
    z = as_stack(stack_val)
    labels = _check(z, labels)
    params = {"theta": np.full(z.shape[0], INV_SOFTPLUS_ONE)}
    opt = Adam(params, lr=cfg.learning_rate)
    best_theta, best_loss = params["theta"].copy(), np.inf
    history = []
    for step in range(cfg.steps + 1):
        loss, grad = sl_loss_grad(params["theta"], z, labels)
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"loss diverged at step {step}")
        history.append(loss)
        if loss < best_loss:
            best_theta, best_loss = params["theta"].copy(), loss
        if step < cfg.steps:
            opt.step({"theta": grad})
    names = list(names) if names is not None else [str(i) for i in range(z.shape[0])]
    return TemperatureVector(softplus(best_theta), names, "", {"val_loss": float(best_loss)},
                             history)


def fixed_model_dict(temps: TemperatureVector, cfg, method=None) -> dict:
    return {
        "type": "fixed-temps",
        "method": method or ("gac" if isinstance(cfg, GacConfig) else "sl"),
        "backbones": list(temps.names),
        "temps": [float(t) for t in temps.temps],
        "config": asdict(cfg),
    }
