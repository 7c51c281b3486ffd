"""Sign-gradient PGD inside a per-example L2 ball."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .matcore import DimensionError, RngStream, ValidationError, as_mat
from .net import DefenseNet, backward, forward, loss_ce, per_row_ce

TARGETS = ("full", "undefended")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    eta: float
    steps: int = 10
    random_start: bool = False
    target: str = "full"  # "undefended" skips the defense layers (non-adaptive attacker)

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValidationError("epsilon must be non-negative")
        if not self.eta > 0:
            raise ValidationError("eta must be positive")
        if self.steps < 1:
            raise ValidationError("steps must be >= 1")
        if self.target not in TARGETS:
            raise ValidationError(f"unknown attack target {self.target!r}; expected one of {TARGETS}")

    @classmethod
    def for_epsilon(cls, epsilon: float, steps: int = 10, random_start: bool = False, target: str = "full"):
        return cls(epsilon=epsilon, eta=epsilon / 4 if epsilon > 0 else 1.0, steps=steps,
                   random_start=random_start, target=target)

    def evaluation(self) -> "AttackConfig":
        return AttackConfig(self.epsilon, self.eta, self.steps, False, self.target)


@dataclass(frozen=True)
class AdvBatch:
    x_adv: np.ndarray
    x_clean: np.ndarray
    success_mask: np.ndarray  # prediction differs from the true label

    def delta_norms(self) -> np.ndarray:
        return np.linalg.norm(self.x_adv - self.x_clean, axis=1)


def project_ball(x_adv, x_clean, epsilon: float) -> np.ndarray:
    """Pull each row of ``x_adv`` back into the L2 ball of radius ``epsilon`` around its clean row."""
    x_adv = np.asarray(x_adv, dtype=np.float64)
    x_clean = np.asarray(x_clean, dtype=np.float64)
    if x_adv.shape != x_clean.shape:
        raise DimensionError(f"adversarial {x_adv.shape} and clean {x_clean.shape} batches differ")
    delta = x_adv - x_clean
    norms = np.linalg.norm(delta, axis=-1, keepdims=True)
    outside = norms > epsilon
    factor = np.where(outside, epsilon / np.where(outside, norms, 1.0), 1.0)
    return np.where(outside, x_clean + delta * factor, x_adv)


def uniform_ball(rng: RngStream, n: int, d: int, epsilon: float) -> np.ndarray:
    """``n`` points uniformly distributed in the d-dimensional L2 ball."""
    direction = rng.normal_matrix(n, d)
    norms = np.linalg.norm(direction, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    radius = epsilon * rng.uniform(n) ** (1.0 / d)
    return direction / norms * radius[:, None]


def input_gradient(net: DefenseNet, x: np.ndarray, y: np.ndarray, bypass_defense: bool = False):
    cache = forward(net, x, bypass_defense)
    _, dlogits = loss_ce(cache.logits, y)
    _, dx = backward(net, cache, dlogits=dlogits)
    return cache, dx


def pgd_attack(net: DefenseNet, x, y, cfg: AttackConfig, rng: RngStream | None = None) -> AdvBatch:
    """K steps of ``x <- Proj_ball(x + eta * sign(grad_x CE))``.

    Per row, the iterate with the highest loss seen so far is returned (the clean
    point counts as an iterate when there is no random start), so the attack
    never lowers a row's loss.
    """
    x = as_mat(x, "clean batch")
    y = np.asarray(y)
    bypass = cfg.target == "undefended"
    if cfg.epsilon == 0:
        return AdvBatch(x_adv=x.copy(), x_clean=x, success_mask=predict_mask(net, x, y, bypass))

    if cfg.random_start:
        if rng is None:
            raise ValidationError("random_start needs an RngStream")
        cur = x + uniform_ball(rng, x.shape[0], x.shape[1], cfg.epsilon)
    else:
        cur = x.copy()
    best = cur.copy()
    best_loss = np.full(x.shape[0], -np.inf)
    for _ in range(cfg.steps):
        cache, dx = input_gradient(net, cur, y, bypass)
        loss_rows = per_row_ce(cache.logits, y)
        better = loss_rows > best_loss
        best[better] = cur[better]
        best_loss[better] = loss_rows[better]
        cur = project_ball(cur + cfg.eta * np.sign(dx), x, cfg.epsilon)
    final = per_row_ce(forward(net, cur, bypass).logits, y)
    better = final > best_loss
    best[better] = cur[better]
    return AdvBatch(x_adv=best, x_clean=x, success_mask=predict_mask(net, best, y, bypass))


def predict_mask(net: DefenseNet, x: np.ndarray, y: np.ndarray, bypass_defense: bool = False) -> np.ndarray:
    return np.argmax(forward(net, x, bypass_defense).logits, axis=1) != y


def trace_rows(net: DefenseNet, x, y, cfg: AttackConfig) -> list[tuple[int, float, float]]:
    """(step, mean loss, mean perturbation norm) along a deterministic PGD run."""
    x = as_mat(x)
    bypass = cfg.target == "undefended"
    cur = x.copy()
    rows = []
    for k in range(cfg.steps + 1):
        cache = forward(net, cur, bypass)
        rows.append((k, float(np.mean(per_row_ce(cache.logits, y))),
                     float(np.mean(np.linalg.norm(cur - x, axis=1)))))
        if k == cfg.steps:
            break
        _, dx = input_gradient(net, cur, y, bypass)
        cur = project_ball(cur + cfg.eta * np.sign(dx), x, cfg.epsilon)
    return rows
