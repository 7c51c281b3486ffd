"""Training loops, evaluation and the ablation / sweep procedures."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from .attack import AttackConfig, pgd_attack
from .data import Dataset
from .hsic import MIN_SAMPLES, hsic_gradient
from .matcore import RngStream, ValidationError
from .net import AdamState, Architecture, DefenseNet, adam_step, backward, forward, init_params, loss_ce, loss_recon

VARIANTS = ("full", "no_hsic", "no_projector", "no_adv", "baseline_standard", "baseline_pgd")
LOSS_INPUT_MODES = ("clean", "adversarial", "both")
STRUCTURES = ("one_layer_linear", "one_layer_relu", "two_layer_linear", "two_layer_relu")

# variant -> (keeps defense layers, trains on adversarial CE, keeps HSIC term)
_VARIANT_PLAN = {
    "full": (True, True, True),
    "no_hsic": (True, True, False),
    "no_projector": (False, True, False),
    "no_adv": (True, False, True),
    "baseline_standard": (False, False, False),
    "baseline_pgd": (False, True, False),
}


@dataclass(frozen=True)
class TrainConfig:
    attack: AttackConfig
    epochs: int = 40
    batch_size: int = 64
    lam: float = 1.0
    loss_input_mode: str = "adversarial"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    variant: str = "full"
    eval_attack: AttackConfig | None = None
    record_wall_time: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.lam < 0:
            raise ValidationError("lambda must be non-negative")
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.loss_input_mode not in LOSS_INPUT_MODES:
            raise ValidationError(f"unknown loss_input_mode {self.loss_input_mode!r}; expected one of {LOSS_INPUT_MODES}")
        if self.effective_lambda > 0 and self.batch_size < MIN_SAMPLES:
            raise ValidationError(f"batch_size must be >= {MIN_SAMPLES} when lambda > 0")

    @property
    def effective_lambda(self) -> float:
        return self.lam if _VARIANT_PLAN[self.variant][2] else 0.0

    @property
    def evaluation_attack(self) -> AttackConfig:
        return self.eval_attack if self.eval_attack is not None else self.attack.evaluation()

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lambda"] = d.pop("lam")
        d["eval_attack"] = dataclasses.asdict(self.evaluation_attack)
        return d


@dataclass
class EpochRecord:
    epoch: int
    clean_acc: float
    robust_acc: float
    ce: float
    recon: float
    hsic: float
    total: float
    wall_ms: float = 0.0


@dataclass
class ExperimentReport:
    config: dict
    seed: int
    records: list[EpochRecord] = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def robust_curve(self) -> list[float]:
        return [r.robust_acc for r in self.records]

    def to_dict(self) -> dict:
        return {"config": self.config, "seed": self.seed,
                "records": [dataclasses.asdict(r) for r in self.records], "summary": self.summary}


@dataclass
class LossParts:
    ce: float = 0.0
    recon: float = 0.0
    hsic: float = 0.0
    sigma_u: float = 0.0
    sigma_v: float = 0.0

    def total(self, lam: float) -> float:
        return self.ce + self.recon + lam * self.hsic


def effective_arch(arch: Architecture, variant: str) -> Architecture:
    return arch if _VARIANT_PLAN[variant][0] else arch.replace(defense_variant="none")


def objective(net: DefenseNet, x: np.ndarray, y: np.ndarray, lam: float, terms=("ce", "recon", "hsic"),
              bandwidths: tuple[float, float] | None = None):
    """Loss terms evaluated on one input batch with their gradients.

    HSIC is computed between the kept features ``h_hat`` and the discarded part
    ``h - h_hat`` over the whole batch, with median-heuristic bandwidths unless
    ``bandwidths`` pins them. Returns ``(parts, param_grads, dx)``.
    """
    cache = forward(net, x)
    parts = LossParts()
    dlogits = dh_hat = dh = None
    if "ce" in terms:
        parts.ce, dlogits = loss_ce(cache.logits, y)
    if cache.defended and "recon" in terms:
        parts.recon, dh, dh_hat = loss_recon(cache.h, cache.h_hat)
    if cache.defended and "hsic" in terms and x.shape[0] >= MIN_SAMPLES:
        su, sv = bandwidths if bandwidths is not None else (None, None)
        hb = hsic_gradient(cache.h_hat, cache.h - cache.h_hat, su, sv)
        parts.hsic, parts.sigma_u, parts.sigma_v = hb.value, hb.sigma_u, hb.sigma_v
        if lam > 0:
            # u = h_hat, v = h - h_hat
            g_hat = lam * (hb.grad_u - hb.grad_v)
            g_h = lam * hb.grad_v
            dh_hat = g_hat if dh_hat is None else dh_hat + g_hat
            dh = g_h if dh is None else dh + g_h
    grads, dx = backward(net, cache, dlogits=dlogits, dh_hat=dh_hat, dh=dh)
    return parts, grads, dx


def _batches(order: np.ndarray, batch_size: int, min_size: int) -> list[np.ndarray]:
    out = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(out) > 1 and len(out[-1]) < min_size:
        tail = out.pop()
        out[-1] = np.concatenate([out[-1], tail])
    return out


def accuracy(net: DefenseNet, x: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(np.argmax(forward(net, x).logits, axis=1) == y)) if len(y) else 0.0


def evaluate(net: DefenseNet, x: np.ndarray, y: np.ndarray, attack: AttackConfig | None = None) -> dict:
    """Clean accuracy and, if an attack is given, accuracy on deterministic PGD rows.

    Rows are always scored by the full model; ``attack.target`` only decides
    which path the attacker differentiates through.
    """
    out = {"clean_acc": accuracy(net, x, y)}
    if attack is not None:
        adv = pgd_attack(net, x, y, attack.evaluation())
        out["robust_acc"] = accuracy(net, adv.x_adv, y)
    return out


def epochs_to_fraction(curve: list[float], fraction: float = 0.9) -> int:
    """1-based epoch at which ``curve`` first reaches ``fraction`` of its final value."""
    target = fraction * curve[-1]
    for i, v in enumerate(curve):
        if v >= target:
            return i + 1
    return len(curve)


def train_run(arch: Architecture, data: Dataset, cfg: TrainConfig) -> tuple[DefenseNet, ExperimentReport]:
    data.require_trainable()
    _, use_adv, _ = _VARIANT_PLAN[cfg.variant]
    arch = effective_arch(arch, cfg.variant)
    lam = cfg.effective_lambda
    rng = RngStream(cfg.seed, "train")
    net = init_params(arch, rng.child("init"))
    state = AdamState.zeros_like(net.params)
    x_tr, y_tr = data.x_train, data.y_train
    x_te, y_te = data.x_test, data.y_test
    eval_attack = cfg.evaluation_attack
    min_batch = MIN_SAMPLES if lam > 0 else 1

    report = ExperimentReport(config={"architecture": arch.to_dict(), "train": cfg.to_dict()}, seed=cfg.seed)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.child(f"shuffle/{epoch}").permutation(len(y_tr))
        sums = np.zeros(3)
        batches = _batches(order, cfg.batch_size, min_batch)
        for bi, idx in enumerate(batches):
            xb, yb = x_tr[idx], y_tr[idx]
            if use_adv:
                xa = pgd_attack(net, xb, yb, cfg.attack, rng=rng.child(f"attack/{epoch}/{bi}")).x_adv
            else:
                xa = xb
            if not use_adv or cfg.loss_input_mode == "adversarial":
                parts, grads, _ = objective(net, xa, yb, lam)
            else:
                parts, grads, _ = objective(net, xa, yb, lam, terms=("ce",))
                aux_inputs = [xb] if cfg.loss_input_mode == "clean" else [xa, xb]
                for xi in aux_inputs:
                    p2, g2, _ = objective(net, xi, yb, lam, terms=("recon", "hsic"))
                    parts.recon += p2.recon
                    parts.hsic += p2.hsic
                    for k in grads:
                        grads[k] = grads[k] + g2[k]
            adam_step(net, grads, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
            sums += (parts.ce, parts.recon, parts.hsic)
        ce, recon, hs = sums / len(batches)
        ev = evaluate(net, x_te, y_te, eval_attack)
        wall = (time.perf_counter() - t0) * 1000.0 if cfg.record_wall_time else 0.0
        report.records.append(EpochRecord(epoch=epoch + 1, clean_acc=ev["clean_acc"], robust_acc=ev["robust_acc"],
                                          ce=float(ce), recon=float(recon), hsic=float(hs),
                                          total=float(ce + recon + lam * hs), wall_ms=wall))
    curve = report.robust_curve()
    fixed = dataclasses.replace(eval_attack, target="undefended")
    report.summary = {"clean_acc": report.records[-1].clean_acc, "robust_acc": report.records[-1].robust_acc,
                      "robust_acc_fixed": evaluate(net, x_te, y_te, fixed)["robust_acc"],
                      "epochs_to_90pct_robust": epochs_to_fraction(curve)}
    return net, report


def train_standard(arch: Architecture, data: Dataset, cfg: TrainConfig):
    """Plain clean cross-entropy training of the undefended network."""
    return train_run(arch, data, cfg.replace(variant="baseline_standard"))


def train_defense(arch: Architecture, data: Dataset, cfg: TrainConfig):
    """PGD inner maximisation + CE/recon/HSIC outer minimisation, per ``cfg.variant``."""
    return train_run(arch, data, cfg)


def seed_list(base_seed: int, n_seeds: int) -> list[int]:
    return [base_seed + i for i in range(n_seeds)]


def _mean(xs) -> float:
    return float(np.mean(xs)) if len(xs) else 0.0


def multi_seed(arch: Architecture, data: Dataset, cfg: TrainConfig, seeds: list[int]) -> list[ExperimentReport]:
    return [train_run(arch, data, cfg.replace(seed=s))[1] for s in seeds]


def dimension_sweep(arch: Architecture, data: Dataset, cfg: TrainConfig, r_values, seeds: list[int]) -> list[dict]:
    """One defended model per subspace dimension r (shared seeds)."""
    rows = []
    for r in r_values:
        if not 1 <= r <= arch.feature_dim:
            raise ValidationError(f"r={r} outside [1, {arch.feature_dim}]")
        reports = multi_seed(arch.replace(subspace_dim=int(r)), data, cfg, seeds)
        rows.append({"r": int(r),
                     "clean_acc": _mean([rep.summary["clean_acc"] for rep in reports]),
                     "robust_acc": _mean([rep.summary["robust_acc"] for rep in reports]),
                     "robust_acc_fixed": _mean([rep.summary["robust_acc_fixed"] for rep in reports]),
                     "per_seed": [rep.summary for rep in reports]})
    return rows


def convergence_compare(variants, arch: Architecture, data: Dataset, cfg: TrainConfig, seeds: list[int]) -> dict:
    """Seed-averaged per-epoch robust accuracy curves for each variant."""
    if len(variants) < 2:
        raise ValidationError("convergence comparison needs at least two variants")
    out = {}
    for v in variants:
        reports = multi_seed(arch, data, cfg.replace(variant=v), seeds)
        curve = np.mean([rep.robust_curve() for rep in reports], axis=0).tolist()
        out[v] = {"robust_curve": curve,
                  "clean_curve": np.mean([[r.clean_acc for r in rep.records] for rep in reports], axis=0).tolist(),
                  "epochs_to_90pct_robust": epochs_to_fraction(curve),
                  "final_robust_acc": curve[-1],
                  "per_seed": [rep.summary for rep in reports]}
    return out


def structure_ablation(arch: Architecture, data: Dataset, cfg: TrainConfig, seeds: list[int],
                       structures=STRUCTURES, r_values=(3, 5, 7, 10)) -> list[dict]:
    """Clean/robust accuracy per defense structure and subspace dimension."""
    rows = []
    for s in structures:
        for r in r_values:
            reports = multi_seed(arch.replace(defense_variant=s, subspace_dim=int(r)), data, cfg, seeds)
            rows.append({"structure": s, "r": int(r),
                         "clean_acc": _mean([rep.summary["clean_acc"] for rep in reports]),
                         "robust_acc": _mean([rep.summary["robust_acc"] for rep in reports]),
                         "robust_acc_fixed": _mean([rep.summary["robust_acc_fixed"] for rep in reports]),
                         "per_seed": [rep.summary for rep in reports]})
    return rows
