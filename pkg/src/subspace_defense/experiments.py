"""Experiment kinds: each one writes report.json, CSV tables and (where a model is trained) model.ckpt."""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np

from .checkpoint import save_checkpoint
from .config import ConfigError, RunConfig
from .data import Dataset, SynthSpec, synthetic_perturbations
from .io import write_csv, write_json
from .net import DefenseNet, forward
from .attack import pgd_attack
from .spectral import (FeatureMatrix, SubspaceProjector, center_rows, magnitude_profile, perturbation_matrix,
                       singular_spectrum, subspace_overlap, top_right_basis)
from .train import (convergence_compare, dimension_sweep, evaluate, structure_ablation, train_run)

REPORT_SCHEMA = 1
KINDS = ("spectral-analysis", "projection-sweep", "magnitude-profile", "train", "dim-sweep", "convergence",
         "structure-ablation")


@dataclasses.dataclass
class RunOutput:
    directory: Path
    report: dict
    files: list[str]


def output_dir(cfg: RunConfig, kind: str, out: str | Path | None = None) -> Path:
    return Path(out if out is not None else cfg.output_dir) / cfg.name / kind / f"seed-{cfg.seed}"


def _resolved(cfg: RunConfig, data: Dataset) -> dict:
    doc = cfg.to_dict()
    atk = cfg.build_attack(data)
    doc["architecture"]["input_dim"] = data.input_dim
    doc["architecture"]["classes"] = data.classes
    doc["attack"]["epsilon"] = atk.epsilon
    doc["attack"]["eta"] = atk.eta
    return doc


def _mean_rows(per_seed: list[list[dict]], key_fields: tuple[str, ...]) -> list[dict]:
    out = []
    for rows in zip(*per_seed):
        merged = {k: rows[0][k] for k in key_fields}
        for k in rows[0]:
            if k not in key_fields:
                merged[k] = float(np.mean([r[k] for r in rows]))
        out.append(merged)
    return out


def _standard_model(cfg: RunConfig, data: Dataset, seed: int) -> DefenseNet:
    arch = cfg.build_arch(data)
    tcfg = cfg.build_train(data).replace(variant="baseline_standard", seed=seed)
    net, _ = train_run(arch, data, tcfg)
    return net


def _features(net: DefenseNet | None, x: np.ndarray, source: str) -> np.ndarray:
    return x if source == "input" else forward(net, x, bypass_defense=True).h


def projected_model(net: DefenseNet, proj: SubspaceProjector, frame: FeatureMatrix, source: str) -> DefenseNet:
    """The frozen network with ``mean + P (f - mean)`` applied to its inputs or to its features ``h``.

    Input projection is folded into the first affine layer; feature projection
    becomes a single d x d linear filter in front of the classifier.
    """
    p = proj.matrix
    shift = (np.eye(proj.ambient_dim) - p) @ frame.mean
    params = {k: v.copy() for k, v in net.params.items() if k.split(".")[0] not in ("proj", "back", "filter")}
    if source == "input":
        w0, b0 = params["h0.W"], params["h0.b"]
        params["h0.W"] = w0 @ p
        params["h0.b"] = b0 + w0 @ shift
        arch = net.arch.replace(defense_variant="none")
    else:
        params["filter.W"] = p.copy()
        params["filter.b"] = shift
        arch = net.arch.replace(defense_variant="one_layer_linear")
    return DefenseNet(arch=arch, params=params, seed=net.seed)


def _acc(net: DefenseNet, x, y) -> float:
    return float(np.mean(np.argmax(forward(net, x).logits, axis=1) == y))


# -- kinds --------------------------------------------------------------------------

def spectral_analysis(cfg: RunConfig, data: Dataset, directory: Path) -> tuple[dict, list[str], DefenseNet | None]:
    an = cfg.analysis
    net = None
    x = data.x_test
    if an.feature_source == "model" or an.perturbation == "pgd":
        net = _standard_model(cfg, data, cfg.seed)
    if an.perturbation == "synthetic":
        if not isinstance(cfg.dataset, SynthSpec):
            raise ConfigError("analysis.perturbation 'synthetic' needs a synthetic dataset")
        x_adv = x + synthetic_perturbations(cfg.dataset, x.shape[0])
    else:
        x_adv = pgd_attack(net, x, data.y_test, cfg.build_attack(data).evaluation()).x_adv
    h = center_rows(FeatureMatrix.raw(_features(net, x, an.feature_source)))
    h_adv = center_rows(FeatureMatrix.raw(_features(net, x_adv, an.feature_source)))
    dh = perturbation_matrix(h, h_adv)
    spectra = {k: singular_spectrum(m) for k, m in (("clean", h), ("adversarial", h_adv), ("perturbation", dh))}
    ranks = {k: s.rank_for_energy(an.energy_threshold) for k, s in spectra.items()}
    overlap = subspace_overlap(top_right_basis(h, ranks["clean"]), top_right_basis(dh, ranks["perturbation"]))
    rows = []
    for i in range(len(spectra["clean"].values)):
        rows.append([i + 1] + [float(v) for k in spectra for v in (spectra[k].values[i], spectra[k].energy[i])])
    write_csv(directory / "spectra.csv", ["index", "clean_sigma", "clean_energy", "adversarial_sigma",
                                          "adversarial_energy", "perturbation_sigma", "perturbation_energy"], rows)
    write_csv(directory / "overlap.csv", ["angle", "cosine"],
              [[i + 1, float(c)] for i, c in enumerate(overlap.cosines)])
    results = {"rank_for_energy": ranks, "energy_threshold": an.energy_threshold,
               "overlap_cosines": [float(c) for c in overlap.cosines],
               "overlap_mean_sq_cosine": overlap.mean_sq_cosine,
               "feature_source": an.feature_source, "perturbation": an.perturbation}
    return results, ["spectra.csv", "overlap.csv"], net


def _sweep_one(cfg: RunConfig, data: Dataset, seed: int) -> tuple[list[dict], DefenseNet]:
    an = cfg.analysis
    net = _standard_model(cfg, data, seed)
    atk = cfg.build_attack(data).evaluation()
    x_adv = pgd_attack(net, data.x_test, data.y_test, atk).x_adv
    frame = center_rows(FeatureMatrix.raw(_features(net, data.x_train, an.feature_source)))
    dim = frame.shape[1]
    p_values = an.p_values if an.p_values is not None else tuple(range(1, dim + 1))
    rows = []
    for p in p_values:
        if p > min(frame.shape):
            raise ConfigError(f"analysis.p_values: p={p} exceeds the feature dimension {dim}")
        pnet = projected_model(net, top_right_basis(frame, p), frame, an.feature_source)
        rows.append({"p": int(p), "clean_acc": _acc(pnet, data.x_test, data.y_test),
                     "robust_acc": _acc(pnet, x_adv, data.y_test),
                     "robust_acc_adaptive": evaluate(pnet, data.x_test, data.y_test, atk)["robust_acc"]})
    return rows, net


def projection_sweep(cfg: RunConfig, data: Dataset, directory: Path):
    per_seed, nets = [], []
    for s in cfg.seeds:
        rows, net = _sweep_one(cfg, data, s)
        per_seed.append(rows)
        nets.append(net)
    ref = evaluate(nets[0], data.x_test, data.y_test, cfg.build_attack(data))
    mean = _mean_rows(per_seed, ("p",))
    write_csv(directory / "projection.csv", ["p", "clean_acc", "robust_acc", "robust_acc_adaptive"],
              [[r["p"], r["clean_acc"], r["robust_acc"], r["robust_acc_adaptive"]] for r in mean])
    results = {"feature_source": cfg.analysis.feature_source, "rows": mean, "per_seed": per_seed,
               "unprojected_first_seed": ref}
    return results, ["projection.csv"], nets[0]


def magnitude_profile_run(cfg: RunConfig, data: Dataset, directory: Path):
    an = cfg.analysis
    net = _standard_model(cfg, data, cfg.seed)
    x_adv = pgd_attack(net, data.x_test, data.y_test, cfg.build_attack(data).evaluation()).x_adv
    frame = center_rows(FeatureMatrix.raw(_features(net, data.x_train, an.feature_source)))
    if an.profile_p > min(frame.shape):
        raise ConfigError(f"analysis.profile_p={an.profile_p} exceeds the feature dimension {frame.shape[1]}")
    proj = top_right_basis(frame, an.profile_p)
    clean = _features(net, data.x_test, an.feature_source)
    adv = _features(net, x_adv, an.feature_source)
    pc = frame.mean + (clean - frame.mean) @ proj.matrix
    pa = frame.mean + (adv - frame.mean) @ proj.matrix
    prof = {k: magnitude_profile(v) for k, v in
            (("clean", clean), ("adversarial", adv), ("clean_projected", pc), ("adversarial_projected", pa))}
    write_csv(directory / "magnitude.csv", ["dim", *prof],
              [[j + 1, *(float(prof[k][j]) for k in prof)] for j in range(len(prof["clean"]))])
    gap = float(np.linalg.norm(prof["adversarial"] - prof["clean"]))
    gap_proj = float(np.linalg.norm(prof["adversarial_projected"] - prof["clean_projected"]))
    results = {"feature_source": an.feature_source, "p": an.profile_p,
               "profile_gap": gap, "profile_gap_projected": gap_proj,
               "max_excess": float(np.max(prof["adversarial"] - prof["clean"])),
               "max_excess_projected": float(np.max(prof["adversarial_projected"] - prof["clean_projected"]))}
    return results, ["magnitude.csv"], net


def train_kind(cfg: RunConfig, data: Dataset, directory: Path):
    arch = cfg.build_arch(data)
    tcfg = cfg.build_train(data)
    reports, first = [], None
    for s in cfg.seeds:
        net, rep = train_run(arch, data, tcfg.replace(seed=s))
        reports.append(rep)
        first = first or net
    rows = [[rep.seed, r.epoch, r.clean_acc, r.robust_acc, r.ce, r.recon, r.hsic, r.total]
            for rep in reports for r in rep.records]
    write_csv(directory / "epochs.csv", ["seed", "epoch", "clean_acc", "robust_acc", "ce", "recon", "hsic", "total"],
              rows)
    summary = {k: float(np.mean([rep.summary[k] for rep in reports])) for k in reports[0].summary}
    results = {"variant": tcfg.variant, "summary": summary, "runs": [rep.to_dict() for rep in reports]}
    return results, ["epochs.csv"], first


def dim_sweep_kind(cfg: RunConfig, data: Dataset, directory: Path):
    arch = cfg.build_arch(data)
    r_values = [r for r in cfg.analysis.r_values if r <= arch.feature_dim]
    if not r_values:
        raise ConfigError(f"analysis.r_values: none lie in [1, {arch.feature_dim}]")
    rows = dimension_sweep(arch, data, cfg.build_train(data), r_values, cfg.seeds)
    write_csv(directory / "dim_sweep.csv", ["r", "clean_acc", "robust_acc", "robust_acc_fixed"],
              [[r["r"], r["clean_acc"], r["robust_acc"], r["robust_acc_fixed"]] for r in rows])
    best = max(rows, key=lambda r: r["robust_acc"])
    return {"rows": rows, "best_r": best["r"]}, ["dim_sweep.csv"], None


def convergence_kind(cfg: RunConfig, data: Dataset, directory: Path):
    arch = cfg.build_arch(data)
    curves = convergence_compare(list(cfg.analysis.variants), arch, data, cfg.build_train(data), cfg.seeds)
    rows = [[v, e + 1, c["clean_curve"][e], c["robust_curve"][e]] for v, c in curves.items()
            for e in range(len(c["robust_curve"]))]
    write_csv(directory / "convergence.csv", ["variant", "epoch", "clean_acc", "robust_acc"], rows)
    return {"curves": curves}, ["convergence.csv"], None


def structure_ablation_kind(cfg: RunConfig, data: Dataset, directory: Path):
    arch = cfg.build_arch(data)
    r_values = [r for r in cfg.analysis.structure_r_values if r <= arch.feature_dim]
    rows = structure_ablation(arch, data, cfg.build_train(data), cfg.seeds, cfg.analysis.structures, r_values)
    write_csv(directory / "structure_ablation.csv", ["structure", "r", "clean_acc", "robust_acc", "robust_acc_fixed"],
              [[r["structure"], r["r"], r["clean_acc"], r["robust_acc"], r["robust_acc_fixed"]] for r in rows])
    per_structure = {s: float(np.mean([r["robust_acc"] for r in rows if r["structure"] == s]))
                     for s in cfg.analysis.structures}
    return {"rows": rows, "mean_robust_by_structure": per_structure}, ["structure_ablation.csv"], None


_DISPATCH = {
    "spectral-analysis": spectral_analysis,
    "projection-sweep": projection_sweep,
    "magnitude-profile": magnitude_profile_run,
    "train": train_kind,
    "dim-sweep": dim_sweep_kind,
    "convergence": convergence_kind,
    "structure-ablation": structure_ablation_kind,
}


def run_experiment(kind: str, cfg: RunConfig, out: str | Path | None = None) -> RunOutput:
    if kind not in _DISPATCH:
        raise ConfigError(f"unknown experiment kind {kind!r}; valid kinds: {', '.join(KINDS)}")
    data = cfg.load_dataset()
    data.require_trainable()
    directory = output_dir(cfg, kind, out)
    directory.mkdir(parents=True, exist_ok=True)
    results, files, net = _DISPATCH[kind](cfg, data, directory)
    if net is not None:
        save_checkpoint(net, directory / "model.ckpt")
        files = [*files, "model.ckpt"]
    report = {"schema": REPORT_SCHEMA, "kind": kind, "seed": cfg.seed, "seeds": cfg.seeds,
              "config": _resolved(cfg, data), "dataset": {"n": data.n, "input_dim": data.input_dim,
                                                          "classes": data.classes, "provenance": data.provenance},
              "results": results, "files": sorted([*files, "report.json"])}
    write_json(directory / "report.json", report)
    return RunOutput(directory=directory, report=report, files=report["files"])
