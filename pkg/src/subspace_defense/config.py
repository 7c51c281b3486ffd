"""Strict JSON run configuration.

Every section is optional except ``dataset``; missing sections and keys are
filled with defaults and the resolved document is what reports echo. Unknown
keys anywhere are rejected before anything runs.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .attack import TARGETS, AttackConfig
from .data import Dataset, SynthSpec, gen_synthetic, load_csv
from .matcore import ValidationError
from .net import ACTIVATIONS, DEFENSE_VARIANTS, Architecture
from .train import LOSS_INPUT_MODES, STRUCTURES, VARIANTS, TrainConfig


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending key path."""


FEATURE_SOURCES = ("model", "input")
PERTURBATION_SOURCES = ("pgd", "synthetic")


@dataclass(frozen=True)
class CsvSource:
    path: str
    label_column: str = "label"
    split_seed: int = 0


@dataclass(frozen=True)
class ArchSection:
    hidden: tuple[int, ...] = (64,)
    feature_dim: int = 32
    subspace_dim: int = 4
    defense_variant: str = "two_layer_linear"
    activation: str = "relu"
    input_dim: int | None = None  # taken from the dataset when omitted
    classes: int | None = None


@dataclass(frozen=True)
class TrainSection:
    epochs: int = 40
    batch_size: int = 64
    lam: float = 1.0
    loss_input_mode: str = "adversarial"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    variant: str = "full"


@dataclass(frozen=True)
class AttackSection:
    epsilon: float | None = None  # absolute radius; overrides epsilon_scale
    epsilon_scale: float = 0.5  # multiple of the median class-centroid distance
    eta: float | None = None  # defaults to epsilon / 4
    steps: int = 10
    random_start: bool = True
    target: str = "full"


@dataclass(frozen=True)
class AnalysisSection:
    p_values: tuple[int, ...] | None = None  # None: every p from 1 to the feature dimension
    r_values: tuple[int, ...] = (1, 2, 4, 8, 16, 32)
    structure_r_values: tuple[int, ...] = (3, 5, 7, 10)
    variants: tuple[str, ...] = VARIANTS
    structures: tuple[str, ...] = STRUCTURES
    feature_source: str = "model"
    perturbation: str = "pgd"
    energy_threshold: float = 0.99
    profile_p: int = 2


@dataclass(frozen=True)
class RunConfig:
    name: str
    dataset: SynthSpec | CsvSource
    seed: int = 0
    n_seeds: int = 1
    output_dir: str = "runs"
    architecture: ArchSection = field(default_factory=ArchSection)
    train: TrainSection = field(default_factory=TrainSection)
    attack: AttackSection = field(default_factory=AttackSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    @property
    def seeds(self) -> list[int]:
        return [self.seed + i for i in range(self.n_seeds)]

    def to_dict(self) -> dict:
        if isinstance(self.dataset, SynthSpec):
            ds = {"synthetic": dataclasses.asdict(self.dataset)}
        else:
            ds = {"csv": dataclasses.asdict(self.dataset)}
        train = dataclasses.asdict(self.train)
        train["lambda"] = train.pop("lam")
        analysis = dataclasses.asdict(self.analysis)
        return {
            "name": self.name, "seed": self.seed, "n_seeds": self.n_seeds, "output_dir": self.output_dir,
            "dataset": ds, "architecture": _listify(dataclasses.asdict(self.architecture)),
            "train": train, "attack": dataclasses.asdict(self.attack), "analysis": _listify(analysis),
        }

    # -- resolution against data -------------------------------------------------

    def load_dataset(self) -> Dataset:
        if isinstance(self.dataset, SynthSpec):
            return gen_synthetic(self.dataset)
        return load_csv(self.dataset.path, self.dataset.label_column, self.dataset.split_seed)

    def build_arch(self, data: Dataset) -> Architecture:
        a = self.architecture
        if a.input_dim is not None and a.input_dim != data.input_dim:
            raise ConfigError(f"architecture.input_dim={a.input_dim} but dataset has {data.input_dim} features")
        if a.classes is not None and a.classes != data.classes:
            raise ConfigError(f"architecture.classes={a.classes} but dataset has {data.classes} classes")
        try:
            return Architecture(input_dim=data.input_dim, hidden=a.hidden, feature_dim=a.feature_dim,
                                subspace_dim=a.subspace_dim, classes=data.classes,
                                defense_variant=a.defense_variant, activation=a.activation)
        except ValidationError as exc:
            raise ConfigError(f"architecture: {exc}") from None

    def build_attack(self, data: Dataset) -> AttackConfig:
        a = self.attack
        eps = a.epsilon if a.epsilon is not None else a.epsilon_scale * data.centroid_distance()
        eta = a.eta if a.eta is not None else (eps / 4 if eps > 0 else 1.0)
        try:
            return AttackConfig(epsilon=float(eps), eta=float(eta), steps=a.steps,
                                random_start=a.random_start, target=a.target)
        except ValidationError as exc:
            raise ConfigError(f"attack: {exc}") from None

    def build_train(self, data: Dataset) -> TrainConfig:
        t = self.train
        try:
            return TrainConfig(attack=self.build_attack(data), epochs=t.epochs, batch_size=t.batch_size, lam=t.lam,
                               loss_input_mode=t.loss_input_mode, lr=t.lr, beta1=t.beta1, beta2=t.beta2,
                               adam_eps=t.adam_eps, seed=self.seed, variant=t.variant)
        except ValidationError as exc:
            raise ConfigError(f"train: {exc}") from None


def _listify(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


# -- parsing ----------------------------------------------------------------------

def _expect_obj(obj, where: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected an object, got {type(obj).__name__}")
    return obj


def _check_keys(obj: dict, allowed, where: str) -> None:
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed: {sorted(allowed)}")


def _int(v, where: str, lo: int | None = None) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where}: expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(f"{where}: must be >= {lo}, got {v}")
    return v


def _num(v, where: str, lo: float | None = None, strict: bool = False) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {v!r}")
    v = float(v)
    if lo is not None and (v <= lo if strict else v < lo):
        raise ConfigError(f"{where}: must be {'>' if strict else '>='} {lo}, got {v}")
    return v


def _choice(v, options, where: str) -> str:
    if v not in options:
        raise ConfigError(f"{where}: {v!r} is not one of {list(options)}")
    return v


def _int_list(v, where: str) -> tuple[int, ...]:
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{where}: expected a non-empty list of integers")
    return tuple(_int(x, f"{where}[{i}]", 1) for i, x in enumerate(v))


def _choice_list(v, options, where: str) -> tuple[str, ...]:
    if not isinstance(v, list) or not v:
        raise ConfigError(f"{where}: expected a non-empty list")
    return tuple(_choice(x, options, f"{where}[{i}]") for i, x in enumerate(v))


def _section(obj, cls, where: str, parsers: dict, rename: dict | None = None):
    """Build dataclass ``cls`` from ``obj`` using per-key parser callables."""
    obj = _expect_obj(obj, where)
    rename = rename or {}
    _check_keys(obj, parsers, where)
    kwargs = {}
    for key, val in obj.items():
        kwargs[rename.get(key, key)] = parsers[key](val, f"{where}.{key}")
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _parse_dataset(obj) -> SynthSpec | CsvSource:
    obj = _expect_obj(obj, "dataset")
    _check_keys(obj, ("synthetic", "csv"), "dataset")
    if len(obj) != 1:
        raise ConfigError("dataset: give exactly one of 'synthetic' or 'csv'")
    if "csv" in obj:
        src = _section(obj["csv"], CsvSource, "dataset.csv", {
            "path": lambda v, w: v if isinstance(v, str) and v else _fail(w, "expected a path string"),
            "label_column": lambda v, w: v if isinstance(v, str) and v else _fail(w, "expected a column name"),
            "split_seed": lambda v, w: _int(v, w, 0),
        })
        if "path" not in obj["csv"]:
            raise ConfigError("dataset.csv: 'path' is required")
        return src
    ints = {k: (lambda v, w: _int(v, w, 0)) for k in ("classes", "input_dim", "signal_rank", "perturb_rank",
                                                      "n_per_class", "seed")}
    nums = {k: (lambda v, w: _num(v, w)) for k in ("separation", "noise", "ambient_noise", "perturb_scale",
                                                   "perturb_overlap")}
    spec = _section(obj["synthetic"], SynthSpec, "dataset.synthetic", {**ints, **nums})
    try:
        spec.validate()
    except ValidationError as exc:
        raise ConfigError(f"dataset.synthetic: {exc}") from None
    return spec


def _fail(where: str, msg: str):
    raise ConfigError(f"{where}: {msg}")


def parse_config(doc) -> RunConfig:
    doc = _expect_obj(doc, "config")
    top = ("name", "seed", "n_seeds", "output_dir", "dataset", "architecture", "train", "attack", "analysis")
    _check_keys(doc, top, "config")
    for req in ("name", "dataset"):
        if req not in doc:
            raise ConfigError(f"config: missing required section {req!r}")
    name = doc["name"]
    if not isinstance(name, str) or not name or "/" in name or name.startswith("."):
        raise ConfigError(f"config.name: expected a plain directory-safe string, got {name!r}")

    arch = _section(doc.get("architecture", {}), ArchSection, "architecture", {
        "hidden": lambda v, w: tuple(_int(x, f"{w}[{i}]", 1) for i, x in enumerate(v))
        if isinstance(v, list) else _fail(w, "expected a list of widths"),
        "feature_dim": lambda v, w: _int(v, w, 1),
        "subspace_dim": lambda v, w: _int(v, w, 1),
        "defense_variant": lambda v, w: _choice(v, DEFENSE_VARIANTS, w),
        "activation": lambda v, w: _choice(v, ACTIVATIONS, w),
        "input_dim": lambda v, w: None if v is None else _int(v, w, 1),
        "classes": lambda v, w: None if v is None else _int(v, w, 2),
    })
    train = _section(doc.get("train", {}), TrainSection, "train", {
        "epochs": lambda v, w: _int(v, w, 1),
        "batch_size": lambda v, w: _int(v, w, 1),
        "lambda": lambda v, w: _num(v, w, 0.0),
        "loss_input_mode": lambda v, w: _choice(v, LOSS_INPUT_MODES, w),
        "lr": lambda v, w: _num(v, w, 0.0, strict=True),
        "beta1": lambda v, w: _num(v, w, 0.0),
        "beta2": lambda v, w: _num(v, w, 0.0),
        "adam_eps": lambda v, w: _num(v, w, 0.0, strict=True),
        "variant": lambda v, w: _choice(v, VARIANTS, w),
    }, rename={"lambda": "lam"})
    attack = _section(doc.get("attack", {}), AttackSection, "attack", {
        "epsilon": lambda v, w: None if v is None else _num(v, w, 0.0),
        "epsilon_scale": lambda v, w: _num(v, w, 0.0),
        "eta": lambda v, w: None if v is None else _num(v, w, 0.0, strict=True),
        "steps": lambda v, w: _int(v, w, 1),
        "random_start": lambda v, w: v if isinstance(v, bool) else _fail(w, "expected true/false"),
        "target": lambda v, w: _choice(v, TARGETS, w),
    })
    analysis = _section(doc.get("analysis", {}), AnalysisSection, "analysis", {
        "p_values": lambda v, w: None if v is None else _int_list(v, w),
        "r_values": _int_list,
        "structure_r_values": _int_list,
        "variants": lambda v, w: _choice_list(v, VARIANTS, w),
        "structures": lambda v, w: _choice_list(v, STRUCTURES, w),
        "feature_source": lambda v, w: _choice(v, FEATURE_SOURCES, w),
        "perturbation": lambda v, w: _choice(v, PERTURBATION_SOURCES, w),
        "energy_threshold": lambda v, w: _num(v, w, 0.0, strict=True)
        if _num(v, w) <= 1.0 else _fail(w, "must lie in (0, 1]"),
        "profile_p": lambda v, w: _int(v, w, 1),
    })
    out = doc.get("output_dir", "runs")
    if not isinstance(out, str) or not out:
        raise ConfigError("config.output_dir: expected a non-empty path string")
    return RunConfig(name=name, dataset=_parse_dataset(doc["dataset"]), seed=_int(doc.get("seed", 0), "config.seed", 0),
                     n_seeds=_int(doc.get("n_seeds", 1), "config.n_seeds", 1), output_dir=out,
                     architecture=arch, train=train, attack=attack, analysis=analysis)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc})") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: invalid JSON ({exc.msg})") from None
    return parse_config(doc)
