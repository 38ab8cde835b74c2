"""Experiment configuration: flat key=value text with sections (INI).

Every hyperparameter has a default here; a config file only needs the
keys it wants to change, and single keys can be overridden on top with
"section.key=value" strings.
"""

import configparser
import io
from dataclasses import dataclass, field
from pathlib import Path

from .data import SplitSpec
from .losses import LossWeights
from .selftrain import LpfConfig

MODES = ("f", "l", "ss")

DEFAULTS = {
    "data": {
        "source": "synthetic",      # synthetic | files
        "features_1": "",
        "features_2": "",
        "labels": "",
        "splits_file": "",          # optional pre-assigned masks (e.g. test)
        "classes": "8",
        "d_1": "16",
        "d_2": "24",
        "per_class_count": "200",
        "per_class_test": "50",
        "separation_1": "1.0",
        "separation_2": "1.0",
        "noise_1": "1.0",
        "noise_2": "1.0",
    },
    "split": {
        "rho": "0.1",
        "val_fraction": "0.2",
        "test_fraction": "0.0",
        "seen_classes": "",         # e.g. 0,1,2,3,4 -> open-set protocol
        "unseen_classes": "",
        "kappa": "0.0",
    },
    "network": {
        "hidden": "250",
        "dropout": "0.3",
    },
    "loss": {
        "alpha_ce": "1.0",
        "alpha_c": "0.5",
        "alpha_ent": "1.0",
        "alpha_r": "0.01",
    },
    "train": {
        "learning_rate": "0.01",
        "lr_decay_epoch": "100",
        "lr_decay_factor": "0.1",
        "epochs": "200",
        "patience": "20",
        "batch_size": "32",
        "center_lr_scale": "5.0",
    },
    "lpf": {
        "tau": "0.9",
        "max_iterations": "10",
        "finetune_learning_rate": "0.0001",
        "finetune_epochs": "20",
    },
    "eval": {
        "r": "50",
        "ridge": "0.001",
    },
    "run": {
        "modes": "f,l,ss",
        "repetitions": "5",
        "seed": "0",
        "output_dir": "artifacts",
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class SynthSpec:
    classes: int
    d_1: int
    d_2: int
    per_class_count: object   # int, or one int per class
    per_class_test: int
    separation: tuple
    noise: tuple


@dataclass
class ExperimentConfig:
    source: str
    feature_paths: tuple
    labels_path: str
    splits_file: str
    synth: SynthSpec
    rho: float
    val_fraction: float
    test_fraction: float
    open_set: tuple | None
    hidden: int
    dropout: float
    weights: LossWeights
    train: dict
    tau: float
    max_iterations: int
    finetune_learning_rate: float
    finetune_epochs: int
    r: int
    ridge: float
    modes: tuple
    repetitions: int
    seed: int
    output_dir: str
    raw: configparser.ConfigParser = field(repr=False, default=None)

    def split_spec(self, seed: int) -> SplitSpec:
        return SplitSpec(rho=self.rho, seed=seed,
                         val_fraction=self.val_fraction,
                         test_fraction=self.test_fraction,
                         open_set=self.open_set)

    def lpf_config(self, seed: int) -> LpfConfig:
        return LpfConfig(
            seed=seed, hidden=self.hidden, dropout=self.dropout,
            weights=self.weights,
            batch_size=self.train["batch_size"],
            learning_rate=self.train["learning_rate"],
            lr_decay_epoch=self.train["lr_decay_epoch"],
            lr_decay_factor=self.train["lr_decay_factor"],
            epochs=self.train["epochs"],
            patience=self.train["patience"],
            center_lr_scale=self.train["center_lr_scale"],
            finetune_learning_rate=self.finetune_learning_rate,
            finetune_epochs=self.finetune_epochs,
            tau=self.tau, max_iterations=self.max_iterations)

    def dump(self) -> str:
        buf = io.StringIO()
        self.raw.write(buf)
        return buf.getvalue()


def _int_list(text: str):
    text = text.strip()
    if not text:
        return []
    return [int(v) for v in text.replace(",", " ").split()]


def _base_parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.read_dict(DEFAULTS)
    return parser


def parse_config(text: str = "", overrides=None) -> ExperimentConfig:
    """Build a config from INI text layered over the defaults, then apply
    "section.key=value" overrides. Unknown sections or keys are errors."""
    parser = _base_parser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"bad config: {exc}") from None
    for section in parser.sections():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in DEFAULTS[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must be section.key=value: {item!r}")
        target, value = item.split("=", 1)
        section, key = target.split(".", 1)
        if section not in DEFAULTS or key not in DEFAULTS[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        parser[section][key] = value

    try:
        return _build(parser)
    except (ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def load_config(path, overrides=None) -> ExperimentConfig:
    text = Path(path).read_text(encoding="utf-8")
    return parse_config(text, overrides)


def _build(parser) -> ExperimentConfig:
    data = parser["data"]
    split = parser["split"]
    source = data["source"].strip()
    if source not in ("synthetic", "files"):
        raise ConfigError(f"data.source must be synthetic or files, got {source!r}")
    if source == "files":
        for key in ("features_1", "features_2", "labels"):
            if not data[key].strip():
                raise ConfigError(f"data.{key} is required for file input")

    counts = _int_list(data["per_class_count"])
    if not counts or any(c < 1 for c in counts):
        raise ConfigError("data.per_class_count needs positive integer(s)")
    if len(counts) > 1 and len(counts) != data.getint("classes"):
        raise ConfigError(
            f"data.per_class_count lists {len(counts)} values for "
            f"{data.getint('classes')} classes")
    synth = SynthSpec(
        classes=data.getint("classes"),
        d_1=data.getint("d_1"), d_2=data.getint("d_2"),
        per_class_count=counts[0] if len(counts) == 1 else counts,
        per_class_test=data.getint("per_class_test"),
        separation=(data.getfloat("separation_1"), data.getfloat("separation_2")),
        noise=(data.getfloat("noise_1"), data.getfloat("noise_2")))

    seen = _int_list(split["seen_classes"])
    unseen = _int_list(split["unseen_classes"])
    open_set = None
    if seen or unseen:
        if not (seen and unseen):
            raise ConfigError(
                "open-set runs need both split.seen_classes and "
                "split.unseen_classes")
        open_set = (seen, unseen, split.getfloat("kappa"))

    weights = LossWeights(
        alpha_ce=parser["loss"].getfloat("alpha_ce"),
        alpha_c=parser["loss"].getfloat("alpha_c"),
        alpha_ent=parser["loss"].getfloat("alpha_ent"),
        alpha_r=parser["loss"].getfloat("alpha_r"))

    train = {
        "learning_rate": parser["train"].getfloat("learning_rate"),
        "lr_decay_epoch": parser["train"].getint("lr_decay_epoch"),
        "lr_decay_factor": parser["train"].getfloat("lr_decay_factor"),
        "epochs": parser["train"].getint("epochs"),
        "patience": parser["train"].getint("patience"),
        "batch_size": parser["train"].getint("batch_size"),
        "center_lr_scale": parser["train"].getfloat("center_lr_scale"),
    }

    modes = tuple(m for m in parser["run"]["modes"].replace(",", " ").split())
    if not modes:
        raise ConfigError("run.modes must name at least one mode")
    for m in modes:
        if m not in MODES:
            raise ConfigError(f"unknown mode {m!r} (choose from {MODES})")
    repetitions = parser["run"].getint("repetitions")
    if repetitions < 1:
        raise ConfigError("run.repetitions must be >= 1")

    config = ExperimentConfig(
        source=source,
        feature_paths=(data["features_1"].strip(), data["features_2"].strip()),
        labels_path=data["labels"].strip(),
        splits_file=data["splits_file"].strip(),
        synth=synth,
        rho=split.getfloat("rho"),
        val_fraction=split.getfloat("val_fraction"),
        test_fraction=split.getfloat("test_fraction"),
        open_set=open_set,
        hidden=parser["network"].getint("hidden"),
        dropout=parser["network"].getfloat("dropout"),
        weights=weights,
        train=train,
        tau=parser["lpf"].getfloat("tau"),
        max_iterations=parser["lpf"].getint("max_iterations"),
        finetune_learning_rate=parser["lpf"].getfloat("finetune_learning_rate"),
        finetune_epochs=parser["lpf"].getint("finetune_epochs"),
        r=parser["eval"].getint("r"),
        ridge=parser["eval"].getfloat("ridge"),
        modes=modes,
        repetitions=repetitions,
        seed=parser["run"].getint("seed"),
        output_dir=parser["run"]["output_dir"].strip(),
        raw=parser)
    # surface range errors (tau, rho, ...) now rather than mid-experiment
    config.split_spec(0)
    config.lpf_config(0)
    return config
