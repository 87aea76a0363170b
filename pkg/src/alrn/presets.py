"""Named hyperparameter presets and the run-configuration document.

A run configuration is one JSON object with optional sections ``model``,
``loss``, ``train``, ``gzsl``, ``synth`` and ``paths``. Unknown sections or
keys are rejected. Missing keys fall back to the chosen preset.
"""

import copy
import json
from dataclasses import dataclass, field, fields

from .data_io import SynthSpec
from .evaluator import GzslConfig
from .model import ModelConfig
from .objective import LossConfig
from .trainer import TrainConfig

_OPTIM = {"learning_rate": 0.001, "momentum": 0.9, "weight_decay": 1e-5,
          "n_way": 16, "k_shot": 2, "batches_per_epoch": 300, "epochs_total": 20}

PRESETS = {
    "cub": {"loss": {"tau": 35.0, "lam": 1.0}, "gzsl": {"mu": 2.35},
            "train": dict(_OPTIM, n_pre=5)},
    "sun": {"loss": {"tau": 20.0, "lam": 1.5}, "gzsl": {"mu": 1.5},
            "train": dict(_OPTIM, n_pre=5)},
    "awa2": {"loss": {"tau": 20.0, "lam": 1.0}, "gzsl": {"mu": 3.9},
             "train": dict(_OPTIM, n_pre=1)},
    # desk-scale benchmark: 12 seen classes cannot fill 16-way episodes
    "synth-default": {"loss": {"tau": 20.0, "lam": 1.0}, "gzsl": {"mu": 3.0},
                      "train": dict(_OPTIM, n_pre=5, n_way=12, k_shot=2,
                                    batches_per_epoch=50)},
}

ABLATIONS = ("no-arm", "no-scu", "no-global", "no-mse", "softmax-revision")

_MODEL_KEYS = {"num_attributes", "feature_channels", "input_channels", "use_scu",
               "use_global", "use_arm", "revision_activation", "adapter"}
_TRAIN_KEYS = {"n_pre", "epochs_total", "batches_per_epoch", "n_way", "k_shot",
               "learning_rate", "momentum", "weight_decay", "seed"}
_SECTIONS = {
    "model": _MODEL_KEYS,
    "loss": {"tau", "lam"},
    "train": _TRAIN_KEYS,
    "gzsl": {"mu"},
    "synth": {f.name for f in fields(SynthSpec)},
    "paths": {"manifest", "out", "checkpoint"},
}


class RunConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    preset: str = "synth-default"
    model: dict = field(default_factory=dict)
    loss: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    gzsl: dict = field(default_factory=dict)
    synth: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)
    ablation: str = None

    @classmethod
    def from_dict(cls, doc, preset=None):
        doc = dict(doc or {})
        name = preset or doc.pop("preset", None) or "synth-default"
        doc.pop("preset", None)
        ablation = doc.pop("ablation", None)
        if name not in PRESETS:
            raise RunConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        for section, body in doc.items():
            if section not in _SECTIONS:
                raise RunConfigError(f"unknown config section {section!r}")
            if not isinstance(body, dict):
                raise RunConfigError(f"section {section!r} must be an object")
            unknown = set(body) - _SECTIONS[section]
            if unknown:
                raise RunConfigError(f"unknown keys in {section!r}: {sorted(unknown)}")
        base = copy.deepcopy(PRESETS[name])
        merged = {s: dict(base.get(s, {}), **doc.get(s, {})) for s in _SECTIONS}
        if ablation is not None and ablation not in ABLATIONS:
            raise RunConfigError(f"unknown ablation {ablation!r}")
        return cls(preset=name, ablation=ablation, **merged)

    @classmethod
    def load(cls, path, preset=None):
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise RunConfigError(f"{path}: {exc}") from None
        return cls.from_dict(doc, preset)

    def synth_spec(self):
        return SynthSpec(**self.synth)

    def model_config(self, num_attributes=None, feature_channels=None):
        body = dict(self.model)
        body.setdefault("num_attributes", num_attributes)
        body.setdefault("feature_channels", feature_channels)
        if body["num_attributes"] is None or body["feature_channels"] is None:
            raise RunConfigError("model.num_attributes and model.feature_channels are required")
        return ModelConfig(**body).with_ablation(self.ablation)

    def loss_config(self):
        body = dict(self.loss)
        if self.ablation == "no-mse":
            body["lam"] = 0.0
        return LossConfig(**body)

    def train_config(self, model_cfg):
        body = dict(self.train)
        return TrainConfig(model_cfg=model_cfg, loss_cfg=self.loss_config(), **body)

    def gzsl_config(self):
        return GzslConfig(mu=self.gzsl.get("mu", 0.0), tau=self.loss_config().tau)

    def to_dict(self):
        return {"preset": self.preset, "ablation": self.ablation, "model": self.model,
                "loss": self.loss, "train": self.train, "gzsl": self.gzsl,
                "synth": self.synth, "paths": self.paths}
