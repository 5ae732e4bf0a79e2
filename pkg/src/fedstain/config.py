"""Run configuration: nested YAML sections with strict key checking.

Sections: ``fed`` (rounds, epochs, batching, statistic exchange, the
non-IID alpha, learning-rate schedule), ``augment``, ``loss``, ``model``,
``data`` (manifest path or generator specs), ``ablation``, plus the
top-level ``seeds`` list.  Unknown keys are rejected so typos fail loudly,
and parse -> serialize -> parse is lossless.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .augment import AugmentConfig
from .errors import ConfigError
from .federation import FedConfig
from .losses import LossWeights
from .model import ModelLayout
from .optim import ScheduleSpec
from .stats import StatKind
from .synthetic import DomainSpec, default_domain_specs

_FED_KEYS = {
    "n_round",
    "n_epochs",
    "batch_size",
    "stat_ratio",
    "alpha",
    "num_clients_per_domain",
    "mode",
    "master_seed",
    "color_space",
    "lr_start",
    "lr_end",
    "lr_schedule",
}
_AUG_KEYS = {
    "randstain_prob",
    "mixstyle_beta_alpha",
    "augmix_chains",
    "augmix_depth_min",
    "augmix_depth_max",
    "literal_reconstruction",
    "mixstyle_level",
}
_LOSS_KEYS = {"alpha", "beta", "tau", "cls_loss"}
_MODEL_KEYS = {"input_hw", "conv_channels", "num_classes"}
_DATA_KEYS = {"manifest", "generator"}
_GEN_KEYS = {"n_samples", "image_hw", "domains"}
_DOMAIN_KEYS = {"name", "mean", "std", "skewness", "kurtosis", "texture_seed", "class_balance"}
_ABLATION_KEYS = {"stat_kind", "kinds", "local_window"}
_TOP_KEYS = {"fed", "augment", "loss", "model", "data", "ablation", "seeds"}


def _check_keys(section: dict, allowed: set, where: str):
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")


@dataclass(frozen=True)
class RunConfig:
    fed: FedConfig = FedConfig()
    augment: AugmentConfig = AugmentConfig()
    loss: LossWeights = LossWeights()
    model: ModelLayout = ModelLayout()
    manifest_path: str | None = None
    generator_specs: tuple = field(default_factory=default_domain_specs)
    ablation_kinds: tuple = tuple(StatKind)
    seeds: tuple = (0, 1, 2)

    def to_dict(self) -> dict:
        fed = self.fed
        return {
            "fed": {
                "n_round": fed.n_rounds,
                "n_epochs": fed.n_epochs,
                "batch_size": fed.batch_size,
                "stat_ratio": fed.stat_ratio,
                "alpha": fed.dirichlet_alpha,
                "num_clients_per_domain": fed.clients_per_domain,
                "mode": fed.mode,
                "master_seed": fed.master_seed,
                "color_space": fed.color_space,
                "lr_start": fed.schedule.start,
                "lr_end": fed.schedule.end,
                "lr_schedule": fed.schedule.kind,
            },
            "augment": {
                "randstain_prob": self.augment.randstain_prob,
                "mixstyle_beta_alpha": self.augment.mixstyle_beta_alpha,
                "augmix_chains": self.augment.augmix_chains,
                "augmix_depth_min": self.augment.augmix_depth_min,
                "augmix_depth_max": self.augment.augmix_depth_max,
                "literal_reconstruction": self.augment.literal_reconstruction,
                "mixstyle_level": self.augment.mixstyle_level,
            },
            "loss": {
                "alpha": self.loss.alpha,
                "beta": self.loss.beta,
                "tau": self.loss.tau,
                "cls_loss": self.loss.cls_loss,
            },
            "model": {
                "input_hw": self.model.input_hw,
                "conv_channels": list(self.model.conv_channels),
                "num_classes": self.model.num_classes,
            },
            "data": (
                {"manifest": self.manifest_path}
                if self.manifest_path
                else {
                    "generator": {
                        "n_samples": self.generator_specs[0].n_samples,
                        "image_hw": self.generator_specs[0].image_hw,
                        "domains": [
                            {
                                "name": s.name,
                                "mean": list(s.mean),
                                "std": list(s.std),
                                "skewness": list(s.skewness),
                                "kurtosis": list(s.kurtosis),
                                "texture_seed": s.texture_seed,
                                "class_balance": s.class_balance,
                            }
                            for s in self.generator_specs
                        ],
                    }
                }
            ),
            "ablation": {
                "stat_kind": self.fed.stat_kind.value,
                "kinds": [k.value for k in self.ablation_kinds],
                "local_window": self.fed.pair_window,
            },
            "seeds": list(self.seeds),
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    _check_keys(raw, _TOP_KEYS, "config root")
    try:
        fed_raw = dict(raw.get("fed", {}))
        _check_keys(fed_raw, _FED_KEYS, "fed")
        aug_raw = dict(raw.get("augment", {}))
        _check_keys(aug_raw, _AUG_KEYS, "augment")
        loss_raw = dict(raw.get("loss", {}))
        _check_keys(loss_raw, _LOSS_KEYS, "loss")
        model_raw = dict(raw.get("model", {}))
        _check_keys(model_raw, _MODEL_KEYS, "model")
        data_raw = dict(raw.get("data", {}))
        _check_keys(data_raw, _DATA_KEYS, "data")
        abl_raw = dict(raw.get("ablation", {}))
        _check_keys(abl_raw, _ABLATION_KEYS, "ablation")

        schedule = ScheduleSpec(
            kind=fed_raw.get("lr_schedule", "linear"),
            start=float(fed_raw.get("lr_start", 1e-4)),
            end=float(fed_raw.get("lr_end", 2.5e-6)),
        )
        fed = FedConfig(
            n_rounds=int(fed_raw.get("n_round", 3)),
            n_epochs=int(fed_raw.get("n_epochs", 3)),
            batch_size=int(fed_raw.get("batch_size", 32)),
            stat_ratio=float(fed_raw.get("stat_ratio", 0.1)),
            dirichlet_alpha=float(fed_raw.get("alpha", 0.5)),
            clients_per_domain=int(fed_raw.get("num_clients_per_domain", 2)),
            mode=str(fed_raw.get("mode", "fedstain")),
            master_seed=int(fed_raw.get("master_seed", 0)),
            stat_kind=StatKind(abl_raw.get("stat_kind", "skewness_kurtosis")),
            color_space=str(fed_raw.get("color_space", "RGB")),
            pair_window=int(abl_raw.get("local_window", 8)),
            schedule=schedule,
        )
        augment = AugmentConfig(
            randstain_prob=float(aug_raw.get("randstain_prob", 0.9)),
            mixstyle_beta_alpha=float(aug_raw.get("mixstyle_beta_alpha", 0.1)),
            augmix_chains=int(aug_raw.get("augmix_chains", 3)),
            augmix_depth_min=int(aug_raw.get("augmix_depth_min", 1)),
            augmix_depth_max=int(aug_raw.get("augmix_depth_max", 3)),
            literal_reconstruction=bool(aug_raw.get("literal_reconstruction", False)),
            mixstyle_level=str(aug_raw.get("mixstyle_level", "pixel")),
        )
        loss = LossWeights(
            alpha=float(loss_raw.get("alpha", 1.0)),
            beta=float(loss_raw.get("beta", 1.0)),
            tau=float(loss_raw.get("tau", 0.1)),
            cls_loss=str(loss_raw.get("cls_loss", "cross_entropy")),
        )
        model = ModelLayout(
            in_channels=3,
            input_hw=int(model_raw.get("input_hw", 32)),
            conv_channels=tuple(model_raw.get("conv_channels", (16, 32, 64))),
            num_classes=int(model_raw.get("num_classes", 2)),
        )

        manifest_path = data_raw.get("manifest")
        if "generator" in data_raw:
            gen_raw = dict(data_raw["generator"])
            _check_keys(gen_raw, _GEN_KEYS, "data.generator")
            n_samples = int(gen_raw.get("n_samples", 2000))
            image_hw = int(gen_raw.get("image_hw", model.input_hw))
            specs = []
            for dom in gen_raw.get("domains", []):
                dom = dict(dom)
                _check_keys(dom, _DOMAIN_KEYS, f"generator domain {dom.get('name')!r}")
                specs.append(
                    DomainSpec(
                        name=str(dom["name"]),
                        mean=tuple(_as_triple(dom.get("mean", 0.5))),
                        std=tuple(_as_triple(dom.get("std", 0.07))),
                        skewness=tuple(_as_triple(dom.get("skewness", 0.0))),
                        kurtosis=tuple(_as_triple(dom.get("kurtosis", 3.0))),
                        texture_seed=int(dom.get("texture_seed", 0)),
                        n_samples=n_samples,
                        class_balance=float(dom.get("class_balance", 0.5)),
                        image_hw=image_hw,
                    )
                )
            generator_specs = tuple(specs) if specs else default_domain_specs(n_samples, image_hw)
        else:
            generator_specs = default_domain_specs()

        kinds = tuple(StatKind(k) for k in abl_raw.get("kinds", [k.value for k in StatKind]))
        seeds = tuple(int(s) for s in raw.get("seeds", (0, 1, 2)))
        return RunConfig(
            fed=fed,
            augment=augment,
            loss=loss,
            model=model,
            manifest_path=manifest_path,
            generator_specs=generator_specs,
            ablation_kinds=kinds,
            seeds=seeds,
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def _as_triple(value):
    if isinstance(value, (list, tuple)):
        return [float(v) for v in value]
    return [float(value)] * 3


def load_config(path) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8")
    raw = yaml.safe_load(text)
    if raw is None:
        raw = {}
    return config_from_dict(raw)


def save_config(path, config: RunConfig):
    Path(path).write_text(config.to_yaml(), encoding="utf-8")
