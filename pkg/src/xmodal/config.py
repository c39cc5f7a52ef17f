"""Run configuration: one flat key=value text file drives every command.

Unknown keys are rejected by name. ``RunConfig`` materializes the
network config, loss config, dataset spec, and ablation switches.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import get_type_hints

from .data import DatasetSpec
from .losses import LossConfig
from .network import ConfigError, NetConfig, Switches


@dataclass
class RunConfig:
    # image / network
    image_channels: int = 1
    image_height: int = 24
    image_width: int = 12
    backbone_channels: tuple[int, int, int] = (4, 8, 16)
    backbone_strides: tuple[int, int, int] = (1, 1, 2)
    appearance_channels: tuple[int, int] = (8, 8)
    depth: int = 4
    relation_channels: int = 8
    num_parts: int = 6
    num_identities: int = 20
    embed_dim: int = 16
    level2_spatial_stride: int = 2
    dtype: str = "f64"
    # losses
    margin_ranking: float = 0.3
    margin_quadruplet: float = 0.3
    margin_triplet: float = 0.3
    normalize_inputs: bool = True
    # synthetic data
    images_per_identity: int = 8
    latent_dim: int = 8
    modality_mix_strength: float = 0.8
    modality_bias_strength: float = 0.5
    noise_sigma: float = 0.05
    latent_jitter: float = 0.1
    data_seed: int = 0
    flip_prob: float = 0.5
    # optimization
    lr_specific: float = 0.01
    lr_shared: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0005
    decay_factor: float = 0.1
    decay_every_epochs: int = 7
    # schedule / sampling
    n_ids: int = 8
    k_per_mod: int = 4
    epochs: int = 15
    batches_per_epoch: int = 50
    seed: int = 0
    # ablation switches
    use_appearance: bool = True
    use_relation: bool = True
    use_multi_level: bool = True
    use_parts: bool = True
    loss: str = "quadruplet"

    def __post_init__(self):
        if min(self.lr_specific, self.lr_shared) <= 0:
            raise ConfigError("learning rates must be positive")
        if self.loss not in ("quadruplet", "ranking"):
            raise ConfigError(f"loss must be 'quadruplet' or 'ranking', got '{self.loss}'")
        if self.epochs < 0 or self.batches_per_epoch < 1:
            raise ConfigError("epochs must be >= 0 and batches_per_epoch >= 1")

    def net_config(self) -> NetConfig:
        return NetConfig(
            image_shape=(self.image_channels, self.image_height, self.image_width),
            backbone_channels=self.backbone_channels,
            backbone_strides=self.backbone_strides,
            appearance_channels=self.appearance_channels,
            depth=self.depth,
            relation_channels=self.relation_channels,
            num_parts=self.num_parts,
            num_identities=self.num_identities,
            embed_dim=self.embed_dim,
            level2_spatial_stride=self.level2_spatial_stride,
            dtype=self.dtype,
        )

    def loss_config(self) -> LossConfig:
        return LossConfig(
            margin_ranking=self.margin_ranking,
            margin_quadruplet=self.margin_quadruplet,
            margin_triplet=self.margin_triplet,
            normalize_inputs=self.normalize_inputs,
        )

    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(
            num_identities=self.num_identities,
            images_per_identity=self.images_per_identity,
            image_shape=(self.image_channels, self.image_height, self.image_width),
            latent_dim=self.latent_dim,
            modality_mix_strength=self.modality_mix_strength,
            modality_bias_strength=self.modality_bias_strength,
            noise_sigma=self.noise_sigma,
            latent_jitter=self.latent_jitter,
            seed=self.data_seed,
        )

    def switches(self) -> Switches:
        return Switches(
            use_appearance=self.use_appearance,
            use_relation=self.use_relation,
            use_multi_level=self.use_multi_level,
            use_parts=self.use_parts,
            loss=self.loss,
        )

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for f in fields(self):
                value = getattr(self, f.name)
                if isinstance(value, tuple):
                    value = ",".join(str(v) for v in value)
                elif isinstance(value, bool):
                    value = "true" if value else "false"
                fh.write(f"{f.name}={value}\n")

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        raw: dict[str, str] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got '{line}'")
                key, _, value = line.partition("=")
                raw[key.strip()] = value.strip()
        return cls.from_dict(raw, source=str(path))

    @classmethod
    def from_dict(cls, raw: dict[str, str], source: str = "<config>") -> "RunConfig":
        hints = get_type_hints(cls)
        known = {f.name: hints[f.name] for f in fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            if key not in known:
                raise ConfigError(f"{source}: unknown config key '{key}'")
            kwargs[key] = _parse_value(key, value, known[key], source)
        return cls(**kwargs)


def _parse_value(key: str, value, hint, source: str):
    if not isinstance(value, str):
        return value
    try:
        if hint is bool:
            low = value.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(value)
        if hint is int:
            return int(value)
        if hint is float:
            return float(value)
        if hint is str:
            return value
        # remaining hints are int tuples
        return tuple(int(v) for v in value.split(","))
    except ValueError as exc:
        raise ConfigError(f"{source}: bad value for '{key}': {value!r}") from exc
