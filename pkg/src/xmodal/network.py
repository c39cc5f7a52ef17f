"""Two-stream cross-modality feature network.

Each image passes through a modality-specific conv stack (separate
weights for RGB and IR), then through shared layers: a 2D appearance
stream and a 3D relation stream. The relation stream regroups channels
into a depth axis (``channels_to_depth``), runs stacked 3D convolutions,
and is flattened back (``depth_to_channels``) and concatenated with the
appearance maps. Part heads split the fused maps into horizontal bands,
pool each band, and emit one embedding plus one identity classifier per
(level, part) slot.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from . import nn_ops, tensor as T
from .tensor import Tensor

MODALITIES = ("rgb", "ir")


class ConfigError(ValueError):
    """Configuration values are inconsistent or out of range."""


@dataclass
class NetConfig:
    image_shape: tuple[int, int, int] = (1, 24, 12)  # (channels, H, W)
    backbone_channels: tuple[int, int, int] = (4, 8, 16)
    backbone_strides: tuple[int, int, int] = (1, 1, 2)
    appearance_channels: tuple[int, int] = (8, 8)
    depth: int = 4
    relation_channels: int = 8  # flattened relation channels per level (= groups * depth)
    num_parts: int = 6
    num_identities: int = 20
    embed_dim: int = 16
    level2_spatial_stride: int = 2
    dtype: str = "f64"

    def __post_init__(self):
        self.image_shape = tuple(int(v) for v in self.image_shape)
        self.backbone_channels = tuple(int(v) for v in self.backbone_channels)
        self.backbone_strides = tuple(int(v) for v in self.backbone_strides)
        self.appearance_channels = tuple(int(v) for v in self.appearance_channels)
        self.validate()

    @property
    def np_dtype(self):
        if self.dtype == "f64":
            return np.float64
        if self.dtype == "f32":
            return np.float32
        raise ConfigError(f"dtype must be 'f64' or 'f32', got '{self.dtype}'")

    @property
    def relation_groups(self) -> int:
        return self.relation_channels // self.depth

    def validate(self) -> None:
        if len(self.image_shape) != 3:
            raise ConfigError(f"image_shape must be (C,H,W), got {self.image_shape}")
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        c3 = self.backbone_channels[2]
        if c3 % self.depth:
            raise ConfigError(f"backbone output channels {c3} not divisible by depth {self.depth}")
        if self.appearance_channels[0] % self.depth:
            raise ConfigError(
                f"level-1 appearance channels {self.appearance_channels[0]} "
                f"not divisible by depth {self.depth}"
            )
        if self.relation_channels % self.depth:
            raise ConfigError(
                f"relation_channels {self.relation_channels} not divisible by depth {self.depth}"
            )
        if self.num_identities < 2:
            raise ConfigError(f"need at least 2 identities, got {self.num_identities}")
        if self.num_parts < 1 or self.embed_dim < 1:
            raise ConfigError("num_parts and embed_dim must be positive")
        _, h1, w1 = self.level1_shape()
        _, h2, w2 = self.level2_shape()
        if min(h1, w1, h2, w2) < 1:
            raise ConfigError("image too small for the configured strides")
        if h2 < self.num_parts:
            raise ConfigError(
                f"level-2 feature height {h2} is smaller than num_parts {self.num_parts}"
            )

    def _strided(self, h: int, w: int, stride: int) -> tuple[int, int]:
        # 3x3 kernel, padding 1
        return (h + 2 - 3) // stride + 1, (w + 2 - 3) // stride + 1

    def backbone_shape(self) -> tuple[int, int, int]:
        _, h, w = self.image_shape
        for s in self.backbone_strides:
            h, w = self._strided(h, w, s)
        return (self.backbone_channels[2], h, w)

    def fused_channels(self, level: int, use_appearance: bool = True,
                       use_relation: bool = True) -> int:
        app = self.appearance_channels[level - 1] if use_appearance else 0
        rel = self.relation_channels if use_relation else 0
        if app + rel == 0:
            raise ConfigError("at least one of use_appearance/use_relation must be on")
        return app + rel

    def level1_shape(self) -> tuple[int, int, int]:
        _, h, w = self.backbone_shape()
        return (self.fused_channels(1), h, w)

    def level2_shape(self) -> tuple[int, int, int]:
        _, h, w = self.backbone_shape()
        h, w = self._strided(h, w, self.level2_spatial_stride)
        return (self.fused_channels(2), h, w)


class Params:
    """Named parameter tensors with a group tag per parameter.

    Group tags ('modality_specific' / 'shared') select the per-group
    learning rate in the optimizer.
    """

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}
        self._groups: dict[str, str] = {}

    def register(self, name: str, tensor: Tensor, group: str) -> Tensor:
        if name in self._tensors:
            raise KeyError(f"duplicate parameter '{name}'")
        tensor.requires_grad = True
        self._tensors[name] = tensor
        self._groups[name] = group
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._tensors.items())

    def group_of(self, name: str) -> str:
        return self._groups[name]

    def subset(self, names) -> "Params":
        sub = Params()
        for n in names:
            sub._tensors[n] = self._tensors[n]
            sub._groups[n] = self._groups[n]
        return sub

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {n: t.data for n, t in self._tensors.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self._tensors) - set(arrays)
        extra = set(arrays) - set(self._tensors)
        if missing or extra:
            raise KeyError(f"parameter name mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for n, arr in arrays.items():
            t = self._tensors[n]
            if t.data.shape != arr.shape:
                raise ConfigError(f"parameter '{n}': shape {arr.shape} != expected {t.data.shape}")
            t.data = arr.astype(t.data.dtype)


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    # uniform fan-in scaling with ReLU gain: U(-sqrt(6/fan), sqrt(6/fan))
    bound = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype))


def init_params(config: NetConfig, rng: np.random.Generator,
                switches: "Switches | None" = None) -> Params:
    """Create all parameter groups: uniform fan-in scaled weights, zero biases.

    Part-head embeddings are sized for the fused maps produced under
    ``switches`` (ablations drop the appearance or relation channels).
    """
    sw = switches or Switches()
    p = Params()
    dt = config.np_dtype

    def conv2(name, cin, cout, group):
        fan = cin * 9
        p.register(f"{name}.w", _uniform(rng, (cout, cin, 3, 3), fan, dt), group)
        p.register(f"{name}.b", Tensor(np.zeros(cout, dtype=dt)), group)

    def conv3(name, gin, gout, group):
        fan = gin * 27
        p.register(f"{name}.w", _uniform(rng, (gout, gin, 3, 3, 3), fan, dt), group)
        p.register(f"{name}.b", Tensor(np.zeros(gout, dtype=dt)), group)

    def fc(name, fin, fout, group):
        p.register(f"{name}.w", _uniform(rng, (fin, fout), fin, dt), group)
        p.register(f"{name}.b", Tensor(np.zeros(fout, dtype=dt)), group)

    c_img = config.image_shape[0]
    c1, c2, c3 = config.backbone_channels
    for mod in MODALITIES:
        conv2(f"{mod}.stage1", c_img, c1, "modality_specific")
        conv2(f"{mod}.stage2", c1, c2, "modality_specific")
        conv2(f"{mod}.stage3", c2, c3, "modality_specific")

    a1, a2 = config.appearance_channels
    conv2("app1", c3, a1, "shared")
    conv2("app2", a1, a2, "shared")

    g = config.relation_groups
    conv3("rel_specific.conv1", c3 // config.depth, g, "shared")
    conv3("rel_specific.conv2", g, g, "shared")
    conv3("rel_appearance.conv1", a1 // config.depth, g, "shared")
    conv3("rel_appearance.conv2", g, g, "shared")
    conv3("rel_level2.conv1", g, g, "shared")
    conv3("rel_level2.conv2", g, g, "shared")

    fused_channels = {
        level: config.fused_channels(level, sw.use_appearance, sw.use_relation)
        for level in (1, 2)
    }
    for level in (1, 2):
        for k in range(config.num_parts):
            fc(f"part.l{level}.p{k}.emb", fused_channels[level], config.embed_dim, "shared")
            fc(f"part.l{level}.p{k}.cls", config.embed_dim, config.num_identities, "shared")
    return p


def channels_to_depth(x: Tensor, depth: int) -> Tensor:
    """Regroup [.., C, H, W] into [.., C/depth, depth, H, W].

    Contiguous grouping: channel c lands at (group c // depth, slot c % depth).
    """
    shape = x.shape
    if len(shape) not in (3, 4):
        raise ConfigError(f"channels_to_depth: rank must be 3 or 4, got shape {shape}")
    c = shape[-3]
    if c % depth:
        raise ConfigError(f"channels_to_depth: {c} channels not divisible by depth {depth}")
    new = shape[:-3] + (c // depth, depth) + shape[-2:]
    return T.reshape_view(x, new)


def depth_to_channels(y: Tensor) -> Tensor:
    """Exact inverse of channels_to_depth: [.., G, D, H, W] -> [.., G*D, H, W]."""
    shape = y.shape
    if len(shape) not in (4, 5):
        raise ConfigError(f"depth_to_channels: rank must be 4 or 5, got shape {shape}")
    new = shape[:-4] + (shape[-4] * shape[-3],) + shape[-2:]
    return T.reshape_view(y, new)


def part_bands(height: int, num_parts: int) -> list[tuple[int, int]]:
    """Split ``height`` rows into contiguous bands; earlier bands absorb the
    remainder rows."""
    if height < num_parts:
        raise ConfigError(f"feature height {height} is smaller than num_parts {num_parts}")
    base, extra = divmod(height, num_parts)
    bands = []
    start = 0
    for k in range(num_parts):
        size = base + (1 if k < extra else 0)
        bands.append((start, start + size))
        start += size
    return bands


@dataclass
class FeatureBundle:
    """Per-batch activations of interest plus part embeddings and logits."""

    specific: Tensor
    appearance1: Optional[Tensor] = None
    appearance2: Optional[Tensor] = None
    relation1a: Optional[Tensor] = None
    relation1b: Optional[Tensor] = None
    relation1: Optional[Tensor] = None
    relation2: Optional[Tensor] = None
    fused1: Optional[Tensor] = None
    fused2: Optional[Tensor] = None
    parts: dict[tuple[int, int], Tensor] = field(default_factory=dict)
    logits: dict[tuple[int, int], Tensor] = field(default_factory=dict)


def _conv_relu(x, params, name, stride=1):
    return T.relu(nn_ops.conv2d(x, params[f"{name}.w"], params[f"{name}.b"], stride, 1))


def _relation_block(x, params, name, first_stride=(1, 1, 1)):
    # two stacked 3x3x3 convolutions with ReLU between and after
    h = T.relu(nn_ops.conv3d(x, params[f"{name}.conv1.w"], params[f"{name}.conv1.b"],
                             first_stride, (1, 1, 1)))
    return T.relu(nn_ops.conv3d(h, params[f"{name}.conv2.w"], params[f"{name}.conv2.b"],
                                (1, 1, 1), (1, 1, 1)))


def forward_specific(images: Tensor, modality: str, params: Params, config: NetConfig) -> Tensor:
    """Run one modality's private conv stack. ``modality`` is 'rgb' or 'ir'."""
    if modality not in MODALITIES:
        raise ValueError(f"unknown modality '{modality}' (expected one of {MODALITIES})")
    x = images
    for stage, stride in enumerate(config.backbone_strides, start=1):
        x = _conv_relu(x, params, f"{modality}.stage{stage}", stride)
    return x


def forward_shared(specific: Tensor, params: Params, config: NetConfig,
                   use_appearance: bool = True, use_relation: bool = True) -> FeatureBundle:
    """Run the shared appearance and relation streams and fuse per level."""
    bundle = FeatureBundle(specific=specific)
    s2 = config.level2_spatial_stride

    bundle.appearance1 = _conv_relu(specific, params, "app1")
    if use_appearance:
        bundle.appearance2 = _conv_relu(bundle.appearance1, params, "app2", s2)

    if use_relation:
        bundle.relation1a = _relation_block(
            channels_to_depth(specific, config.depth), params, "rel_specific")
        bundle.relation1b = _relation_block(
            channels_to_depth(bundle.appearance1, config.depth), params, "rel_appearance")
        bundle.relation1 = T.add(bundle.relation1a, bundle.relation1b)
        bundle.relation2 = _relation_block(
            bundle.relation1, params, "rel_level2", first_stride=(1, s2, s2))

    axis = 1 if specific.data.ndim == 4 else 0
    if use_appearance and use_relation:
        bundle.fused1 = T.concat([bundle.appearance1, depth_to_channels(bundle.relation1)], axis)
        bundle.fused2 = T.concat([bundle.appearance2, depth_to_channels(bundle.relation2)], axis)
    elif use_appearance:
        bundle.fused1 = bundle.appearance1
        bundle.fused2 = bundle.appearance2
    elif use_relation:
        bundle.fused1 = depth_to_channels(bundle.relation1)
        bundle.fused2 = depth_to_channels(bundle.relation2)
    else:
        raise ConfigError("at least one of use_appearance/use_relation must be on")
    return bundle


def part_heads(bundle: FeatureBundle, params: Params, config: NetConfig,
               use_multi_level: bool = True, use_parts: bool = True) -> FeatureBundle:
    """Band-split each fused map, pool, and attach embeddings and logits."""
    levels = (1, 2) if use_multi_level else (2,)
    n_parts = config.num_parts if use_parts else 1
    for level in levels:
        fmap = bundle.fused1 if level == 1 else bundle.fused2
        height = fmap.shape[-2]
        bands = part_bands(height, n_parts) if use_parts else [(0, height)]
        for k, (lo, hi) in enumerate(bands):
            band = _slice_rows(fmap, lo, hi)
            pooled = nn_ops.global_avg_pool(band)
            emb = nn_ops.fully_connected(
                pooled, params[f"part.l{level}.p{k}.emb.w"], params[f"part.l{level}.p{k}.emb.b"])
            logits = nn_ops.fully_connected(
                emb, params[f"part.l{level}.p{k}.cls.w"], params[f"part.l{level}.p{k}.cls.b"])
            bundle.parts[(level, k)] = emb
            bundle.logits[(level, k)] = logits
    return bundle


def _slice_rows(fmap: Tensor, lo: int, hi: int) -> Tensor:
    # differentiable row-band slice along the H axis
    data = fmap.data[..., lo:hi, :]

    def vjp(g):
        gx = np.zeros_like(fmap.data)
        gx[..., lo:hi, :] = g
        return (gx,)

    return T._from_op(data.copy(), (fmap,), vjp)


@dataclass
class Switches:
    """Ablation switches; all on reproduces the full model."""

    use_appearance: bool = True
    use_relation: bool = True
    use_multi_level: bool = True
    use_parts: bool = True
    loss: str = "quadruplet"  # 'quadruplet' or 'ranking'


class Model:
    """Bundles config, parameters, and ablation switches."""

    def __init__(self, config: NetConfig, params: Params, switches: Switches | None = None):
        self.config = config
        self.params = params
        self.switches = switches or Switches()

    @classmethod
    def initialize(cls, config: NetConfig, seed: int, switches: Switches | None = None) -> "Model":
        rng = np.random.default_rng(seed)
        return cls(config, init_params(config, rng, switches), switches)

    def forward(self, images: np.ndarray, modalities: np.ndarray) -> FeatureBundle:
        """Forward a mixed-modality batch, preserving input order."""
        images = np.ascontiguousarray(images, dtype=self.config.np_dtype)
        mods = np.asarray(modalities)
        rgb_idx = np.flatnonzero(mods == 0)
        ir_idx = np.flatnonzero(mods == 1)
        chunks = []
        order = []
        if rgb_idx.size:
            chunks.append(forward_specific(Tensor(images[rgb_idx]), "rgb", self.params, self.config))
            order.append(rgb_idx)
        if ir_idx.size:
            chunks.append(forward_specific(Tensor(images[ir_idx]), "ir", self.params, self.config))
            order.append(ir_idx)
        stacked = chunks[0] if len(chunks) == 1 else T.concat(chunks, axis=0)
        perm = np.empty(mods.size, dtype=np.intp)
        perm[np.concatenate(order)] = np.arange(mods.size)
        specific = T.index_rows(stacked, perm)
        sw = self.switches
        bundle = forward_shared(specific, self.params, self.config,
                                sw.use_appearance, sw.use_relation)
        return part_heads(bundle, self.params, self.config, sw.use_multi_level, sw.use_parts)

    def descriptors(self, images: np.ndarray, modalities: np.ndarray,
                    batch_size: int = 64) -> np.ndarray:
        """Retrieval descriptor: concatenation of the active part embeddings,
        each l2-normalized."""
        outs = []
        with T.no_grad():
            for lo in range(0, len(images), batch_size):
                bundle = self.forward(images[lo:lo + batch_size], modalities[lo:lo + batch_size])
                slots = sorted(bundle.parts)
                pieces = [nn_ops.l2_normalize(bundle.parts[s]).data for s in slots]
                outs.append(np.concatenate(pieces, axis=1))
        return np.concatenate(outs, axis=0)

    def active_param_names(self) -> list[str]:
        """Parameters actually consumed under the current switches."""
        sw = self.switches
        names = []
        for n in self.params.names():
            head = n.split(".", 1)[0]
            if head in ("rgb", "ir", "app1"):
                names.append(n)
            elif head == "app2":
                if sw.use_appearance:
                    names.append(n)
            elif head.startswith("rel_"):
                if sw.use_relation:
                    names.append(n)
            elif head == "part":
                _, lvl, prt, _rest = n.split(".", 3)
                level = int(lvl[1:])
                k = int(prt[1:])
                if not sw.use_multi_level and level == 1:
                    continue
                if k >= (self.config.num_parts if sw.use_parts else 1):
                    continue
                names.append(n)
        return names

    def trainable_params(self) -> Params:
        return self.params.subset(self.active_param_names())
