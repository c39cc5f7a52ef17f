"""Synthetic two-modality identity dataset and the N x K batch sampler.

Each identity owns a latent vector; an image is a fixed nonlinear
rendering of (latent + per-image jitter), pushed through that modality's
fixed channel-mixing map and bias, plus Gaussian pixel noise. The same
latent drives both modalities, so cross-modality matching has ground
truth. Everything is determined by the spec's seed.

Modality labels: 0 = RGB, 1 = IR.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from typing import BinaryIO

import numpy as np

RGB, IR = 0, 1

_MAGIC = b"XMDS"
_VERSION = 1


@dataclass
class DatasetSpec:
    num_identities: int = 20
    images_per_identity: int = 8  # per modality
    image_shape: tuple[int, int, int] = (1, 24, 12)
    latent_dim: int = 8
    modality_mix_strength: float = 0.8
    modality_bias_strength: float = 0.5
    noise_sigma: float = 0.05
    latent_jitter: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.image_shape = tuple(int(v) for v in self.image_shape)
        if self.num_identities < 2:
            raise ValueError(f"need >= 2 identities, got {self.num_identities}")
        if self.images_per_identity < 1:
            raise ValueError("need >= 1 image per identity per modality")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be positive")
        if min(self.noise_sigma, self.latent_jitter) < 0:
            raise ValueError("noise_sigma and latent_jitter must be nonnegative")


@dataclass
class Dataset:
    spec: DatasetSpec
    images: np.ndarray  # [M, C, H, W] float64
    ids: np.ndarray  # [M] int
    mods: np.ndarray  # [M] int, 0=RGB 1=IR
    latents: np.ndarray  # [num_identities, latent_dim]

    def __len__(self) -> int:
        return len(self.ids)

    def indices_by_id_mod(self) -> dict[tuple[int, int], np.ndarray]:
        table: dict[tuple[int, int], list[int]] = {}
        for i, (pid, m) in enumerate(zip(self.ids, self.mods)):
            table.setdefault((int(pid), int(m)), []).append(i)
        return {k: np.asarray(v, dtype=np.intp) for k, v in table.items()}


def generate_dataset(spec: DatasetSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    c, h, w = spec.image_shape
    pixels = c * h * w

    latents = rng.standard_normal((spec.num_identities, spec.latent_dim))
    render = rng.standard_normal((pixels, spec.latent_dim)) / np.sqrt(spec.latent_dim)
    mixes = []
    biases = []
    for _ in range(2):
        mixes.append(np.eye(c) + spec.modality_mix_strength * rng.standard_normal((c, c)))
        biases.append(spec.modality_bias_strength * rng.standard_normal(c))

    count = spec.num_identities * 2 * spec.images_per_identity
    images = np.empty((count, c, h, w), dtype=np.float64)
    ids = np.empty(count, dtype=np.int64)
    mods = np.empty(count, dtype=np.int64)

    i = 0
    for pid in range(spec.num_identities):
        for mod in (RGB, IR):
            for _ in range(spec.images_per_identity):
                z = latents[pid] + spec.latent_jitter * rng.standard_normal(spec.latent_dim)
                base = np.tanh(render @ z).reshape(c, h, w)
                img = np.einsum("oc,chw->ohw", mixes[mod], base) + biases[mod][:, None, None]
                img += spec.noise_sigma * rng.standard_normal((c, h, w))
                images[i] = img
                ids[i] = pid
                mods[i] = mod
                i += 1
    return Dataset(spec, images, ids, mods, latents)


@dataclass
class Batch:
    """2*N*K images: N identities, K per modality per identity."""

    indices: np.ndarray
    ids: np.ndarray
    mods: np.ndarray
    dataset: Dataset

    def images(self) -> np.ndarray:
        return self.dataset.images[self.indices]

    def __len__(self) -> int:
        return len(self.indices)


def sample_batch(dataset: Dataset, n_ids: int, k_per_mod: int,
                 rng: np.random.Generator,
                 index: dict[tuple[int, int], np.ndarray] | None = None) -> Batch:
    """Uniformly pick N identities without replacement, then K images per
    modality per identity without replacement."""
    spec = dataset.spec
    if n_ids > spec.num_identities:
        raise ValueError(f"requested {n_ids} identities, dataset has {spec.num_identities}")
    index = index if index is not None else dataset.indices_by_id_mod()
    chosen = rng.choice(spec.num_identities, size=n_ids, replace=False)
    picks = []
    for pid in chosen:
        for mod in (RGB, IR):
            pool = index[(int(pid), mod)]
            if len(pool) < k_per_mod:
                raise ValueError(
                    f"identity {pid} has only {len(pool)} images in modality {mod}, "
                    f"need {k_per_mod}"
                )
            picks.append(rng.choice(pool, size=k_per_mod, replace=False))
    indices = np.concatenate(picks)
    return Batch(indices, dataset.ids[indices].copy(), dataset.mods[indices].copy(), dataset)


def augment_flip(image: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    """Mirror the width axis with probability p."""
    if p > 0 and rng.random() < p:
        return image[..., ::-1].copy()
    return image.copy()


def save_dataset(dataset: Dataset, path) -> None:
    """Binary container: magic, version u32, spec echo (u32-length JSON),
    image count u32, then per-image records (id u32, modality u8, f32
    pixels little-endian)."""
    spec_json = json.dumps(asdict(dataset.spec)).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<I", len(spec_json)))
        fh.write(spec_json)
        fh.write(struct.pack("<I", len(dataset)))
        for img, pid, mod in zip(dataset.images, dataset.ids, dataset.mods):
            fh.write(struct.pack("<IB", int(pid), int(mod)))
            fh.write(img.astype("<f4").tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ValueError("truncated dataset file")
    return buf


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != _MAGIC:
            raise ValueError(f"{path}: not a dataset file (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported dataset version {version}")
        (spec_len,) = struct.unpack("<I", _read_exact(fh, 4))
        spec_dict = json.loads(_read_exact(fh, spec_len).decode("utf-8"))
        spec = DatasetSpec(**{k: tuple(v) if k == "image_shape" else v for k, v in spec_dict.items()})
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        c, h, w = spec.image_shape
        pixels = c * h * w
        images = np.empty((count, c, h, w), dtype=np.float64)
        ids = np.empty(count, dtype=np.int64)
        mods = np.empty(count, dtype=np.int64)
        for i in range(count):
            pid, mod = struct.unpack("<IB", _read_exact(fh, 5))
            images[i] = np.frombuffer(_read_exact(fh, 4 * pixels), dtype="<f4").reshape(c, h, w)
            ids[i] = pid
            mods[i] = mod
    # latents are not persisted; they are derivable from the seeded spec
    latents = np.random.default_rng(spec.seed).standard_normal((spec.num_identities, spec.latent_dim))
    return Dataset(spec, images, ids, mods, latents)
