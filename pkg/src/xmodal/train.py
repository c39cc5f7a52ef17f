"""Training loop: sample N x K two-modality batches, minimize the total
loss with per-group SGD, decay learning rates on an epoch schedule."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses as L
from . import tensor as T
from .checkpoint import save_checkpoint
from .config import RunConfig
from .data import Dataset, augment_flip, generate_dataset, sample_batch
from .network import Model
from .optim import SGD, decayed_lr


@dataclass
class TrainResult:
    model: Model
    history: list[dict] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)

    def loss_curve(self) -> list[float]:
        return [b for e in self.history for b in e["batch_losses"]]


def run_training(cfg: RunConfig, out_dir: Path | str | None = None,
                 seed: int | None = None, dataset: Dataset | None = None,
                 log=None) -> TrainResult:
    seed = cfg.seed if seed is None else seed
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        cfg.to_file(out / "config_resolved.cfg")

    if dataset is None:
        dataset = generate_dataset(cfg.dataset_spec())
    index = dataset.indices_by_id_mod()

    model = Model.initialize(cfg.net_config(), seed, cfg.switches())
    opt = SGD(
        model.trainable_params(),
        {"modality_specific": cfg.lr_specific, "shared": cfg.lr_shared},
        momentum=cfg.momentum,
        weight_decay=cfg.weight_decay,
    )
    loss_cfg = cfg.loss_config()
    rng = np.random.default_rng(seed)

    result = TrainResult(model=model)
    for epoch in range(cfg.epochs):
        scale = cfg.decay_factor ** (epoch // cfg.decay_every_epochs)
        opt.lr_scale = scale
        lr_specific = cfg.lr_specific * scale
        lr_shared = cfg.lr_shared * scale
        assert lr_specific == decayed_lr(cfg.lr_specific, epoch, cfg.decay_factor,
                                         cfg.decay_every_epochs)

        batch_losses = []
        for _ in range(cfg.batches_per_epoch):
            batch = sample_batch(dataset, cfg.n_ids, cfg.k_per_mod, rng, index)
            images = batch.images()
            if cfg.flip_prob > 0:
                images = np.stack([augment_flip(im, cfg.flip_prob, rng) for im in images])
            bundle = model.forward(images, batch.mods)
            total, _ = L.total_loss(bundle.parts, bundle.logits, batch.ids, batch.mods,
                                    loss_cfg, cfg.loss)
            opt.zero_grad()
            T.backward(total)
            opt.step()
            batch_losses.append(total.item())

        entry = {
            "epoch": epoch,
            "lr_specific": lr_specific,
            "lr_shared": lr_shared,
            "mean_loss": float(np.mean(batch_losses)),
            "batch_losses": batch_losses,
        }
        result.history.append(entry)
        if log is not None:
            log(f"epoch {epoch}: mean loss {entry['mean_loss']:.4f} "
                f"(lr {lr_specific:g}/{lr_shared:g})")
        if out is not None:
            path = out / f"checkpoint_epoch{epoch:03d}.mtmf"
            save_checkpoint(model.params.state_arrays(), path)
            result.checkpoints.append(path)

    if out is not None:
        if cfg.epochs == 0:
            # checkpoint equals initialization when no epochs run
            path = out / "checkpoint_epoch000.mtmf"
            save_checkpoint(model.params.state_arrays(), path)
            result.checkpoints.append(path)
        with open(out / "loss_curves.json", "w", encoding="utf-8") as fh:
            json.dump({"seed": seed, "epochs": result.history}, fh, indent=2)
            fh.write("\n")
    return result
