"""Training loop: class-balanced batches, one Adam step per batch.

Every batch contains exactly ``per_class`` samples from each class, drawn
without replacement within the batch, so each optimizer step sees every
class. An epoch is ceil(dataset / batch) such batches. The run is fully
determined by (seed, config, dataset): batch composition is keyed by the
step index and augmentation by (epoch, sample index), which also makes a
resumed run reproduce the original continuation bit for bit.

The loop aborts rather than degrade: a non-finite loss stops the run with
the offending op named, and a batch where more than half the pairs come
out all-zero-masked stops it with a mask-collapse diagnostic.
"""

import math
import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import autodiff as ad
from .augment import AugmentConfig, make_view_pair
from .configio import config_hash, train_config_to_flat
from .errors import ConfigurationError, InsufficientBatchError, TrainingAborted
from .losses import LossConfig, cross_entropy, filter_degenerate_pairs, nt_xent, total_loss
from .model import (
    ContrastiveModel,
    ModelConfig,
    load_checkpoint,
    save_checkpoint,
    views_to_arrays,
)
from .seeding import STREAM_AUGMENT, STREAM_BATCH, rng_for


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    per_class: int = 5
    classes: int = 11
    seed: int = 0
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    checkpoint_every: int = 0  # epochs between checkpoints; 0 keeps only the final one
    mode: str = "dual"
    d_hidden: int = 64
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.per_class < 1 or self.classes < 1:
            raise ConfigurationError("per_class and classes must be >= 1")
        if self.seed < 0:
            raise ConfigurationError("seed must be non-negative")

    @property
    def batch_size(self):
        return self.per_class * self.classes

    def model_config(self, mask_mode="hard"):
        return ModelConfig(
            mode=self.mode,
            full_size=self.augment.full_size,
            crop_size=self.augment.crop_size,
            d_hidden=self.d_hidden,
            classes=self.classes,
            mask_mode=mask_mode,
        )


@dataclass
class StepRecord:
    step: int
    epoch: int
    contrastive_loss: float
    supervised_loss: float
    mask_density: float
    degenerate_count: int


HISTORY_COLUMNS = (
    "step",
    "epoch",
    "contrastive_loss",
    "supervised_loss",
    "mask_density",
    "degenerate_count",
)


def sample_balanced_batch(dataset, per_class, rng):
    """Exactly per_class samples from every class, without replacement."""
    batch = []
    for label, group in enumerate(dataset.by_class()):
        if len(group) < per_class:
            raise ConfigurationError(
                f"class {dataset.class_names[label]} has {len(group)} samples, need >= {per_class}"
            )
        chosen = rng.choice(len(group), size=per_class, replace=False)
        batch.extend(group[int(i)] for i in chosen)
    return batch


@dataclass
class TrainResult:
    model: ContrastiveModel
    history: List[StepRecord]
    checkpoint_path: Optional[str]
    checkpoint_id: Optional[str]
    config_flat: dict


class Trainer:
    def __init__(self, dataset, cfg: TrainConfig, resume_from=None):
        if dataset.n_classes != cfg.classes:
            raise ConfigurationError(
                f"dataset has {dataset.n_classes} classes but config says {cfg.classes}"
            )
        for label, group in enumerate(dataset.by_class()):
            if len(group) < cfg.per_class:
                raise ConfigurationError(
                    f"class {dataset.class_names[label]} has {len(group)} samples, need >= {cfg.per_class}"
                )
        self.dataset = dataset
        self.cfg = cfg
        self.aug_seed = cfg.augment.seed if cfg.augment.seed is not None else cfg.seed
        self.steps_per_epoch = math.ceil(len(dataset) / cfg.batch_size)
        self.start_epoch = 0

        if resume_from is None:
            self.model = ContrastiveModel(cfg.model_config(), seed=cfg.seed)
            self.optimizer = ad.AdamState(
                lr=cfg.lr, beta1=cfg.adam_beta1, beta2=cfg.adam_beta2, eps=cfg.adam_eps
            )
        else:
            self.model, opt, meta = load_checkpoint(resume_from)
            saved = meta.get("train_config", {})
            current = {k: v for k, v in train_config_to_flat(cfg).items()}
            for skip in ("epochs", "checkpoint_every"):
                saved.pop(skip, None), current.pop(skip, None)
            fmt = lambda d: {k: repr(v) for k, v in d.items()}
            if fmt(saved) != fmt(current):
                raise ConfigurationError("resume config differs from the checkpoint's config")
            if opt is None:
                raise ConfigurationError("checkpoint has no optimizer state; cannot resume")
            self.optimizer = ad.AdamState(
                lr=opt["lr"], beta1=opt["beta1"], beta2=opt["beta2"], eps=opt["eps"]
            )
            self.optimizer.step = opt["step"]
            self.optimizer.m = opt["m"]
            self.optimizer.v = opt["v"]
            self.start_epoch = int(meta.get("epochs_completed", 0))

        self._param_names = sorted(self.model.params())

    def _params(self):
        table = self.model.params()
        return [table[n] for n in self._param_names]

    def make_batch_views(self, batch, epoch):
        views = []
        for s in batch:
            rng = rng_for(self.aug_seed, STREAM_AUGMENT, epoch, s.index)
            views.append(make_view_pair(s, self.cfg.augment, rng))
        return views

    def train_step(self, batch, step, epoch, on_forward=None):
        """One forward/backward/Adam update over a balanced batch."""
        cfg = self.cfg
        views = self.make_batch_views(batch, epoch)
        full, crop = views_to_arrays(views, self.model.cfg)
        result = self.model.forward_batch(ad.Tensor(full), ad.Tensor(crop))
        if on_forward is not None:
            on_forward(result)

        n = len(batch)
        z_a, z_b, dropped = filter_degenerate_pairs(result.z_full_masked, result.z_crop_masked)
        if dropped * 2 > n:
            raise TrainingAborted(
                f"step {step}: {dropped}/{n} pairs fully masked out — mask collapse"
            )
        if n - dropped < 2:
            raise InsufficientBatchError(f"step {step}: fewer than 2 usable pairs")
        contrastive = nt_xent(z_a, z_b, cfg.loss.temperature, normalize=cfg.loss.normalize)

        labels = [s.label for s in batch]
        logits = ad.concat([result.logits_full, result.logits_crop], axis=0)
        supervised = cross_entropy(logits, labels + labels)

        loss = total_loss(contrastive, supervised, cfg.loss.supervised_weight)
        loss.backward()

        params = self._params()
        grads = [p.grad for p in params]
        ad.adam_step(params, grads, self.optimizer)
        self.model.zero_grad()

        return StepRecord(
            step=step,
            epoch=epoch,
            contrastive_loss=float(contrastive.data),
            supervised_loss=float(supervised.data),
            mask_density=float(result.mask.data.mean()),
            degenerate_count=dropped,
        )

    def run(self, out_dir=None, on_step=None, on_forward=None):
        cfg = self.cfg
        flat = train_config_to_flat(cfg)
        history = []
        ckpt_path = ckpt_id = None
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)

        def checkpoint(tag, epochs_done):
            nonlocal ckpt_path, ckpt_id
            if out_dir is None:
                return
            meta = {
                "epochs_completed": epochs_done,
                "steps_completed": epochs_done * self.steps_per_epoch,
                "train_config": flat,
                "config_hash": config_hash(flat),
            }
            path = os.path.join(out_dir, f"checkpoint_{tag}.json")
            cid = save_checkpoint(path, self.model, self.optimizer, meta)
            if tag == "final":
                ckpt_path, ckpt_id = path, cid

        for epoch in range(self.start_epoch, cfg.epochs):
            for b in range(self.steps_per_epoch):
                step = epoch * self.steps_per_epoch + b
                batch = sample_balanced_batch(
                    self.dataset, cfg.per_class, rng_for(cfg.seed, STREAM_BATCH, step)
                )
                record = self.train_step(batch, step, epoch, on_forward=on_forward)
                history.append(record)
                if on_step is not None:
                    on_step(record)
            if cfg.checkpoint_every > 0 and (epoch + 1) % cfg.checkpoint_every == 0:
                checkpoint(f"epoch_{epoch + 1:04d}", epoch + 1)

        checkpoint("final", cfg.epochs)
        return TrainResult(
            model=self.model,
            history=history,
            checkpoint_path=ckpt_path,
            checkpoint_id=ckpt_id,
            config_flat=flat,
        )


def train(dataset, cfg: TrainConfig, out_dir=None, resume_from=None, on_step=None, on_forward=None):
    """Train to cfg.epochs; returns the final model, history, checkpoint."""
    return Trainer(dataset, cfg, resume_from=resume_from).run(
        out_dir=out_dir, on_step=on_step, on_forward=on_forward
    )
