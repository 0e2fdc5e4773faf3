"""Two-phase training loop.

Phase 1 (warmup) trains encoder, projector and decoder on the contrastive
plus reconstruction objective. At the boundary the encoder is frozen, the
latent space is clustered and the decoder gains a conditioning head fed with
soft prototype assignments. Phase 2 trains that conditional decoder on
reconstruction alone.
"""
from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .augment import AugmentConfig, augment_pair
from .cluster import PrototypeMatrix, elbow_select, kmeans_fit, soft_assign
from .loss import LossConfig, mse, ntxent
from .model import ContrastiveAutoencoder
from .nncore import LARS, ScheduleConfig, TrainingError, load_checkpoint, lr_at, no_grad, ops, save_checkpoint

log = logging.getLogger(__name__)

# stream ids for splitting the root seed per subsystem
INIT, AUGMENT, SHUFFLE, KMEANS, COND_INIT = range(5)

PHASE_WARMUP = "warmup"
PHASE_FINETUNE = "finetune"
BOUNDARY_CKPT = "phase_boundary.ckpt"
FINAL_CKPT = "final.ckpt"
LATEST_CKPT = "latest.ckpt"
LOSS_LOG = "loss_log.csv"


def stream(seed, *key):
    """Independent generator for ``(seed, *key)``; same key, same stream."""
    return np.random.default_rng([int(seed), *[int(k) for k in key]])


@dataclass(frozen=True)
class TrainConfig:
    warmup_epochs: int = 50
    total_epochs: int = 100
    batch_size: int = 256
    schedule: ScheduleConfig = ScheduleConfig()
    loss: LossConfig = LossConfig()
    augment: AugmentConfig = AugmentConfig()
    seed: int = 0
    checkpoint_dir: str = "checkpoints"
    checkpoint_every: int = 0
    k_min: int = 2
    k_max: int = 12
    kmeans_n_init: int = 10
    assignment_temperature: float = 0.1
    lars_momentum: float = 0.9
    lars_weight_decay: float = 1e-6
    lars_trust_coefficient: float = 1e-3

    def __post_init__(self):
        if not 0 < self.warmup_epochs < self.total_epochs:
            raise ValueError(f"need 0 < warmup_epochs < total_epochs, got {self.warmup_epochs}, {self.total_epochs}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.schedule.total_epochs < self.total_epochs:
            raise ValueError("schedule.total_epochs must cover total_epochs")
        if not 2 <= self.k_min <= self.k_max:
            raise ValueError("need 2 <= k_min <= k_max")

    def to_dict(self):
        d = asdict(self)
        d["augment"] = self.augment.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "schedule" in d:
            d["schedule"] = ScheduleConfig(**d["schedule"])
        if "loss" in d:
            d["loss"] = LossConfig(**d["loss"])
        if "augment" in d:
            a = dict(d["augment"])
            for key in ("blur_sigma_range", "crop_scale_range"):
                if key in a:
                    a[key] = tuple(a[key])
            d["augment"] = AugmentConfig(**a)
        return cls(**d)

    @classmethod
    def smoke(cls, warmup_epochs=1, total_epochs=2, batch_size=64, **kw):
        """Small config whose schedule spans exactly ``total_epochs``."""
        ramp = max(0, min(total_epochs, round(total_epochs / 10)))
        return cls(
            warmup_epochs=warmup_epochs,
            total_epochs=total_epochs,
            batch_size=batch_size,
            schedule=ScheduleConfig(ramp_epochs=ramp, total_epochs=total_epochs),
            **kw,
        )


@dataclass
class EpochLog:
    epoch: int
    phase: str
    mean_contrastive: float
    mean_recon: float
    lr: float


@dataclass
class RunArtifacts:
    checkpoint_path: str
    prototypes: PrototypeMatrix | None
    elbow_curve: dict
    loss_log: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    state: TrainState | None = None


@dataclass
class TrainState:
    """Everything that evolves during training and must survive a resume."""

    model: ContrastiveAutoencoder
    optimizer: LARS
    next_epoch: int = 0
    prototypes: PrototypeMatrix | None = None
    elbow_curve: dict = field(default_factory=dict)
    loss_log: list = field(default_factory=list)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[s : s + batch_size] for s in range(0, n, batch_size)]


def _make_optimizer(params, cfg):
    return LARS(
        params,
        momentum=cfg.lars_momentum,
        weight_decay=cfg.lars_weight_decay,
        trust_coefficient=cfg.lars_trust_coefficient,
    )


def _check_loss(value, epoch, batch_idx, x):
    if not math.isfinite(value):
        raise TrainingError(
            f"non-finite loss at epoch {epoch}, batch {batch_idx}: "
            f"input mean={float(np.mean(x)):.4g} min={float(np.min(x)):.4g} max={float(np.max(x)):.4g}"
        )


def warmup_epoch(model, optimizer, images, cfg, epoch):
    """One epoch of contrastive + reconstruction training of e, p and d."""
    if epoch >= cfg.warmup_epochs:
        raise ValueError(f"epoch {epoch} is not a warmup epoch")
    lr = lr_at(epoch, cfg.schedule)
    sums = np.zeros(2)
    count = 0
    for t, idx in enumerate(_batches(len(images), cfg.batch_size, stream(cfg.seed, SHUFFLE, epoch))):
        x = images[idx]
        x1, x2 = augment_pair(x, cfg.augment, stream(cfg.seed, AUGMENT, cfg.augment.seed, epoch, t))
        b = len(idx)
        h = model.encoder(np.concatenate([x1, x2]))
        z = model.projector(h)
        y = model.decoder(h)
        l_sim = ntxent(ops.rows(z, 0, b), ops.rows(z, b, 2 * b), cfg.loss.temperature)
        l_rec = mse(x1, ops.rows(y, 0, b)) + mse(x2, ops.rows(y, b, 2 * b))
        loss = l_sim + l_rec * cfg.loss.alpha
        _check_loss(loss.item(), epoch, t, x)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step(lr)
        sums += (l_sim.item() * b, l_rec.item() * b)
        count += b
    return EpochLog(epoch, PHASE_WARMUP, sums[0] / count, sums[1] / count, lr)


def encode_all(encoder, images, batch_size=512):
    out = []
    with no_grad():
        for s in range(0, len(images), batch_size):
            out.append(encoder(images[s : s + batch_size]).data)
    return np.concatenate(out)


def discover_prototypes(encoder, images, cfg):
    """Cluster the frozen encoder's latents; returns (prototypes, elbow curve)."""
    latents = encode_all(encoder, images).astype(np.float64)
    k_max = min(cfg.k_max, len(latents))
    seed = int(stream(cfg.seed, KMEANS).integers(2**31))
    elbow = elbow_select(latents, range(cfg.k_min, k_max + 1), seed=seed, n_init=cfg.kmeans_n_init)
    fit = kmeans_fit(latents, elbow.k, seed=seed, n_init=cfg.kmeans_n_init)
    log.info("elbow selected k=%d (inertia %.4g)", elbow.k, fit.inertia)
    # persisted as float32, so use the float32 values from the start
    centroids = fit.centroids.astype(np.float32)
    return PrototypeMatrix.from_centroids(centroids, cfg.assignment_temperature), elbow.curve()


def assignments(h, protos):
    c = soft_assign(h, protos)
    return (c / c.sum(axis=1, keepdims=True)).astype(np.float32)


def finetune_epoch(model, optimizer, protos, images, cfg, epoch):
    """One epoch of reconstruction-only training of the conditional decoder."""
    if not cfg.warmup_epochs <= epoch < cfg.total_epochs:
        raise ValueError(f"epoch {epoch} is not a fine-tune epoch")
    if model.cond_decoder is None:
        raise RuntimeError("conditional decoder not attached")
    lr = lr_at(epoch, cfg.schedule)
    total, count = 0.0, 0
    for t, idx in enumerate(_batches(len(images), cfg.batch_size, stream(cfg.seed, SHUFFLE, epoch))):
        x = images[idx]
        x1, x2 = augment_pair(x, cfg.augment, stream(cfg.seed, AUGMENT, cfg.augment.seed, epoch, t))
        b = len(idx)
        xx = np.concatenate([x1, x2])
        with no_grad():
            h = model.encoder(xx)
        c = assignments(h.data, protos)
        y = model.cond_decoder(h, c)
        loss = mse(x1, ops.rows(y, 0, b)) + mse(x2, ops.rows(y, b, 2 * b))
        _check_loss(loss.item(), epoch, t, x)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step(lr)
        total += loss.item() * b
        count += b
    return EpochLog(epoch, PHASE_FINETUNE, float("nan"), total / count, lr)


# -- checkpoints ---------------------------------------------------------

def _log_to_json(entry):
    d = asdict(entry)
    if math.isnan(d["mean_contrastive"]):
        d["mean_contrastive"] = None
    return d


def _log_from_json(d):
    d = dict(d)
    if d["mean_contrastive"] is None:
        d["mean_contrastive"] = float("nan")
    return EpochLog(**d)


def _config_meta(cfg):
    d = cfg.to_dict()
    d.pop("checkpoint_dir")
    return d


def save_state(path, state, cfg):
    tensors = dict(state.model.named_parameters())
    tensors = {name: p.data for name, p in tensors.items()}
    opt_state = state.optimizer.state_dict()
    for key, arr in opt_state["arrays"].items():
        tensors[f"optimizer.{key}"] = arr
    meta = {
        "format": "contra-cluster-checkpoint",
        "next_epoch": state.next_epoch,
        "phase": PHASE_WARMUP if state.next_epoch < cfg.warmup_epochs else PHASE_FINETUNE,
        "config": _config_meta(cfg),
        "optimizer_step_count": opt_state["step_count"],
        "loss_log": [_log_to_json(e) for e in state.loss_log],
        "elbow_curve": {str(k): v for k, v in state.elbow_curve.items()},
        "kernel_backend": _kernels.BACKEND,
        "parameter_shapes": {n: list(p.shape) for n, p in state.model.named_parameters()},
    }
    if state.prototypes is not None:
        tensors["prototypes"] = state.prototypes.prototypes
        meta["k"] = state.prototypes.k
        meta["assignment_temperature"] = state.prototypes.assignment_temperature
    save_checkpoint(path, tensors, meta)


def build_model(cfg):
    return ContrastiveAutoencoder(stream(cfg.seed, INIT))


def restore_model(tensors, meta, cfg=None):
    """Rebuild model (and prototypes) from checkpoint contents."""
    cfg = cfg or TrainConfig.from_dict({**meta["config"], "checkpoint_dir": "."})
    model = build_model(cfg)
    protos = None
    if "prototypes" in tensors:
        protos = PrototypeMatrix(tensors["prototypes"], meta["assignment_temperature"])
        model.attach_conditional(protos.k, stream(cfg.seed, COND_INIT))
    model.load_state_dict({n: tensors[n] for n, _ in model.named_parameters()})
    return model, protos


def load_state(path, cfg):
    tensors, meta = load_checkpoint(path)
    model, protos = restore_model(tensors, meta, cfg)
    next_epoch = int(meta["next_epoch"])
    if next_epoch < cfg.warmup_epochs:
        optimizer = _make_optimizer(model.parameters(), cfg)
    else:
        optimizer = _make_optimizer(model.cond_decoder.parameters(), cfg)
    optimizer.load_state_dict(
        {
            "step_count": meta["optimizer_step_count"],
            "arrays": {k[len("optimizer.") :]: v for k, v in tensors.items() if k.startswith("optimizer.")},
        }
    )
    return TrainState(
        model=model,
        optimizer=optimizer,
        next_epoch=next_epoch,
        prototypes=protos,
        elbow_curve={int(k): v for k, v in meta.get("elbow_curve", {}).items()},
        loss_log=[_log_from_json(e) for e in meta["loss_log"]],
    )


def write_loss_log(path, entries):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "phase", "mean_contrastive", "mean_recon", "lr"])
        for e in entries:
            contrastive = "" if math.isnan(e.mean_contrastive) else repr(e.mean_contrastive)
            w.writerow([e.epoch, e.phase, contrastive, repr(e.mean_recon), repr(e.lr)])


# -- driver --------------------------------------------------------------

def run_training(cfg, dataset, resume_from=None, stop_after=None):
    """Run both phases, checkpointing at the phase boundary and at the end.

    ``resume_from`` continues from any checkpoint written by this function.
    ``stop_after`` ends the run early after that many epochs (used to
    simulate interruptions).
    """
    images = np.ascontiguousarray(dataset.images, dtype=np.float32)
    os.makedirs(cfg.checkpoint_dir, exist_ok=True)
    if resume_from is not None:
        state = load_state(resume_from, cfg)
        log.info("resuming at epoch %d from %s", state.next_epoch, resume_from)
    else:
        model = build_model(cfg)
        state = TrainState(model=model, optimizer=_make_optimizer(model.parameters(), cfg))
    artifacts = RunArtifacts("", state.prototypes, state.elbow_curve, state.loss_log)
    done = 0
    while state.next_epoch < cfg.total_epochs:
        if stop_after is not None and done >= stop_after:
            break
        epoch = state.next_epoch
        if epoch < cfg.warmup_epochs:
            entry = warmup_epoch(state.model, state.optimizer, images, cfg, epoch)
        else:
            entry = finetune_epoch(state.model, state.optimizer, state.prototypes, images, cfg, epoch)
        state.loss_log.append(entry)
        state.next_epoch += 1
        done += 1
        log.info(
            "epoch %d [%s] contrastive=%.5f recon=%.5f lr=%.4f",
            entry.epoch, entry.phase, entry.mean_contrastive, entry.mean_recon, entry.lr,
        )
        if state.next_epoch == cfg.warmup_epochs:
            state.model.encoder.eval()
            state.prototypes, state.elbow_curve = discover_prototypes(state.model.encoder, images, cfg)
            cond = state.model.attach_conditional(state.prototypes.k, stream(cfg.seed, COND_INIT))
            state.optimizer = _make_optimizer(cond.parameters(), cfg)
            path = os.path.join(cfg.checkpoint_dir, BOUNDARY_CKPT)
            save_state(path, state, cfg)
            artifacts.checkpoints.append(path)
        if cfg.checkpoint_every and state.next_epoch % cfg.checkpoint_every == 0:
            save_state(os.path.join(cfg.checkpoint_dir, LATEST_CKPT), state, cfg)
    if state.next_epoch >= cfg.total_epochs:
        path = os.path.join(cfg.checkpoint_dir, FINAL_CKPT)
        save_state(path, state, cfg)
        artifacts.checkpoints.append(path)
    else:
        path = os.path.join(cfg.checkpoint_dir, LATEST_CKPT)
        save_state(path, state, cfg)
    write_loss_log(os.path.join(cfg.checkpoint_dir, LOSS_LOG), state.loss_log)
    artifacts.checkpoint_path = path
    artifacts.prototypes = state.prototypes
    artifacts.elbow_curve = state.elbow_curve
    artifacts.loss_log = state.loss_log
    artifacts.state = state
    return artifacts
