"""Two-stage training: category pretraining, then joint task optimization.

Stage 1 minimizes the per-object category loss L_oce alone until the
validation loss stops improving for `patience` epochs (best weights are
restored).  Stage 2 minimizes L_total = L_oce + alpha * L_tce for a fixed
number of epochs.  A batch is one scene with all of its task instances, so
the pairwise feature tensor is computed once per step; `batch_size` scenes
are accumulated (fixed order) before each optimizer update.

Both losses are plain softmax cross-entropies:

    L_oce : over the C per-category head logits (pre-sigmoid), per object
    L_tce : over the M final executor scores, against the target index

Training is deterministic given (data, config): scene order is shuffled by a
`random.Random(seed + epoch)` stream and all torch ops run on CPU.
"""
from __future__ import annotations

import random
import time
from dataclasses import dataclass, field

import torch
from torch import nn

from . import dsl
from .encoder import (EncoderConfig, GroundingModel, LearnedFeatures,
                      prepare_scene_tensors, presubsample_positions, save_checkpoint)
from .executor import run_program
from .scene import Scene, TaskInstance
from .vocab import Vocabulary


class TrainingError(RuntimeError):
    pass


class DivergenceError(TrainingError):
    """Raised when a loss turns non-finite; message names the batch."""


@dataclass(frozen=True)
class ScenePack:
    """One scene and the task instances grounded in it."""
    scene: Scene
    instances: tuple[TaskInstance, ...]


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1.0
    learning_rate: float = 1e-3
    batch_size: int = 1            # scenes per optimizer step
    stage1_epochs: int = 40        # upper bound; patience usually stops earlier
    stage2_epochs: int = 12
    stage2_lr_decay: float = 1.0   # per-epoch multiplicative lr factor in stage 2
    patience: int = 5
    min_delta: float = 1e-4        # val-loss gain below this does not reset patience
    grad_clip: float = 5.0
    seed: int = 0
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not 0.0 < self.stage2_lr_decay <= 1.0:
            raise ValueError("stage2_lr_decay must be in (0, 1]")
        for name in ("batch_size", "stage1_epochs", "stage2_epochs", "patience"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    def to_json(self) -> dict:
        payload = {k: getattr(self, k) for k in (
            "alpha", "learning_rate", "batch_size", "stage1_epochs",
            "stage2_epochs", "stage2_lr_decay", "patience", "min_delta",
            "grad_clip", "seed")}
        payload["encoder"] = self.encoder.to_json()
        return payload

    @classmethod
    def from_json(cls, payload: dict) -> "TrainConfig":
        payload = dict(payload)
        encoder = EncoderConfig.from_json(payload.pop("encoder", {}))
        return cls(encoder=encoder, **payload)


@dataclass
class EpochRecord:
    stage: int
    epoch: int
    oce: float
    tce: float | None           # None during stage 1
    total: float
    train_accuracy: float
    val_accuracy: float

    def to_json(self) -> dict:
        return {"stage": self.stage, "epoch": self.epoch, "oce": self.oce,
                "tce": self.tce, "total": self.total,
                "train_accuracy": self.train_accuracy,
                "val_accuracy": self.val_accuracy}


@dataclass
class TrainReport:
    epochs: list[EpochRecord] = field(default_factory=list)
    wall_clock: float = 0.0
    checkpoint_path: str | None = None
    stage1_epochs_run: int = 0
    stage2_epochs_run: int = 0

    def to_json(self) -> dict:
        return {"epochs": [e.to_json() for e in self.epochs],
                "wall_clock": self.wall_clock,
                "checkpoint_path": self.checkpoint_path,
                "stage1_epochs_run": self.stage1_epochs_run,
                "stage2_epochs_run": self.stage2_epochs_run}


def loss_oce(category_logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean softmax cross-entropy over per-category head logits.

    category_logits: (M, C) raw logits (pre log-sigmoid); labels: (M,) ids.
    """
    n_categories = category_logits.shape[-1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= n_categories):
        raise ValueError(
            f"label out of range for {n_categories} categories: {labels.tolist()}")
    return nn.functional.cross_entropy(category_logits, labels)


def loss_tce(final_scores: torch.Tensor, target: int) -> torch.Tensor:
    """Softmax cross-entropy over the M final scores against the target index."""
    if not 0 <= target < final_scores.shape[0]:
        raise ValueError(f"target {target} out of range for M={final_scores.shape[0]}")
    return nn.functional.cross_entropy(
        final_scores[None, :], torch.tensor([target]))


@dataclass
class _PreparedScene:
    pack: ScenePack
    points: torch.Tensor
    points_xyz: torch.Tensor    # pre-subsampled for the positional encoder
    labels: torch.Tensor
    programs: tuple[dsl.Node, ...]


def _prepare(packs: list[ScenePack], vocabulary: Vocabulary, dtype: torch.dtype,
             n_point_sample: int) -> list[_PreparedScene]:
    prepared = []
    for pack in packs:
        labels = torch.tensor(
            [vocabulary.category_id(c) for c in pack.scene.categories])
        programs = []
        for inst in pack.instances:
            program = dsl.lower_anchor(dsl.parse_program(inst.program_text), vocabulary)
            if dsl.typecheck(program, vocabulary) is not dsl.ValueType.OBJECT_SET:
                raise TrainingError(
                    f"training program is not an object-set program: {inst.program_text!r}")
            programs.append(program)
        points = prepare_scene_tensors(pack.scene, dtype)
        prepared.append(_PreparedScene(
            pack=pack,
            points=points,
            points_xyz=presubsample_positions(points, n_point_sample),
            labels=labels,
            programs=tuple(programs),
        ))
    return prepared


def _category_logits(model: GroundingModel, f_obj: torch.Tensor) -> torch.Tensor:
    cols = [model.category_heads[name](f_obj) for name in model.vocabulary.categories]
    return torch.cat(cols, dim=-1)


def _check_finite(value: torch.Tensor, batch_id: str) -> None:
    if not torch.isfinite(value):
        raise DivergenceError(f"non-finite loss in batch {batch_id}")


def _eval_oce(model: GroundingModel, scenes: list[_PreparedScene]) -> tuple[float, float]:
    """Validation category loss and accuracy, no gradients."""
    losses, correct, total = [], 0, 0
    with torch.no_grad():
        for item in scenes:
            logits = _category_logits(model, model.encode_objects(item.points))
            losses.append(float(loss_oce(logits, item.labels)))
            correct += int((logits.argmax(dim=-1) == item.labels).sum())
            total += item.labels.numel()
    return sum(losses) / max(len(losses), 1), correct / max(total, 1)


def _eval_rec(model: GroundingModel, scenes: list[_PreparedScene]) -> float:
    """Target-selection accuracy over all instances, no gradients."""
    correct, total = 0, 0
    with torch.no_grad():
        for item in scenes:
            features = LearnedFeatures(
                model, model.encode_scene(item.points, item.points_xyz))
            for program, inst in zip(item.programs, item.pack.instances):
                scores, trace = run_program(program, features, collect_trace=False)
                correct += int(trace.target == inst.target)
                total += 1
    return correct / max(total, 1)


def train(train_packs: list[ScenePack], val_packs: list[ScenePack],
          vocabulary: Vocabulary, config: TrainConfig,
          out_path: str | None = None,
          log: "callable | None" = None) -> tuple[GroundingModel, TrainReport]:
    """Run both stages and return the trained model with its report."""
    started = time.perf_counter()
    train_seeds = {p.scene.seed for p in train_packs}
    val_seeds = {p.scene.seed for p in val_packs}
    if train_seeds & val_seeds:
        raise TrainingError(
            f"train/val scene overlap: {sorted(train_seeds & val_seeds)[:5]}")

    model = GroundingModel(vocabulary, config.encoder)
    train_scenes = _prepare(train_packs, vocabulary, model.dtype,
                            config.encoder.n_point_sample)
    val_scenes = _prepare(val_packs, vocabulary, model.dtype,
                          config.encoder.n_point_sample)
    report = TrainReport()

    def emit(record: EpochRecord) -> None:
        report.epochs.append(record)
        if log is not None:
            log(record)

    # ---- stage 1: category pretraining with early stopping -------------
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.learning_rate, betas=(0.9, 0.999))
    best_val = float("inf")
    best_state = {k: v.clone() for k, v in model.state_dict().items()}
    stale = 0
    for epoch in range(config.stage1_epochs):
        order = list(range(len(train_scenes)))
        random.Random(config.seed + epoch).shuffle(order)
        epoch_loss, correct, total = 0.0, 0, 0
        optimizer.zero_grad()
        for step, idx in enumerate(order):
            item = train_scenes[idx]
            logits = _category_logits(model, model.encode_objects(item.points))
            loss = loss_oce(logits, item.labels)
            _check_finite(loss, f"stage1:epoch{epoch}:scene{item.pack.scene.seed}")
            (loss / config.batch_size).backward()
            epoch_loss += float(loss.detach())
            correct += int((logits.argmax(dim=-1) == item.labels).sum())
            total += item.labels.numel()
            if (step + 1) % config.batch_size == 0 or step + 1 == len(order):
                nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
                optimizer.step()
                optimizer.zero_grad()
        val_loss, val_acc = _eval_oce(model, val_scenes)
        mean = epoch_loss / max(len(train_scenes), 1)
        emit(EpochRecord(stage=1, epoch=epoch, oce=mean, tce=None, total=mean,
                         train_accuracy=correct / max(total, 1),
                         val_accuracy=val_acc))
        report.stage1_epochs_run = epoch + 1
        if val_loss < best_val - config.min_delta:
            best_val = val_loss
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    model.load_state_dict(best_state)

    # ---- stage 2: joint loss -------------------------------------------
    optimizer = torch.optim.Adam(
        model.parameters(), lr=config.learning_rate, betas=(0.9, 0.999))
    for epoch in range(config.stage2_epochs):
        for group in optimizer.param_groups:
            group["lr"] = config.learning_rate * config.stage2_lr_decay ** epoch
        order = list(range(len(train_scenes)))
        random.Random(config.seed * 100003 + epoch).shuffle(order)
        sum_oce, sum_tce, correct, total = 0.0, 0.0, 0, 0
        optimizer.zero_grad()
        for step, idx in enumerate(order):
            item = train_scenes[idx]
            batch_id = f"stage2:epoch{epoch}:scene{item.pack.scene.seed}"
            bundle = model.encode_scene(item.points, item.points_xyz)
            oce = loss_oce(_category_logits(model, bundle.f_obj), item.labels)
            if config.alpha > 0 and item.programs:
                features = LearnedFeatures(model, bundle)
                tce_terms = []
                for program, inst in zip(item.programs, item.pack.instances):
                    scores, trace = run_program(program, features, collect_trace=False)
                    tce_terms.append(loss_tce(scores, inst.target))
                    correct += int(trace.target == inst.target)
                    total += 1
                tce = torch.stack(tce_terms).mean()
            else:
                tce = torch.zeros(())
            loss = oce + config.alpha * tce
            _check_finite(loss, batch_id)
            (loss / config.batch_size).backward()
            sum_oce += float(oce.detach())
            sum_tce += float(tce.detach())
            if (step + 1) % config.batch_size == 0 or step + 1 == len(order):
                nn.utils.clip_grad_norm_(model.parameters(), config.grad_clip)
                optimizer.step()
                optimizer.zero_grad()
        n = max(len(train_scenes), 1)
        emit(EpochRecord(
            stage=2, epoch=epoch, oce=sum_oce / n, tce=sum_tce / n,
            total=sum_oce / n + config.alpha * (sum_tce / n),
            train_accuracy=correct / max(total, 1),
            val_accuracy=_eval_rec(model, val_scenes)))
        report.stage2_epochs_run = epoch + 1

    report.wall_clock = time.perf_counter() - started
    if out_path is not None:
        save_checkpoint(model, out_path)
        report.checkpoint_path = out_path
    return model, report
