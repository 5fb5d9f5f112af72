"""Training orchestration: epoch loop, early stopping, cross-validation.

A run is fully determined by its TrainConfig: the seed feeds three
independent streams (parameter init, augmentation draws, epoch
shuffles), so identical configs give bit-identical histories. Parameter
and optimizer updates are pure, which lets the loop keep the
best-validation snapshot as plain references instead of copies.

Validation and test frames are never augmented, and test frames are
only touched after a round's training has finished.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict, replace

import numpy as np

from . import data as datapipe
from . import network
from .metrics import binarize, hard_iou, soft_iou_loss
from .optim import AdamHyper, AdamState, adam_init, adam_step

ARCHS = ("flynet", "fcn")


class TrainError(RuntimeError):
    """A training run failed midway (e.g. the loss went non-finite)."""


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a training run.

    ``augment`` expands each training frame into 8 pairs before the
    first epoch; validation data is always left untouched.
    """
    arch: str = "flynet"
    base_width: int = 64
    input_size: int = 128
    batch_size: int = 16
    adam: AdamHyper = field(default_factory=AdamHyper)
    max_epochs: int = 100
    patience: int = 5
    min_delta: float = 0.001
    seed: int = 0
    binarize_threshold: float = 0.5
    augment: bool = True

    def validate(self) -> None:
        self.adam.validate()
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        network._check_build_args(self.input_size, self.base_width)
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.min_delta < 0:
            raise ValueError(f"min_delta must be >= 0, got {self.min_delta}")
        if not 0.0 < self.binarize_threshold < 1.0:
            raise ValueError(f"binarize_threshold must be in (0, 1), got "
                             f"{self.binarize_threshold}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["adam"] = AdamHyper(**d["adam"])
        return cls(**d)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int          # 1-based
    train_loss: float   # mean soft-IOU loss over the epoch's batches
    val_iou: float      # mean hard IOU on un-augmented validation frames


@dataclass
class TrainHistory:
    """Per-epoch records; best_epoch marks the earliest maximum val_iou."""
    records: list = field(default_factory=list)
    best_epoch: int = 0

    def val_ious(self) -> list:
        return [r.val_iou for r in self.records]

    def best_val_iou(self) -> float:
        return self.records[self.best_epoch - 1].val_iou

    def to_dict(self) -> dict:
        return {"best_epoch": self.best_epoch,
                "records": [asdict(r) for r in self.records]}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainHistory":
        return cls([EpochRecord(**r) for r in d["records"]], d["best_epoch"])


def _params_equal(a: dict, b: dict) -> bool:
    if a.keys() != b.keys():
        return False
    return all(
        a[k].weights.dtype == b[k].weights.dtype
        and a[k].bias.dtype == b[k].bias.dtype
        and np.array_equal(a[k].weights, b[k].weights)
        and np.array_equal(a[k].bias, b[k].bias)
        for k in a)


@dataclass
class Checkpoint:
    """A trained model: graph, best-validation weights, optimizer state,
    and the config/history that produced them."""
    spec: network.NetworkSpec
    params: dict
    state: AdamState
    config: TrainConfig
    history: TrainHistory

    def __eq__(self, other) -> bool:
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (self.spec.to_dict() == other.spec.to_dict()
                and _params_equal(self.params, other.params)
                and self.state.t == other.state.t
                and _params_equal(self.state.m, other.state.m)
                and _params_equal(self.state.v, other.state.v)
                and self.config == other.config
                and self.history == other.history)


def predict_probs(spec: network.NetworkSpec, params: dict, images: np.ndarray,
                  batch_size: int = 16) -> np.ndarray:
    """Run the network over images in batches; returns (n, 1, h, w) probs."""
    outs = []
    for i in range(0, images.shape[0], batch_size):
        probs, _ = network.forward(spec, params, images[i:i + batch_size])
        outs.append(probs)
    return np.concatenate(outs, axis=0)


def _mean_iou(spec, params, images, masks, batch_size, threshold) -> float:
    pred = binarize(predict_probs(spec, params, images, batch_size), threshold)
    return float(np.mean([hard_iou(pred[i, 0], masks[i, 0])
                          for i in range(pred.shape[0])]))


def evaluate_iou(spec: network.NetworkSpec, params: dict, datasets: list,
                 batch_size: int = 16, threshold: float = 0.5) -> float:
    """Mean hard IOU over every frame of the given datasets."""
    pairs = [p for ds in datasets for p in ds.frames]
    if not pairs:
        raise ValueError("no frames to evaluate")
    return _mean_iou(spec, params, datapipe.stack_images(pairs),
                     datapipe.stack_masks(pairs), batch_size, threshold)


def _gather_split(datasets: list, input_size: int, what: str) -> list:
    if not datasets:
        raise ValueError(f"empty {what} split")
    for ds in datasets:
        if ds.resolution != input_size:
            raise ValueError(f"dataset {ds.id!r} has {ds.resolution}px frames "
                             f"but the network expects {input_size}px")
    pairs = [p for ds in datasets for p in ds.frames]
    if not pairs:
        raise ValueError(f"empty {what} split")
    return pairs


def _build_net(config: TrainConfig, rng: np.random.Generator):
    build = (network.build_flynet if config.arch == "flynet"
             else network.build_fcn_baseline)
    return build(config.input_size, config.base_width, rng)


def early_stop_check(history: TrainHistory, patience: int,
                     min_delta: float) -> bool:
    """True iff each of the last `patience` epochs failed to beat the best
    validation IOU recorded before it by more than min_delta."""
    if not history.records:
        raise ValueError("early_stop_check needs a non-empty history")
    ious = history.val_ious()
    if len(ious) <= patience:
        return False
    for i in range(len(ious) - patience, len(ious)):
        if ious[i] > max(ious[:i]) + min_delta:
            return False
    return True


def train(config: TrainConfig, train_sets: list, val_sets: list,
          log=None) -> tuple:
    """Train one model from scratch; returns (Checkpoint, TrainHistory).

    Training frames are shuffled every epoch (seeded) and optionally
    augmented 8x up front; after each epoch the model is scored by mean
    hard IOU on the raw validation frames. The returned checkpoint holds
    the weights of the best validation epoch (earliest on ties).
    """
    config.validate()
    train_pairs = _gather_split(train_sets, config.input_size, "train")
    val_pairs = _gather_split(val_sets, config.input_size, "val")

    init_ss, aug_ss, shuffle_ss = np.random.SeedSequence(config.seed).spawn(3)
    spec, params = _build_net(config, np.random.default_rng(init_ss))
    state = adam_init(params)

    if config.augment:
        aug_rng = np.random.default_rng(aug_ss)
        train_pairs = [out for p in train_pairs
                       for out in datapipe.augment(p, aug_rng)]
    x = datapipe.stack_images(train_pairs)
    g = datapipe.stack_masks(train_pairs)
    xv = datapipe.stack_images(val_pairs)
    gv = datapipe.stack_masks(val_pairs)

    shuffle_rng = np.random.default_rng(shuffle_ss)
    history = TrainHistory()
    best = None  # (val_iou, params, state); updates are pure, refs suffice
    n = x.shape[0]
    for epoch in range(1, config.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for i in range(0, n, config.batch_size):
            sel = order[i:i + config.batch_size]
            probs, cache = network.forward(spec, params, x[sel])
            lv = soft_iou_loss(probs, g[sel])
            if not np.isfinite(lv.loss):
                raise TrainError(
                    f"training diverged at epoch {epoch}, "
                    f"step {i // config.batch_size + 1} "
                    f"(batch loss {lv.loss})")
            grads = network.backward(spec, params, cache, lv.dprobs)
            params, state = adam_step(params, grads, state, config.adam)
            total += lv.loss * len(sel)
        train_loss = total / n
        val_iou = _mean_iou(spec, params, xv, gv, config.batch_size,
                            config.binarize_threshold)
        history.records.append(EpochRecord(epoch, float(train_loss),
                                           float(val_iou)))
        if best is None or val_iou > best[0]:
            best = (val_iou, params, state)
            history.best_epoch = epoch
        if log is not None:
            log(f"epoch {epoch}: train_loss={train_loss:.4f} "
                f"val_iou={val_iou:.4f}")
        if early_stop_check(history, config.patience, config.min_delta):
            if log is not None:
                log(f"early stop after epoch {epoch} "
                    f"(best epoch {history.best_epoch})")
            break
    ckpt = Checkpoint(spec, best[1], best[2], config, history)
    return ckpt, history


@dataclass(frozen=True)
class RoundResult:
    round: int
    test_ids: tuple
    test_iou: float
    best_epoch: int
    epochs_run: int


@dataclass
class CrossValResult:
    k: int
    rounds: list

    def ious(self) -> list:
        return [r.test_iou for r in self.rounds]

    @property
    def mean_iou(self) -> float:
        return float(np.mean(self.ious()))

    @property
    def std_iou(self) -> float:
        return float(np.std(self.ious()))

    @property
    def spread(self) -> float:
        return float(max(self.ious()) - min(self.ious()))


def round_seed(seed: int, round: int) -> int:
    """Derived per-round seed so every fold re-initializes independently."""
    return int(np.random.SeedSequence([seed, round]).generate_state(1)[0])


def cross_validate(config: TrainConfig, corpus: list, k: int,
                   log=None, on_round=None) -> CrossValResult:
    """Grouped k-fold cross-validation, training from scratch each round.

    Every round re-derives its splits from the same seeded order (so each
    dataset is tested exactly once over k rounds), trains a fresh model,
    and only then scores the round's test datasets.  ``on_round``, when
    given, receives (RoundResult, Checkpoint, TrainHistory) after each
    round so callers can persist artifacts without holding k models.
    """
    config.validate()
    rounds = []
    for r in range(k):
        plan = datapipe.kfold_split(corpus, k, r,
                                    np.random.default_rng(config.seed))
        round_config = replace(config, seed=round_seed(config.seed, r))
        if log is not None:
            log(f"round {r}: test={','.join(plan.test)}")
        ckpt, hist = train(round_config,
                           datapipe.datasets_by_id(corpus, plan.train),
                           datapipe.datasets_by_id(corpus, plan.val), log=log)
        iou = evaluate_iou(ckpt.spec, ckpt.params,
                           datapipe.datasets_by_id(corpus, plan.test),
                           config.batch_size, config.binarize_threshold)
        if log is not None:
            log(f"round {r}: test_iou={iou:.4f}")
        result = RoundResult(r, tuple(plan.test), float(iou),
                             hist.best_epoch, len(hist.records))
        if on_round is not None:
            on_round(result, ckpt, hist)
        rounds.append(result)
    return CrossValResult(k, rounds)
