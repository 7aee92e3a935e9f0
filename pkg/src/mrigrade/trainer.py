"""Training harness: splits, Adam, the epoch loop, checkpoints, evaluation.

The loop trains the pooled-feature classifier with any of the configured
losses, drives the feedback controller from per-epoch validation metrics,
records one log row per epoch, and keeps two kinds of parameter snapshots:
the "excellent" checkpoints (validation accuracy and recall above their
thresholds) and a running best-by-validation-ARS snapshot used when no
checkpoint ever qualifies.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path

import numpy as np

from .feedback import FeedbackConfig, FeedbackController
from .losses import LossConfig, make_loss
from .metrics import BinaryPredictionSet, MetricBundle, ars, bundle_metrics
from .model import PARAM_NAMES, ModelConfig, PooledClassifier, pool_volume
from .seeding import STREAM_SPLIT, substream
from .volume_store import DatasetManifest, MpMriVolume, read_volume, _atomic_write_bytes


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.0005
    decay_epochs: tuple[int, ...] = (100, 200)
    decay_factor: float = 0.1
    batch: int = 16
    max_epochs: int = 500
    early_stop_patience: int = 100
    split_seed: int = 0
    shuffle_seed: int = 0
    acc_min: float = 0.7
    recall_min: float = 0.6
    folds: int | None = None

    def __post_init__(self):
        if self.lr0 <= 0 or self.decay_factor <= 0:
            raise ValueError("lr0 and decay_factor must be positive")
        if self.batch < 1 or self.max_epochs < 1 or self.early_stop_patience < 1:
            raise ValueError("batch, max_epochs and early_stop_patience must be >= 1")
        if not (0.0 <= self.acc_min <= 1.0 and 0.0 <= self.recall_min <= 1.0):
            raise ValueError("checkpoint thresholds must lie in [0, 1]")
        if self.folds is not None and self.folds < 2:
            raise ValueError("folds must be >= 2 when given")
        object.__setattr__(self, "decay_epochs", tuple(int(e) for e in self.decay_epochs))


def scheduled_lr(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for a 1-based epoch; each decay epoch multiplies by the factor.

    Computed in decimal so a decayed rate equals its decimal literal (0.0005
    decayed once is exactly 5e-05, not 0.0005 * 0.1 in binary floats).
    """
    decays = sum(1 for d in cfg.decay_epochs if epoch >= d)
    return float(Decimal(str(cfg.lr0)) * Decimal(str(cfg.decay_factor)) ** decays)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _largest_remainder(counts: dict[int, int], frac: float, target: int) -> dict[int, int]:
    """Integer per-class quotas for `frac` of each class, summing to `target`."""
    quotas = {c: n * frac for c, n in counts.items()}
    picked = {c: min(int(math.floor(q)), counts[c]) for c, q in quotas.items()}
    order = sorted(counts, key=lambda c: (-(quotas[c] - picked[c]), c))
    deficit = target - sum(picked.values())
    for c in order:
        if deficit <= 0:
            break
        if picked[c] < counts[c]:
            picked[c] += 1
            deficit -= 1
    return picked


def split_dataset(
    manifest: DatasetManifest, seed: int, folds: int | None = None
) -> DatasetManifest | list[DatasetManifest]:
    """Stratified 9:1 train/test split, then 8:2 train/val inside the train pool.

    With `folds` set, the 90% pool is instead partitioned into that many
    stratified folds and one manifest per fold is returned (fold i tagged as
    val, the rest train; the 10% test set is shared by all folds).
    """
    entries = manifest.entries
    n = len(entries)
    if n < 10:
        raise ValueError("need at least 10 labeled samples to split")
    rng = substream(seed, STREAM_SPLIT)
    by_label: dict[int, list[int]] = {}
    for i, e in enumerate(entries):
        by_label.setdefault(e.label, []).append(i)
    shuffled = {c: [idxs[j] for j in rng.permutation(len(idxs))]
                for c, idxs in sorted(by_label.items())}
    counts = {c: len(v) for c, v in shuffled.items()}

    test_quota = _largest_remainder(counts, 0.1, _round_half_up(n * 0.1))
    test_idx = {i for c, idxs in shuffled.items() for i in idxs[: test_quota[c]]}
    pool = {c: idxs[test_quota[c]:] for c, idxs in shuffled.items()}
    pool_counts = {c: len(v) for c, v in pool.items()}
    pool_total = sum(pool_counts.values())

    def warn_empty(tag_of: dict[int, str]):
        tags = {"train", "val", "test"}
        for c in counts:
            present = {tag_of[i] for i in shuffled[c]}
            for missing in sorted(tags - present):
                warnings.warn(f"label {c} has no samples in the {missing!r} split")

    def build(tag_of: dict[int, str]) -> DatasetManifest:
        out = DatasetManifest(seed=manifest.seed)
        for i, e in enumerate(entries):
            out.entries.append(type(e)(path=e.path, label=e.label, split=tag_of[i]))
        return out

    if folds is None:
        val_quota = _largest_remainder(pool_counts, 0.2, _round_half_up(pool_total * 0.2))
        val_idx = {i for c, idxs in pool.items() for i in idxs[: val_quota[c]]}
        tag_of = {
            i: "test" if i in test_idx else "val" if i in val_idx else "train"
            for i in range(n)
        }
        warn_empty(tag_of)
        return build(tag_of)

    manifests = []
    fold_of: dict[int, int] = {}
    for c, idxs in pool.items():
        for j, i in enumerate(idxs):
            fold_of[i] = j % folds
    for k in range(folds):
        tag_of = {}
        for i in range(n):
            if i in test_idx:
                tag_of[i] = "test"
            else:
                tag_of[i] = "val" if fold_of[i] == k else "train"
        warn_empty(tag_of)
        manifests.append(build(tag_of))
    return manifests


@dataclass
class ArrayDataset:
    """Pooled feature vectors plus labels and split tags, kept in memory."""

    features: np.ndarray
    labels: np.ndarray
    splits: list[str]
    n_channels: int
    grid: tuple[int, int, int]

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.size:
            raise ValueError("features must be (n, d) with one label per row")
        if len(self.splits) != self.labels.size:
            raise ValueError("one split tag per sample required")

    def split_arrays(self, tag: str) -> tuple[np.ndarray, np.ndarray]:
        mask = np.array([s == tag for s in self.splits])
        return self.features[mask], self.labels[mask]

    def relabel(self, mapping: dict[int, int | None]) -> "ArrayDataset":
        """New dataset with labels mapped; samples mapping to None are dropped."""
        keep, new_labels = [], []
        for i, y in enumerate(self.labels):
            m = mapping.get(int(y))
            if m is not None:
                keep.append(i)
                new_labels.append(m)
        if not keep:
            raise ValueError("relabel mapping drops every sample")
        return ArrayDataset(
            features=self.features[keep],
            labels=np.array(new_labels, dtype=np.int64),
            splits=[self.splits[i] for i in keep],
            n_channels=self.n_channels,
            grid=self.grid,
        )


def dataset_from_volumes(
    volumes: list[MpMriVolume],
    splits: list[str],
    grid: tuple[int, int, int],
) -> ArrayDataset:
    if not volumes:
        raise ValueError("no volumes given")
    channels = volumes[0].channels
    labels = []
    for v in volumes:
        if v.channels != channels:
            raise ValueError("all volumes must share the same channel set")
        if v.label is None:
            raise ValueError("volumes must be labeled")
        labels.append(v.label)
    feats = np.stack([pool_volume(v.data, grid) for v in volumes])
    return ArrayDataset(feats, np.array(labels), list(splits), len(channels), tuple(grid))


def pool_dataset(
    manifest: DatasetManifest, root_dir: str | Path, grid: tuple[int, int, int]
) -> ArrayDataset:
    """Load every manifest volume relative to `root_dir` and pool it."""
    root = Path(root_dir)
    volumes, splits = [], []
    for e in manifest.entries:
        vol = read_volume(root / e.path)
        volumes.append(vol.replace(label=e.label))
        splits.append(e.split)
    return dataset_from_volumes(volumes, splits, grid)


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def for_params(cls, params: dict) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict,
    grads: dict,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> dict:
    """One in-place Adam update with bias correction."""
    state.t += 1
    correct1 = 1.0 - beta1 ** state.t
    correct2 = 1.0 - beta2 ** state.t
    for k, g in grads.items():
        state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g
        state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g
        m_hat = state.m[k] / correct1
        v_hat = state.v[k] / correct2
        params[k] -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    val_acc: float
    val_recall: float
    adjustment: float
    lr: float


LOG_HEADER = "epoch,train_loss,val_acc,val_recall,A,lr"


def write_log_csv(log: list[EpochLog], path: str | Path) -> None:
    lines = [LOG_HEADER]
    for row in log:
        lines.append(
            f"{row.epoch},{row.train_loss!r},{row.val_acc!r},"
            f"{row.val_recall!r},{row.adjustment!r},{row.lr!r}"
        )
    _atomic_write_bytes(Path(path), ("\n".join(lines) + "\n").encode("utf-8"))


@dataclass
class ClassifierCheckpoint:
    params: dict
    val_acc: float
    val_recall: float
    epoch: int
    loss_kind: str
    loss_params: dict
    model_cfg: ModelConfig
    n_channels: int
    n_classes: int

    def __post_init__(self):
        for name in PARAM_NAMES:
            if not np.isfinite(self.params[name]).all():
                raise ValueError(f"non-finite values in parameter {name!r}")
        if not (0.0 <= self.val_acc <= 1.0 and 0.0 <= self.val_recall <= 1.0):
            raise ValueError("checkpoint metrics must lie in [0, 1]")

    @property
    def val_ars(self) -> float:
        return ars(self.val_recall, self.val_acc)


def rebuild_model(ckpt: ClassifierCheckpoint) -> PooledClassifier:
    model = PooledClassifier(ckpt.model_cfg, ckpt.n_channels, ckpt.n_classes)
    model.set_params(ckpt.params)
    return model


def checkpoint_file_paths(path: str | Path) -> tuple[Path, Path]:
    base = Path(path)
    if base.suffix == ".json":
        base = base.with_suffix("")
    return base.with_suffix(".json"), base.with_suffix(".params.raw")


def save_checkpoint(ckpt: ClassifierCheckpoint, path: str | Path) -> None:
    sidecar, raw = checkpoint_file_paths(path)
    header = {
        "kind": "classifier-checkpoint",
        "epoch": ckpt.epoch,
        "val_acc": ckpt.val_acc,
        "val_recall": ckpt.val_recall,
        "loss_kind": ckpt.loss_kind,
        "loss_params": ckpt.loss_params,
        "model": {
            "pooled_grid": list(ckpt.model_cfg.pooled_grid),
            "hidden_width": ckpt.model_cfg.hidden_width,
            "activation": ckpt.model_cfg.activation,
            "init_seed": ckpt.model_cfg.init_seed,
        },
        "n_channels": ckpt.n_channels,
        "n_classes": ckpt.n_classes,
        "params": [
            {"name": n, "shape": list(ckpt.params[n].shape)} for n in PARAM_NAMES
        ],
        "dtype": "<f8",
    }
    blob = b"".join(
        np.ascontiguousarray(ckpt.params[n], dtype="<f8").tobytes() for n in PARAM_NAMES
    )
    _atomic_write_bytes(raw, blob)
    _atomic_write_bytes(sidecar, (json.dumps(header, sort_keys=True) + "\n").encode())


def load_checkpoint(path: str | Path) -> ClassifierCheckpoint:
    sidecar, raw = checkpoint_file_paths(path)
    header = json.loads(sidecar.read_text())
    if header.get("kind") != "classifier-checkpoint":
        raise ValueError(f"{sidecar} is not a classifier checkpoint")
    blob = raw.read_bytes()
    params, offset = {}, 0
    for spec in header["params"]:
        shape = tuple(spec["shape"])
        size = int(np.prod(shape)) * 8
        params[spec["name"]] = (
            np.frombuffer(blob[offset:offset + size], dtype="<f8").reshape(shape).copy()
        )
        offset += size
    if offset != len(blob):
        raise ValueError(f"{raw}: parameter payload size mismatch")
    model = header["model"]
    return ClassifierCheckpoint(
        params=params,
        val_acc=header["val_acc"],
        val_recall=header["val_recall"],
        epoch=header["epoch"],
        loss_kind=header["loss_kind"],
        loss_params=header["loss_params"],
        model_cfg=ModelConfig(
            pooled_grid=tuple(model["pooled_grid"]),
            hidden_width=model["hidden_width"],
            activation=model["activation"],
            init_seed=model["init_seed"],
        ),
        n_channels=header["n_channels"],
        n_classes=header["n_classes"],
    )


@dataclass
class TrainResult:
    checkpoints: list[ClassifierCheckpoint]
    log: list[EpochLog]
    best: ClassifierCheckpoint
    final: ClassifierCheckpoint
    stopped_epoch: int

    @property
    def selected(self) -> ClassifierCheckpoint:
        """Highest-validation-ARS checkpoint; a run that never met the
        thresholds yields its final parameters instead."""
        if not self.checkpoints:
            return self.final
        return max(self.checkpoints, key=lambda c: (c.val_ars, -c.epoch))


def _val_metrics(preds: np.ndarray, y: np.ndarray, n_classes: int) -> tuple[float, float]:
    """Accuracy plus class-1 recall (binary) or macro recall (multi-class)."""
    acc = float(np.mean(preds == y))
    if n_classes == 2:
        pos = y == 1
        recall = float(np.mean(preds[pos] == 1)) if pos.any() else 0.0
        return acc, recall
    recalls = [float(np.mean(preds[y == c] == c)) for c in range(n_classes) if (y == c).any()]
    return acc, float(np.mean(recalls)) if recalls else 0.0


def train(
    dataset: ArrayDataset,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    loss_cfg: LossConfig,
    feedback_cfg: FeedbackConfig | None = None,
    n_classes: int | None = None,
) -> TrainResult:
    """Run the full epoch loop on a split dataset; see the module docstring."""
    x_train, y_train = dataset.split_arrays("train")
    x_val, y_val = dataset.split_arrays("val")
    if x_train.shape[0] == 0 or x_val.shape[0] == 0:
        raise ValueError("train and val splits must both be nonempty")
    if n_classes is None:
        n_classes = max(2, int(dataset.labels.max()) + 1)

    model = PooledClassifier(model_cfg, dataset.n_channels, n_classes)
    if dataset.features.shape[1] != model.in_dim:
        raise ValueError("dataset feature width does not match the model's pooled grid")
    loss = make_loss(loss_cfg, n_classes)
    controller = FeedbackController(feedback_cfg or FeedbackConfig(), loss_cfg.rfa_hyperparams)
    adam = AdamState.for_params(model.params)
    rng = np.random.default_rng(train_cfg.shuffle_seed)
    n_train = x_train.shape[0]

    def snapshot(acc: float, recall: float, epoch: int) -> ClassifierCheckpoint:
        return ClassifierCheckpoint(
            params=model.copy_params(),
            val_acc=acc,
            val_recall=recall,
            epoch=epoch,
            loss_kind=loss_cfg.kind,
            loss_params={"m": loss_cfg.m, "n1": loss_cfg.n1, "n2": loss_cfg.n2,
                         "gamma": loss_cfg.gamma, "alpha": loss_cfg.alpha},
            model_cfg=model_cfg,
            n_channels=dataset.n_channels,
            n_classes=n_classes,
        )

    checkpoints: list[ClassifierCheckpoint] = []
    log: list[EpochLog] = []
    best: ClassifierCheckpoint | None = None
    stale_epochs = 0
    epoch = 0

    for epoch in range(1, train_cfg.max_epochs + 1):
        lr = scheduled_lr(train_cfg, epoch)
        if loss.name == "rfa":
            adjustment = controller.adjustment()
            loss.set_feedback(adjustment, controller.loss_accuracy)
        else:
            adjustment = 0.0

        order = rng.permutation(n_train)
        loss_sum = 0.0
        class_total = np.zeros(n_classes, dtype=np.int64)
        class_correct = np.zeros(n_classes, dtype=np.int64)
        for start in range(0, n_train, train_cfg.batch):
            idx = order[start:start + train_cfg.batch]
            xb, yb = x_train[idx], y_train[idx]
            probs, cache = model.forward(xb)
            value, grad_probs = loss.batch(probs, yb)
            if not math.isfinite(value):
                raise RuntimeError(
                    f"non-finite loss {value} at epoch {epoch}, batch start {start}"
                )
            grads = model.backward(cache, grad_probs)
            adam_step(model.params, grads, adam, lr)
            loss_sum += value * len(idx)
            if loss.name == "recall":
                batch_preds = probs.argmax(axis=1)
                np.add.at(class_total, yb, 1)
                np.add.at(class_correct, yb[batch_preds == yb], 1)

        if loss.name == "recall":
            with np.errstate(invalid="ignore"):
                recalls = np.where(class_total > 0, class_correct / class_total, 0.0)
            loss.set_recalls(recalls)

        val_probs, _ = model.forward(x_val)
        val_preds = val_probs.argmax(axis=1)
        val_acc, val_recall = _val_metrics(val_preds, y_val, n_classes)
        if loss.name == "rfa":
            controller.observe(val_acc, val_recall)

        improved = False
        if val_acc > train_cfg.acc_min and val_recall > train_cfg.recall_min:
            checkpoints.append(snapshot(val_acc, val_recall, epoch))
            improved = True
        if best is None or ars(val_recall, val_acc) > best.val_ars:
            best = snapshot(val_acc, val_recall, epoch)
            improved = True
        stale_epochs = 0 if improved else stale_epochs + 1

        log.append(EpochLog(epoch, loss_sum / n_train, val_acc, val_recall, adjustment, lr))
        if stale_epochs >= train_cfg.early_stop_patience:
            break

    final = snapshot(log[-1].val_acc, log[-1].val_recall, epoch)
    return TrainResult(checkpoints, log, best, final, epoch)


def train_manifest(
    manifest: DatasetManifest,
    root_dir: str | Path,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    loss_cfg: LossConfig,
    feedback_cfg: FeedbackConfig | None = None,
    n_classes: int | None = None,
) -> TrainResult:
    dataset = pool_dataset(manifest, root_dir, model_cfg.pooled_grid)
    return train(dataset, model_cfg, train_cfg, loss_cfg, feedback_cfg, n_classes)


def evaluate(
    ckpt: ClassifierCheckpoint, dataset: ArrayDataset, split: str = "test"
) -> MetricBundle:
    """Metric bundle of a binary checkpoint on the named split."""
    if ckpt.n_classes != 2:
        raise ValueError("evaluate reports binary metric bundles; use a 2-class checkpoint")
    x, y = dataset.split_arrays(split)
    if x.shape[0] == 0:
        raise ValueError(f"split {split!r} is empty")
    model = rebuild_model(ckpt)
    probs, _ = model.forward(x)
    preds = BinaryPredictionSet(scores=probs[:, 1], preds=probs.argmax(axis=1), labels=y)
    return bundle_metrics(preds)
