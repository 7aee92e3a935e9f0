"""Three-stage binary cascade over ordinal grade groups.

Stage 1 separates grades 0-1 from 2-5, stage 2 separates 2-3 from 4-5 and
stage 3 separates 4 from 5. Inference routes each sample down the tree;
analysis composes the stage-level recall rates into a leaf-level recall
matrix by multiplying the rates along each routing path, which is exact when
stage errors are independent of the earlier stages' decisions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .metrics import ConfusionCounts
from .model import PooledClassifier, pool_volume
from .trainer import ArrayDataset, ClassifierCheckpoint, rebuild_model
from .volume_store import DatasetManifest, MpMriVolume

LEAF_LABELS = ("0-1", "2-3", "4", "5")
LEAF_OF_LABEL = {0: 0, 1: 0, 2: 1, 3: 1, 4: 2, 5: 3}
STAGES = (1, 2, 3)
STAGE_MAPPINGS: dict[int, dict[int, int | None]] = {
    1: {0: 0, 1: 0, 2: 1, 3: 1, 4: 1, 5: 1},
    2: {0: None, 1: None, 2: 0, 3: 0, 4: 1, 5: 1},
    3: {0: None, 1: None, 2: None, 3: None, 4: 0, 5: 1},
}
# Stage-level ground truth for each leaf. Leaves that a correct router never
# carries to a later stage still need a truth there (a misrouted sample faces
# that classifier anyway); the nearest grade group along the ordinal scale
# supplies it.
LEAF_STAGE_TRUTH = {
    0: (0, 0, 0),
    1: (1, 0, 0),
    2: (1, 1, 0),
    3: (1, 1, 1),
}


def relabel_for_stage(manifest: DatasetManifest, stage: int) -> DatasetManifest:
    """Binary manifest for one stage; samples outside its grades are dropped."""
    if stage not in STAGES:
        raise ValueError(f"stage must be one of {STAGES}")
    mapping = STAGE_MAPPINGS[stage]
    out = DatasetManifest(seed=manifest.seed)
    kept_labels = set()
    for e in manifest.entries:
        mapped = mapping[e.label]
        if mapped is None:
            continue
        out.entries.append(type(e)(path=e.path, label=mapped, split=e.split))
        kept_labels.add(mapped)
    if kept_labels != {0, 1}:
        raise ValueError(f"stage {stage} relabeling left a class empty")
    return out


def stage_view(dataset: ArrayDataset, stage: int) -> ArrayDataset:
    """Array-level counterpart of relabel_for_stage."""
    if stage not in STAGES:
        raise ValueError(f"stage must be one of {STAGES}")
    view = dataset.relabel(STAGE_MAPPINGS[stage])
    if set(np.unique(view.labels)) != {0, 1}:
        raise ValueError(f"stage {stage} relabeling left a class empty")
    return view


@dataclass
class CascadeSpec:
    """The three trained stage classifiers."""

    checkpoints: dict[int, ClassifierCheckpoint]

    def __post_init__(self):
        if set(self.checkpoints) != set(STAGES):
            raise ValueError("checkpoints for stages 1, 2 and 3 are required")
        for stage, ckpt in self.checkpoints.items():
            if ckpt.n_classes != 2:
                raise ValueError(f"stage {stage} checkpoint must be binary")

    def models(self) -> dict[int, PooledClassifier]:
        return {stage: rebuild_model(ckpt) for stage, ckpt in self.checkpoints.items()}


@dataclass(frozen=True)
class RoutingRecord:
    """Decision trail of one sample: per-stage positive-branch probability."""

    leaf: str
    confidence: float
    stage_probs: tuple[float, ...]


def route_features(x: np.ndarray, models: dict[int, PooledClassifier]) -> RoutingRecord:
    """Walk one pooled feature vector down the tree.

    Confidence is the product of the chosen branch's probability at every
    stage visited; stages below the first negative decision are skipped.
    """
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    stage_probs = []
    confidence = 1.0
    for stage, negative_leaf in ((1, "0-1"), (2, "2-3"), (3, "4")):
        probs, _ = models[stage].forward(x)
        p_pos = float(probs[0, 1])
        stage_probs.append(p_pos)
        if p_pos <= 0.5:
            return RoutingRecord(negative_leaf, confidence * (1.0 - p_pos), tuple(stage_probs))
        confidence *= p_pos
    return RoutingRecord("5", confidence, tuple(stage_probs))


def route(sample: MpMriVolume, spec: CascadeSpec) -> RoutingRecord:
    """Route one volume; the volume is pooled with stage 1's grid."""
    models = spec.models()
    grids = {m.cfg.pooled_grid for m in models.values()}
    if len(grids) != 1:
        raise ValueError("stage checkpoints disagree on the pooled grid")
    return route_features(models[1].pool(sample), models)


def _check_rates(rates: np.ndarray, stage: int) -> np.ndarray:
    rates = np.asarray(rates, dtype=np.float64)
    if rates.shape != (2, 2):
        raise ValueError(f"stage {stage} rates must be a 2x2 matrix")
    if np.any(rates < 0) or np.any(rates > 1):
        raise ValueError(f"stage {stage} rates must lie in [0, 1]")
    if not np.allclose(rates.sum(axis=1), 1.0, atol=1e-9):
        raise ValueError(f"stage {stage} rate rows must sum to 1")
    return rates


def confusion_rates(counts: ConfusionCounts) -> np.ndarray:
    """Row-normalized 2x2 rate matrix (rows true class, columns predicted)."""
    matrix = counts.as_matrix().astype(np.float64)
    sums = matrix.sum(axis=1)
    if np.any(sums == 0):
        raise ValueError("cannot normalize a confusion matrix with an absent class")
    return matrix / sums[:, None]


def compose_recall(
    rates1: np.ndarray, rates2: np.ndarray, rates3: np.ndarray
) -> np.ndarray:
    """Leaf-level recall matrix from the three stage rate matrices.

    Entry (t, q) is the probability that a sample of true leaf t is routed to
    leaf q: the product over the stages on q's path of the stage rate
    conditioned on t's stage-level truth. The diagonal is the plain product
    of the matching stage recalls.
    """
    rates = {1: _check_rates(rates1, 1), 2: _check_rates(rates2, 2), 3: _check_rates(rates3, 3)}
    # predicted-leaf paths: (stage, predicted class) pairs
    paths = {
        0: ((1, 0),),
        1: ((1, 1), (2, 0)),
        2: ((1, 1), (2, 1), (3, 0)),
        3: ((1, 1), (2, 1), (3, 1)),
    }
    out = np.empty((4, 4), dtype=np.float64)
    for t in range(4):
        truth = LEAF_STAGE_TRUTH[t]
        for q, path in paths.items():
            prob = 1.0
            for stage, pred in path:
                prob *= rates[stage][truth[stage - 1], pred]
            out[t, q] = prob
    return out


@dataclass
class CascadeResult:
    """Everything one cascade evaluation produces."""

    stage_confusions: dict[int, ConfusionCounts]
    composed: np.ndarray        # 4x4 recall matrix from compose_recall
    empirical_counts: np.ndarray  # 4x4 routing counts (rows true leaf)
    empirical: np.ndarray       # row-normalized empirical_counts
    records: list[RoutingRecord] = field(default_factory=list)

    @property
    def composed_leaf_recalls(self) -> np.ndarray:
        return np.diag(self.composed)

    @property
    def empirical_leaf_recalls(self) -> np.ndarray:
        return np.diag(self.empirical)


def cascade_evaluate(spec: CascadeSpec, dataset: ArrayDataset, split: str = "test") -> CascadeResult:
    """Stage confusions, composed recall matrix and empirical routing matrix.

    `dataset` must carry the original six-grade labels; stage views are
    derived internally so all three confusions and the routing statistics
    come from the same samples.
    """
    models = spec.models()
    stage_confusions: dict[int, ConfusionCounts] = {}
    for stage in STAGES:
        view = stage_view(dataset, stage)
        x, y = view.split_arrays(split)
        if x.shape[0] == 0:
            raise ValueError(f"stage {stage} has an empty {split!r} split")
        probs, _ = models[stage].forward(x)
        preds = probs.argmax(axis=1)
        stage_confusions[stage] = ConfusionCounts(
            tp=int(np.sum((y == 1) & (preds == 1))),
            fp=int(np.sum((y == 0) & (preds == 1))),
            fn=int(np.sum((y == 1) & (preds == 0))),
            tn=int(np.sum((y == 0) & (preds == 0))),
        )
    composed = compose_recall(*(confusion_rates(stage_confusions[s]) for s in STAGES))

    x_all, y_all = dataset.split_arrays(split)
    counts = np.zeros((4, 4), dtype=np.int64)
    records = []
    for row, label in zip(x_all, y_all):
        record = route_features(row, models)
        records.append(record)
        counts[LEAF_OF_LABEL[int(label)], LEAF_LABELS.index(record.leaf)] += 1
    sums = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore"):
        empirical = np.where(sums > 0, counts / np.maximum(sums, 1), 0.0)
    return CascadeResult(stage_confusions, composed, counts, empirical, records)


def multiclass_confusion(
    ckpt: ClassifierCheckpoint, dataset: ArrayDataset, split: str = "test"
) -> np.ndarray:
    """n_classes x n_classes count matrix (rows true grade) for a flat classifier."""
    x, y = dataset.split_arrays(split)
    if x.shape[0] == 0:
        raise ValueError(f"split {split!r} is empty")
    model = rebuild_model(ckpt)
    probs, _ = model.forward(x)
    preds = probs.argmax(axis=1)
    k = ckpt.n_classes
    counts = np.zeros((k, k), dtype=np.int64)
    for t, q in zip(y, preds):
        counts[int(t), int(q)] += 1
    return counts


def group_confusion(counts6: np.ndarray) -> np.ndarray:
    """Collapse a 6x6 grade confusion into the 4 leaf groups."""
    counts6 = np.asarray(counts6)
    if counts6.shape != (6, 6):
        raise ValueError("expected a 6x6 confusion matrix")
    out = np.zeros((4, 4), dtype=counts6.dtype)
    for t in range(6):
        for q in range(6):
            out[LEAF_OF_LABEL[t], LEAF_OF_LABEL[q]] += counts6[t, q]
    return out


def grouped_recalls(counts: np.ndarray) -> np.ndarray:
    """Diagonal recall of each leaf group from a 4x4 count matrix."""
    counts = np.asarray(counts, dtype=np.float64)
    sums = counts.sum(axis=1)
    with np.errstate(invalid="ignore"):
        return np.where(sums > 0, np.diag(counts) / np.maximum(sums, 1), 0.0)
