"""Garbage-class training cycle and uncertainty scoring.

An n-class task becomes (n+1)-class: the extra class starts as Gaussian
noise and is repeatedly refilled with inverted samples, so the classifier
learns to route anything off the in-distribution manifold into it.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .errors import ConfigError, ContractError, DivergenceError, DomainError
from .inversion import InversionConfig, inversion_accuracy, train_generator
from .reconstruction import generate_samples
from .training import accuracy, predict_probs, train_classifier


@dataclass
class GarbageSet:
    images: np.ndarray          # [N, C, H, W], every label is the garbage index
    provenance: list            # per image: "noise" | "inverted@cycle_k"
    capacity: int
    noise_count: int            # leading noise block, never evicted

    def __len__(self):
        return len(self.images)

    def add(self, images, tag):
        self.images = np.concatenate([self.images, np.asarray(images, dtype=np.float32)])
        self.provenance.extend([tag] * len(images))
        excess = len(self.images) - self.capacity
        if excess > 0:
            # evict the oldest inverted samples; the noise block stays
            keep = np.ones(len(self.images), dtype=bool)
            evictable = [i for i in range(len(self.images)) if i >= self.noise_count]
            keep[evictable[:excess]] = False
            self.images = self.images[keep]
            self.provenance = [p for p, k in zip(self.provenance, keep) if k]


def init_garbage(count, image_shape, rng, capacity=None):
    """Gaussian-noise seed images: N(0.5, 0.25^2) per pixel, clamped to [0, 1]."""
    if count < 1:
        raise DomainError("garbage set needs at least one seed image")
    images = np.clip(rng.normal(0.5, 0.25, size=(count, *image_shape)), 0.0, 1.0)
    return GarbageSet(images=images.astype(np.float32),
                      provenance=["noise"] * count,
                      capacity=capacity if capacity is not None else 10 * count,
                      noise_count=count)


def class_weights(counts):
    """Inverse-frequency weights normalized to mean 1."""
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts < 1):
        raise DomainError(f"all class counts must be >= 1, got {counts}")
    w = 1.0 / counts
    return w * len(w) / w.sum()


def uncertainty(p):
    """Normalized squared distance from uniform: 0 = one-hot, 1 = uniform.

    The predicted distribution's distance from uniform is divided by the
    distance a one-hot prediction would attain, so the score is a
    scale-free certainty measure over the n+1 classes.
    """
    p = np.asarray(p, dtype=np.float64)
    m = p.shape[-1]
    if p.ndim != 1 or m < 2:
        raise ContractError(f"uncertainty expects one distribution vector, got shape {p.shape}")
    if abs(p.sum() - 1.0) > 1e-6 or np.any(p < -1e-12):
        raise ContractError(f"malformed distribution (sum {p.sum():.8f}, min {p.min():.3e})")
    k = int(np.argmax(p))                       # ties: lowest index
    u = 1.0 / m
    num = float(np.sum((p - u) ** 2))
    onehot = np.zeros(m)
    onehot[k] = 1.0
    den = float(np.sum((onehot - u) ** 2))      # equals (m-1)/m
    return float(min(1.0, max(0.0, 1.0 - num / den)))


@dataclass
class Prediction:
    probs: np.ndarray
    index: int
    is_ood: bool
    confidence: float
    ue: float


def ood_predict(clf, image):
    """Single-image prediction with garbage routing and uncertainty score."""
    image = np.asarray(image, dtype=np.float32)
    probs = predict_probs(clf, image[None])[0].astype(np.float64)
    probs = probs / probs.sum()
    k = int(np.argmax(probs))
    return Prediction(probs=probs, index=k,
                      is_ood=(k == clf.spec.classes - 1),
                      confidence=float(probs[k]),
                      ue=uncertainty(probs))


@dataclass
class ThresholdReport:
    min_id_confidence: float
    max_ood_confidence: float   # inf-flagged when no OOD sample is misrouted
    gap: float
    n_id_correct: int
    n_ood_misrouted: int
    ood_all_routed: bool


def threshold_report(clf, id_images, id_labels, ood_images):
    """Confidence gap between correct ID predictions and misrouted OOD ones."""
    if len(id_images) == 0 or len(ood_images) == 0:
        raise ContractError("threshold report needs nonempty ID and OOD sets")
    garbage = clf.spec.classes - 1
    id_probs = predict_probs(clf, np.asarray(id_images, dtype=np.float32))
    id_pred = id_probs.argmax(axis=1)
    correct = id_pred == np.asarray(id_labels)
    min_id = float(id_probs[correct].max(axis=1).min()) if correct.any() else math.nan
    ood_probs = predict_probs(clf, np.asarray(ood_images, dtype=np.float32))
    ood_pred = ood_probs.argmax(axis=1)
    misrouted = ood_pred != garbage
    if misrouted.any():
        max_ood = float(ood_probs[misrouted].max(axis=1).max())
        gap = min_id - max_ood
        absent = False
    else:
        max_ood = math.inf
        gap = math.inf
        absent = True
    return ThresholdReport(min_id_confidence=min_id, max_ood_confidence=max_ood,
                           gap=gap, n_id_correct=int(correct.sum()),
                           n_ood_misrouted=int(misrouted.sum()),
                           ood_all_routed=absent)


@dataclass
class CycleReport:
    cycle: int
    id_train_accuracy: float
    id_test_accuracy: float
    inversion_accuracy: float
    garbage_size: int
    mean_ue_inverted: float
    class_weight_vector: np.ndarray
    threshold_gap: float
    ood_misrouted: int


@dataclass
class OodCycleConfig:
    cycles: int = 5
    epochs_per_cycle: int = 15
    batch_size: int = 64
    lr: float = 1e-3
    garbage_init: int = 100
    budget: int = None              # None -> one ID class's training count
    capacity_factor: int = 4
    inversion: InversionConfig = field(default_factory=InversionConfig)
    warmup_cycles: int = 1
    seed: int = 0


def ood_training_cycle(clf, gen_factory, id_train, cfg, rng=None, id_test=None,
                       on_cycle=None):
    """Train / invert / exclude loop; returns (classifier, [CycleReport])."""
    n1 = clf.spec.classes
    n = n1 - 1
    if id_train.labels.max() >= n:
        raise ContractError(f"ID labels must lie in [0, {n}) for an {n1}-class model")
    rng = rng or np.random.default_rng(cfg.seed)
    garbage_idx = n
    budget = cfg.budget if cfg.budget is not None else max(1, len(id_train) // n)
    capacity = cfg.capacity_factor * len(id_train)
    garbage = init_garbage(cfg.garbage_init, id_train.image_shape, rng,
                           capacity=capacity)

    def train_once():
        images = np.concatenate([id_train.images, garbage.images])
        labels = np.concatenate([id_train.labels,
                                 np.full(len(garbage), garbage_idx, dtype=np.int64)])
        counts = np.bincount(labels, minlength=n1)
        weights = class_weights(counts)
        train_classifier(clf, images, labels, class_weights=weights,
                         epochs=cfg.epochs_per_cycle, batch_size=cfg.batch_size,
                         lr=cfg.lr, rng=rng)
        return weights, accuracy(clf, images[:len(id_train)], id_train.labels)

    reports = []
    if cfg.cycles == 0:
        train_once()
        return clf, reports

    for cycle in range(1, cfg.cycles + 1):
        weights, id_train_acc = train_once()
        if cycle > cfg.warmup_cycles and id_train_acc < 1.0 / n1 + 0.05:
            raise DivergenceError(
                f"ID train accuracy {id_train_acc:.3f} below chance after cycle {cycle}",
                report=reports)

        # invert the current classifier over all n+1 conditioning labels
        gen = gen_factory(cycle)
        was_frozen = clf.frozen
        clf.freeze()
        _, inv_acc = train_generator(gen, clf, cfg.inversion, rng=rng)
        clf.frozen = was_frozen

        labels, images = generate_samples(gen, budget, rng,
                                          classes=range(n1))
        probs = predict_probs(clf, images)
        ue_vals = [uncertainty(p / p.sum()) for p in probs.astype(np.float64)]
        garbage.add(images, f"inverted@cycle_{cycle}")

        id_test_acc = (accuracy(clf, id_test.images, id_test.labels)
                       if id_test is not None else math.nan)
        thr = threshold_report(clf, id_train.images, id_train.labels, images)
        report = CycleReport(cycle=cycle,
                             id_train_accuracy=id_train_acc,
                             id_test_accuracy=id_test_acc,
                             inversion_accuracy=inv_acc,
                             garbage_size=len(garbage),
                             mean_ue_inverted=float(np.mean(ue_vals)),
                             class_weight_vector=weights,
                             threshold_gap=thr.gap,
                             ood_misrouted=thr.n_ood_misrouted)
        reports.append(report)
        if on_cycle is not None:
            on_cycle(report, images)

    # final retraining so the last cycle's exclusions take effect
    train_once()
    return clf, reports


def evaluate_grid(models, datasets):
    """ID accuracy on the diagonal, garbage-routing rate off it."""
    names = list(models.keys())
    for name in names:
        if name not in datasets:
            raise ConfigError(f"no dataset named {name!r} for the model trained on it")
    matrix = np.zeros((len(names), len(datasets)))
    col_names = list(datasets.keys())
    for i, mname in enumerate(names):
        clf = models[mname]
        garbage = clf.spec.classes - 1
        for j, dname in enumerate(col_names):
            ds = datasets[dname]
            probs = predict_probs(clf, ds.images)
            pred = probs.argmax(axis=1)
            if mname == dname:
                matrix[i, j] = float((pred == ds.labels).mean())
            else:
                matrix[i, j] = float((pred == garbage).mean())
    return names, col_names, matrix
