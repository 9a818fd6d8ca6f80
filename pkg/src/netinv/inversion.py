"""Generator training against a frozen classifier.

The generator is asked for images that the classifier assigns to requested
labels while staying diverse: KL and cross-entropy pull each image toward
its conditioning label, cosine and Gram-orthogonality terms push the
penultimate features of a batch apart.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .errors import ContractError, ConvergenceError, DomainError
from .losses import (LossBreakdown, compose_total, cosine_diversity_loss,
                     kl_loss, ortho_loss, soften_onehot, weighted_ce_loss)

INV_TERM_ORDER = ("kl", "ce", "cosine", "ortho")
from .models import make_condition
from .optim import make_optimizer


@dataclass
class InversionConfig:
    alpha: float = 1.0          # KL weight
    beta: float = 1.0           # CE weight
    gamma: float = 0.5          # cosine-diversity weight
    delta: float = 0.1          # Gram-orthogonality weight
    batch_size: int = 32
    steps: int = 2000
    lr: float = 2e-3
    optimizer: str = "adam"
    soften: float = 0.1         # KL target smoothing mass
    target_accuracy: float = 0.9
    eval_every: int = 200
    eval_samples: int = 256
    seed: int = 0
    target_classes: tuple = None   # None -> all classifier classes

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "delta"):
            if getattr(self, name) < 0:
                raise DomainError(f"loss weight {name} must be nonnegative")
        if self.batch_size < 2:
            raise DomainError("batch size must be >= 2 (pairwise losses need pairs)")


def _sample_batch(gen, classes, batch_size, rng, training):
    labels = rng.choice(classes, size=batch_size)
    z = rng.standard_normal((batch_size, gen.spec.z_dim)).astype(np.float32)
    conds = [make_condition(int(l), gen.spec) for l in labels]
    images = gen.forward(ag.Tensor(z), conds, rng=rng, training=training)
    return labels, images


def inversion_step(gen, clf, cfg, rng, opt=None):
    """One generator update; the classifier must be frozen and stays bit-unchanged."""
    if not clf.frozen:
        raise ContractError("classifier must be frozen before inversion")
    if opt is None:
        opt = make_optimizer(gen.parameters(), cfg.optimizer, lr=cfg.lr)
    m = clf.spec.classes
    classes = list(cfg.target_classes) if cfg.target_classes else list(range(m))
    labels, images = _sample_batch(gen, classes, cfg.batch_size, rng, training=True)
    logits, feats = clf.forward(images)
    probs = ag.softmax(logits)

    terms = {
        "kl": kl_loss(probs, soften_onehot(labels, m, cfg.soften)),
        "ce": weighted_ce_loss(logits, labels),
        "cosine": cosine_diversity_loss(feats),
        "ortho": ortho_loss(feats),
    }
    weights = {"kl": cfg.alpha, "ce": cfg.beta, "cosine": cfg.gamma, "ortho": cfg.delta}
    total = compose_total(terms, weights, INV_TERM_ORDER)
    if total is not None:
        opt.zero_grad()
        clf.zero_grad()
        ag.backward(total)
        opt.step()
    return LossBreakdown(terms={k: float(v.item()) for k, v in terms.items()},
                         weights=weights,
                         total=float(total.item()) if total is not None else 0.0).check()


def inversion_accuracy(gen, clf, n_samples, rng, target_classes=None):
    """Fraction of eval-mode samples whose classifier argmax equals the condition."""
    if n_samples < 1:
        raise DomainError("need at least one sample")
    classes = list(target_classes) if target_classes else list(range(clf.spec.classes))
    hits, done = 0, 0
    with ag.no_grad():
        while done < n_samples:
            b = min(256, n_samples - done)
            labels, images = _sample_batch(gen, classes, b, rng, training=False)
            logits, _ = clf.forward(images)
            hits += int((logits.data.argmax(axis=1) == labels).sum())
            done += b
    return hits / n_samples


def train_generator(gen, clf, cfg, rng=None, on_step=None):
    """Run inversion steps until the accuracy target or the step budget.

    ``on_step(step, breakdown, acc_or_None)`` is invoked after every step;
    returns (history, final_accuracy)."""
    rng = rng or np.random.default_rng(cfg.seed)
    opt = make_optimizer(gen.parameters(), cfg.optimizer, lr=cfg.lr)
    history = []
    acc = None
    for step in range(cfg.steps):
        breakdown = inversion_step(gen, clf, cfg, rng, opt)
        acc = None
        if (step + 1) % cfg.eval_every == 0 or step == cfg.steps - 1:
            acc = inversion_accuracy(gen, clf, cfg.eval_samples, rng,
                                     cfg.target_classes)
        history.append((step, breakdown, acc))
        if on_step is not None:
            on_step(step, breakdown, acc)
        if acc is not None and acc >= cfg.target_accuracy:
            break
    if acc is None:
        acc = inversion_accuracy(gen, clf, cfg.eval_samples, rng, cfg.target_classes)
    return history, acc


def pca_project(features, k):
    """Top-k principal projection via power iteration with deflation."""
    x = np.asarray(features, dtype=np.float64)
    n, d = x.shape
    if not n > k >= 1:
        raise DomainError(f"need N > k >= 1, got N={n}, k={k}")
    centered = x - x.mean(axis=0, keepdims=True)
    cov = centered.T @ centered / (n - 1)
    rng = np.random.default_rng(0)
    comps, variances = [], []
    for _ in range(k):
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        lam = float(v @ cov @ v)
        for it in range(1000):
            w = cov @ v
            norm = np.linalg.norm(w)
            if norm < 1e-300:
                break              # null direction: any unit vector qualifies
            v = w / norm
            lam_new = float(v @ cov @ v)
            # Rayleigh quotient convergence; robust on near-degenerate spectra
            if abs(lam_new - lam) <= 1e-8 * max(1.0, abs(lam_new)):
                lam = lam_new
                break
            lam = lam_new
        else:
            raise ConvergenceError("power iteration did not converge", iterations=1000)
        comps.append(v)
        variances.append(lam)
        cov = cov - lam * np.outer(v, v)
    comps = np.stack(comps, axis=1)
    return centered @ comps, np.asarray(variances)
