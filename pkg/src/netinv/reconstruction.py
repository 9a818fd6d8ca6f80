"""Training-like data reconstruction: the full composite objective.

On top of the inversion terms, the composite loss asks that generated
images stay correctly and confidently classified after a bounded
perturbation, look like valid low-noise images (pixel and smoothness
priors), and sit where the classifier's weight gradients are small, all
properties expected of genuine training points.
"""

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .errors import ContractError, DomainError
from .inversion import InversionConfig, _sample_batch
from .losses import (LossBreakdown, compose_total, cosine_diversity_loss,
                     kl_loss, ortho_loss, pixel_loss, soften_onehot, tv_loss,
                     weighted_ce_loss)
from .optim import make_optimizer

RECON_TERM_ORDER = ("kl", "kl_pert", "ce", "ce_pert", "cosine", "ortho",
                    "var", "pix", "grad")


@dataclass
class ReconConfig(InversionConfig):
    alpha_pert: float = 1.0     # perturbed-KL weight
    beta_pert: float = 1.0      # perturbed-CE weight
    eta_var: float = 0.1        # smoothness prior
    eta_pix: float = 1.0        # pixel-range prior
    eta_grad: float = 0.01      # classifier weight-gradient penalty
    eps_pert: float = 0.05      # L-infinity perturbation radius
    gamma: float = 0.25

    def __post_init__(self):
        super().__post_init__()
        for name in ("alpha_pert", "beta_pert", "eta_var", "eta_pix", "eta_grad"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise DomainError(f"loss weight {name} must be finite and nonnegative")
        if not 0.0 <= self.eps_pert <= 1.0:
            raise DomainError("perturbation radius must be in [0, 1]")


def linf_perturb(images, eps_pert, rng):
    """Uniform noise in the L-infinity ball, then clamp to [0, 1]."""
    if eps_pert < 0:
        raise DomainError("perturbation radius must be nonnegative")
    t = images if isinstance(images, ag.Tensor) else ag.Tensor(np.asarray(images, dtype=np.float32))
    base = ag.clamp01(t)
    if eps_pert == 0:
        return base
    noise = rng.uniform(-eps_pert, eps_pert, size=t.shape).astype(t.dtype)
    return ag.clamp01(ag.add(base, ag.Tensor(noise)))


def reconstruction_loss(images, clf, labels, cfg, rng):
    """-> (total tensor or None, LossBreakdown) for one generated batch."""
    if not clf.frozen:
        raise ContractError("classifier must be frozen during reconstruction")
    labels = np.asarray(labels, dtype=np.int64)
    m = clf.spec.classes
    logits, feats = clf.forward(images)
    probs = ag.softmax(logits)
    target = soften_onehot(labels, m, cfg.soften)

    terms = {
        "kl": kl_loss(probs, target),
        "ce": weighted_ce_loss(logits, labels),
        "cosine": cosine_diversity_loss(feats),
        "ortho": ortho_loss(feats),
        "var": tv_loss(images),
        "pix": pixel_loss(images),
    }
    weights = {"kl": cfg.alpha, "ce": cfg.beta, "cosine": cfg.gamma,
               "ortho": cfg.delta, "var": cfg.eta_var, "pix": cfg.eta_pix,
               "kl_pert": cfg.alpha_pert, "ce_pert": cfg.beta_pert,
               "grad": cfg.eta_grad}

    if cfg.alpha_pert > 0 or cfg.beta_pert > 0:
        # the perturbed copy should keep the conditioning labels
        perturbed = linf_perturb(images, cfg.eps_pert, rng)
        logits_p, _ = clf.forward(perturbed)
        terms["kl_pert"] = kl_loss(ag.softmax(logits_p), target)
        terms["ce_pert"] = weighted_ce_loss(logits_p, labels)
    if cfg.eta_grad > 0:
        onehot = np.zeros((len(labels), m), dtype=logits.dtype)
        onehot[np.arange(len(labels)), labels] = 1.0
        true_logit_sum = ag.sum_(ag.mul(logits, ag.Tensor(onehot)))
        terms["grad"] = ag.grad_norm_sq(true_logit_sum, clf.parameters())

    total = compose_total(terms, weights, RECON_TERM_ORDER)
    breakdown = LossBreakdown(
        terms={k: float(v.item()) for k, v in terms.items()},
        weights={k: w for k, w in weights.items() if k in terms},
        total=float(total.item()) if total is not None else 0.0).check()
    return total, breakdown


def reconstruction_step(gen, clf, cfg, rng, opt=None):
    if opt is None:
        opt = make_optimizer(gen.parameters(), cfg.optimizer, lr=cfg.lr)
    classes = list(cfg.target_classes) if cfg.target_classes else list(range(clf.spec.classes))
    labels, images = _sample_batch(gen, classes, cfg.batch_size, rng, training=True)
    total, breakdown = reconstruction_loss(images, clf, labels, cfg, rng)
    if total is not None:
        opt.zero_grad()
        clf.zero_grad()
        ag.backward(total)
        opt.step()
    return breakdown


def train_reconstructor(gen, clf, cfg, rng=None, on_step=None):
    rng = rng or np.random.default_rng(cfg.seed)
    opt = make_optimizer(gen.parameters(), cfg.optimizer, lr=cfg.lr)
    history = []
    for step in range(cfg.steps):
        breakdown = reconstruction_step(gen, clf, cfg, rng, opt)
        history.append((step, breakdown))
        if on_step is not None:
            on_step(step, breakdown)
    return history


def generate_samples(gen, count, rng, classes=None):
    """Eval-mode batch generation; returns (labels, images ndarray)."""
    classes = list(classes) if classes else list(range(gen.spec.classes))
    labels_all, images_all = [], []
    done = 0
    with ag.no_grad():
        while done < count:
            b = min(256, count - done)
            labels, images = _sample_batch(gen, classes, b, rng, training=False)
            labels_all.append(labels)
            images_all.append(images.data)
            done += b
    return np.concatenate(labels_all), np.concatenate(images_all, axis=0)
