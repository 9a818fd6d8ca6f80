"""Minibatch classifier training with (optionally weighted) cross-entropy."""

import numpy as np

from . import autograd as ag
from .losses import weighted_ce_loss
from .optim import make_optimizer


def iterate_minibatches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_classifier(model, images, labels, *, class_weights=None, epochs=20,
                     batch_size=64, lr=1e-3, optimizer="adam", rng=None,
                     weight_decay=0.0):
    """Train in place; returns per-epoch (loss, accuracy) history."""
    rng = rng or np.random.default_rng(0)
    opt = make_optimizer(model.parameters(), optimizer, lr=lr, weight_decay=weight_decay)
    history = []
    n = len(images)
    for _ in range(epochs):
        epoch_loss, correct = 0.0, 0
        for idx in iterate_minibatches(n, batch_size, rng):
            xb = ag.Tensor(images[idx])
            logits, _ = model.forward(xb)
            loss = weighted_ce_loss(logits, labels[idx], class_weights)
            opt.zero_grad()
            ag.backward(loss)
            opt.step()
            epoch_loss += loss.item() * len(idx)
            correct += int((logits.data.argmax(axis=1) == labels[idx]).sum())
        history.append((epoch_loss / n, correct / n))
    return history


def accuracy(model, images, labels, batch_size=256):
    correct = 0
    with ag.no_grad():
        for start in range(0, len(images), batch_size):
            logits, _ = model.forward(ag.Tensor(images[start:start + batch_size]))
            correct += int((logits.data.argmax(axis=1) == labels[start:start + batch_size]).sum())
    return correct / len(images)


def predict_probs(model, images, batch_size=256):
    out = []
    with ag.no_grad():
        for start in range(0, len(images), batch_size):
            logits, _ = model.forward(ag.Tensor(images[start:start + batch_size]))
            out.append(ag.softmax(logits).data)
    return np.concatenate(out, axis=0)
