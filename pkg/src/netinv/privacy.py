"""Memorization auditing: windowed structural similarity against a reference set."""

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

_WINDOW = 7
_C1 = 0.01 ** 2
_C2 = 0.03 ** 2


def _channel_ssim(x, y):
    """Mean local SSIM over sliding 7x7 uniform windows, valid region."""
    wx = sliding_window_view(x, (_WINDOW, _WINDOW))
    wy = sliding_window_view(y, (_WINDOW, _WINDOW))
    mx = wx.mean(axis=(-1, -2))
    my = wy.mean(axis=(-1, -2))
    vx = (wx * wx).mean(axis=(-1, -2)) - mx * mx
    vy = (wy * wy).mean(axis=(-1, -2)) - my * my
    cov = (wx * wy).mean(axis=(-1, -2)) - mx * my
    num = (2 * mx * my + _C1) * (2 * cov + _C2)
    den = (mx * mx + my * my + _C1) * (vx + vy + _C2)
    return float(np.mean(num / den))


def ssim(a, b):
    """SSIM between two images in [0, 1]; multichannel averages per-channel scores."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"ssim needs identical shapes, got {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.ndim != 3:
        raise ShapeError(f"ssim expects [H,W] or [C,H,W] images, got {a.shape}")
    if a.shape[-2] < _WINDOW or a.shape[-1] < _WINDOW:
        raise ShapeError(f"image {a.shape} smaller than the {_WINDOW}x{_WINDOW} window")
    return float(np.mean([_channel_ssim(a[c], b[c]) for c in range(a.shape[0])]))


@dataclass
class PrivacyReport:
    match_index: np.ndarray     # per reconstruction: argmax reference index
    match_ssim: np.ndarray      # per reconstruction: best SSIM
    mean_ssim: float
    max_ssim: float
    reference_id: str = "reference"


def privacy_score(recons, reference_set, reference_id="reference"):
    """Best-match SSIM of every reconstruction against the reference set."""
    recons = np.asarray(recons, dtype=np.float64)
    refs = np.asarray(reference_set, dtype=np.float64)
    if len(recons) == 0 or len(refs) == 0:
        raise ShapeError("privacy_score needs nonempty reconstruction and reference sets")
    if recons.shape[1:] != refs.shape[1:]:
        raise ShapeError(f"image shape mismatch: recons {recons.shape[1:]} "
                         f"vs reference {refs.shape[1:]}")
    scores = np.empty((len(recons), len(refs)))
    for i, r in enumerate(recons):
        for j, ref in enumerate(refs):
            scores[i, j] = ssim(r, ref)
    best = scores.argmax(axis=1)           # ties resolve to the lowest index
    best_ssim = scores[np.arange(len(recons)), best]
    return PrivacyReport(match_index=best, match_ssim=best_ssim,
                         mean_ssim=float(best_ssim.mean()),
                         max_ssim=float(best_ssim.max()),
                         reference_id=reference_id)
