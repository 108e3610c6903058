"""Reconstruction metrics and the layer-wise training losses, as plain functions.

Nothing here computes gradients; the losses are evaluated for inspection
and regression testing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LossParams:
    alpha: float = 0.5
    beta: float = 1e-4
    gamma_loss: float = 0.04
    c: float = 0.8
    K: int = 7
    literal_exponent: bool = False

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.gamma_loss <= 0:
            raise ValueError("gamma_loss must be positive")
        if not 0 <= self.c < 1:
            raise ValueError("c must lie in [0, 1)")
        if self.K < 1:
            raise ValueError("K must be at least 1")


def _is_lossy(*maps) -> bool:
    return any(np.any(np.imag(np.asarray(m)) != 0) for m in maps)


def _channels(chi, lossy):
    chi = np.asarray(chi)
    return [chi.real, chi.imag] if lossy else [np.real(chi)]


def nmse(pred, truth) -> float:
    """``||pred - truth||_F^2 / ||truth||_F^2`` over complex entries."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    denom = np.sum(np.abs(truth) ** 2)
    if denom == 0:
        raise ValueError("NMSE is undefined for an all-zero ground truth")
    return float(np.sum(np.abs(pred - truth) ** 2) / denom)


def _ssim_channel(x, y, k1, k2):
    value_range = float(y.max() - y.min())
    if value_range == 0:
        value_range = 1.0
    c1 = (k1 * value_range) ** 2
    c2 = (k2 * value_range) ** 2
    mx, my = x.mean(), y.mean()
    vx = np.mean((x - mx) ** 2)
    vy = np.mean((y - my) ** 2)
    cov = np.mean((x - mx) * (y - my))
    return ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2))


def ssim(pred, truth, k1: float = 0.01, k2: float = 0.03) -> float:
    """Global-statistics SSIM (no sliding window).

    The dynamic range comes from ``truth`` (1 if ``truth`` is constant).
    Complex maps with any nonzero imaginary part are scored per channel
    (real, imaginary) and averaged.
    """
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    lossy = _is_lossy(pred, truth)
    scores = [
        _ssim_channel(x.astype(float), y.astype(float), k1, k2)
        for x, y in zip(_channels(pred, lossy), _channels(truth, lossy))
    ]
    return float(np.mean(scores))


def tv_seminorm(chi) -> float:
    """Anisotropic total variation with forward differences, summed over channels."""
    chi = np.asarray(chi)
    total = 0.0
    for ch in (chi.real, chi.imag):
        total += np.abs(np.diff(ch, axis=0)).sum() + np.abs(np.diff(ch, axis=1)).sum()
    return float(total)


def layer_loss(chi_k, chi_truth, etot_k, etot_truth, params: LossParams = LossParams(), lossy: bool | None = None) -> float:
    """Contrast MSE + beta * TV / N_chi + alpha * total-field MSE for one layer.

    ``N_chi`` counts real scalars (``M^2`` per channel, two channels when
    lossy); the field MSE divides the squared complex Frobenius norm by the
    number of complex entries.
    """
    chi_k = np.asarray(chi_k)
    chi_truth = np.asarray(chi_truth)
    etot_k = np.asarray(etot_k)
    etot_truth = np.asarray(etot_truth)
    if chi_k.shape != chi_truth.shape:
        raise ValueError(f"contrast shape mismatch: {chi_k.shape} vs {chi_truth.shape}")
    if etot_k.shape != etot_truth.shape:
        raise ValueError(f"field shape mismatch: {etot_k.shape} vs {etot_truth.shape}")
    if lossy is None:
        lossy = _is_lossy(chi_k, chi_truth)
    n_chi = chi_k.size * (2 if lossy else 1)
    chi_term = (np.sum(np.abs(chi_k - chi_truth) ** 2) + params.beta * tv_seminorm(chi_k)) / n_chi
    field_term = np.sum(np.abs(etot_k - etot_truth) ** 2) / etot_k.size
    return float(chi_term + params.alpha * field_term)


def layer_weights(params: LossParams = LossParams()) -> np.ndarray:
    """``w_k = c^(K-k)`` for k = 1..K (``0^0 = 1``), so the last layer has weight 1.

    With ``literal_exponent`` the exponent is ``K-1-k`` instead; that puts
    ``1/c`` on the last layer and is undefined for ``c = 0``.
    """
    k = np.arange(1, params.K + 1)
    exps = params.K - k - (1 if params.literal_exponent else 0)
    if params.literal_exponent and params.c == 0:
        raise ValueError("the K-1-k exponent is undefined for c = 0")
    return np.array([params.c**int(e) for e in exps], dtype=float)


def total_loss(per_layer, params: LossParams = LossParams()) -> float:
    per_layer = np.asarray(per_layer, dtype=float)
    if per_layer.shape != (params.K,):
        raise ValueError(f"expected {params.K} layer losses, got {per_layer.shape}")
    return float(np.dot(layer_weights(params), per_layer))


def snr_weighted_loss(base: float, noise_level: float, params: LossParams = LossParams()) -> float:
    """``gamma_loss * SNR * base`` with ``SNR = 1 / noise_level^2``."""
    if noise_level <= 0:
        raise ValueError("noise_level must be positive")
    snr = (1.0 / noise_level) ** 2
    return params.gamma_loss * snr * base


def snr_weight(noise_level: float, params: LossParams = LossParams()) -> float:
    return snr_weighted_loss(1.0, noise_level, params)
