"""Relative squared-error metrics."""

from __future__ import annotations

import numpy as np


def _relative(err: float, ref: float):
    if ref == 0:
        return float(err), True
    return float(err / ref), False


def freq_mse(f_hat, f_true, return_flag: bool = False):
    """``|f_hat - f|^2 / |f|^2``; falls back to the absolute error when ``f = 0``."""
    f_hat = np.asarray(f_hat, dtype=float)
    f_true = np.asarray(f_true, dtype=float)
    val, flag = _relative(float(np.sum((f_hat - f_true) ** 2)), float(np.sum(f_true ** 2)))
    return (val, flag) if return_flag else val


def channel_mse(x_hat, x_true, return_flag: bool = False):
    """``||x_hat - x||^2 / ||x||^2``; falls back to the absolute error when ``x = 0``."""
    x_hat = np.asarray(x_hat, dtype=complex)
    x_true = np.asarray(x_true, dtype=complex)
    val, flag = _relative(float(np.sum(np.abs(x_hat - x_true) ** 2)),
                          float(np.sum(np.abs(x_true) ** 2)))
    return (val, flag) if return_flag else val
