# Filename: metrics.py
# Author: Rich Lewis @RichLewis007
# Description: Evaluation metrics: symmetric mean absolute percentage error for forecasting and
#              classification accuracy.

from __future__ import annotations

from typing import Final

import numpy as np
import torch
from numpy.typing import ArrayLike
from torch import Tensor

from qssm.errors import ShapeMismatchError

SMAPE_MAX: Final[float] = 200.0


def _as_tensor(values: Tensor | ArrayLike) -> Tensor:
    if isinstance(values, Tensor):
        return values.detach().to(torch.float64)
    return torch.as_tensor(np.asarray(values, dtype=np.float64))


def smape(y: Tensor | ArrayLike, yhat: Tensor | ArrayLike) -> float:
    """Symmetric MAPE in [0, 200], averaged over every element.

    Terms with |y| + |yhat| = 0 contribute 0.
    """
    actual = _as_tensor(y)
    predicted = _as_tensor(yhat)
    if actual.shape != predicted.shape:
        raise ShapeMismatchError(
            f"sMAPE needs equal shapes, got {tuple(actual.shape)} and {tuple(predicted.shape)}"
        )
    if actual.numel() == 0:
        raise ShapeMismatchError("sMAPE of an empty sequence is undefined")
    numerator = (actual - predicted).abs()
    denominator = actual.abs() + predicted.abs()
    terms = torch.where(
        denominator > 0, numerator / torch.where(denominator > 0, denominator, 1.0), 0.0
    )
    return float(SMAPE_MAX * terms.mean())


def accuracy(logits_or_labels: Tensor, labels: Tensor) -> float:
    # Fraction correct; accepts logits (..., K) or predicted labels shaped like ``labels``.
    if logits_or_labels.shape == labels.shape:
        predicted = logits_or_labels
    elif logits_or_labels.shape[:-1] == labels.shape:
        predicted = logits_or_labels.argmax(dim=-1)
    else:
        raise ShapeMismatchError(
            f"cannot score predictions {tuple(logits_or_labels.shape)} "
            f"against labels {tuple(labels.shape)}"
        )
    if labels.numel() == 0:
        raise ShapeMismatchError("accuracy of an empty batch is undefined")
    return float((predicted.to(labels.dtype) == labels).to(torch.float64).mean())


__all__ = ["SMAPE_MAX", "accuracy", "smape"]
