"""Training objectives: uncertainty-weighted restoration, trend restoration,
attribute regression, asymmetric multi-label classification, and their
weighted combination.

Reduction convention: each loss sums over all signal/label elements of a
sample; batched inputs (leading batch dimension) are summed per sample and
averaged over the batch, so values are batch-size comparable.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

LOG_CLAMP = 1e-12
SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0  # local restoration weight
    beta: float = 1.0  # trend restoration weight
    gamma: float = 1.0  # attribute prediction weight
    gamma_plus: float = 1.0  # positive focusing exponent
    gamma_minus: float = 4.0  # negative focusing exponent
    margin: float = 0.05  # probability shift for negatives

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "gamma_plus", "gamma_minus", "margin"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.gamma_minus < self.gamma_plus:
            raise ValueError("gamma_minus must be >= gamma_plus")
        if self.margin > 0.2:
            raise ValueError("margin must be in [0, 0.2]")


def _reduce(per_element: torch.Tensor, batched: bool) -> torch.Tensor:
    if batched:
        return per_element.flatten(start_dim=1).sum(dim=1).mean()
    return per_element.sum()


def restoration_loss(x: torch.Tensor, x_hat: torch.Tensor, sigma: torch.Tensor,
                     batched: bool | None = None) -> torch.Tensor:
    """Squared error scaled by per-point uncertainty plus a log-uncertainty
    penalty that stops the model from inflating sigma everywhere."""
    if x.shape != x_hat.shape or x.shape != sigma.shape:
        raise ValueError("restoration_loss arguments must share a shape")
    if not bool((sigma > 0).all()):
        raise ValueError("uncertainty must be strictly positive")
    if batched is None:
        batched = x.dim() >= 3
    per = (x - x_hat) ** 2 / sigma + torch.log(sigma)
    return _reduce(per, batched)


def trend_loss(x_global: torch.Tensor, x_hat_trend: torch.Tensor,
               batched: bool | None = None) -> torch.Tensor:
    """Euclidean distance between the trend-branch restoration and the
    global signal."""
    if x_global.shape != x_hat_trend.shape:
        raise ValueError("trend_loss arguments must share a shape")
    if batched is None:
        batched = x_global.dim() >= 3
    return _reduce((x_global - x_hat_trend) ** 2, batched)


def attribute_loss(y: torch.Tensor, y_hat: torch.Tensor, present: torch.Tensor,
                   missing_counter: list | None = None) -> torch.Tensor:
    """Mean squared error over the attributes that are actually present.

    Fully-missing rows contribute zero; when ``missing_counter`` is given its
    first element is incremented once per such row.
    """
    if y.shape != y_hat.shape or y.shape != present.shape:
        raise ValueError("attribute_loss arguments must share a shape")
    present = present.to(dtype=y.dtype)
    sq = (y - y_hat) ** 2 * present
    if y.dim() == 1:
        m = present.sum()
        if m == 0:
            if missing_counter is not None:
                missing_counter[0] += 1
            return torch.zeros((), dtype=y.dtype, device=y.device)
        return sq.sum() / m
    m = present.sum(dim=1)
    empty = m == 0
    if missing_counter is not None and bool(empty.any()):
        missing_counter[0] += int(empty.sum())
    per_row = sq.sum(dim=1) / torch.clamp(m, min=1.0)
    return per_row.mean()


def asymmetric_class_loss(y: torch.Tensor, p: torch.Tensor, w: LossWeights) -> torch.Tensor:
    """Asymmetric multi-label loss over per-class probabilities.

    Negatives are shifted by the margin before focusing, which zeroes out the
    contribution of easy negatives whose probability is already below it.
    """
    if y.shape != p.shape:
        raise ValueError("labels and probabilities must share a shape")
    if bool((p < 0).any()) or bool((p > 1).any()):
        raise ValueError("probabilities must lie in [0, 1]")
    y = y.to(dtype=p.dtype)
    p_shift = torch.clamp(p - w.margin, min=0.0)
    pos = y * (1 - p) ** w.gamma_plus * torch.log(torch.clamp(p, min=LOG_CLAMP))
    neg = (1 - y) * p_shift ** w.gamma_minus * torch.log(torch.clamp(1 - p_shift, min=LOG_CLAMP))
    per = -(pos + neg)
    if p.dim() >= 2:
        return per.flatten(start_dim=1).sum(dim=1).mean()
    return per.sum()


def combined_ad_loss(global_part: torch.Tensor, local_part: torch.Tensor,
                     trend_part: torch.Tensor, attr_part: torch.Tensor,
                     w: LossWeights) -> torch.Tensor:
    """Weighted sum of the four restoration-pretraining objectives."""
    return global_part + w.alpha * local_part + w.beta * trend_part + w.gamma * attr_part
