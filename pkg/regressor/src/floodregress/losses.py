"""Robust regression loss."""

import torch


def smooth_l1(y: torch.Tensor, f: torch.Tensor, delta: float = 1.0) -> torch.Tensor:
    """Smooth L1 (Huber) loss, mean-reduced.

    Quadratic inside |y - f| <= delta, linear outside, continuous and
    once-differentiable at the junction; the gradient magnitude never
    exceeds delta.
    """
    if y.shape != f.shape:
        raise ValueError(f"shape mismatch: {tuple(y.shape)} vs {tuple(f.shape)}")
    d = y - f
    ad = d.abs()
    per_elem = torch.where(ad <= delta, 0.5 * d * d, delta * ad - 0.5 * delta * delta)
    return per_elem.mean()
