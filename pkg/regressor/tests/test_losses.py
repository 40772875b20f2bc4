import numpy as np
import pytest
import torch

from floodregress.losses import smooth_l1


class TestSmoothL1:
    def test_quadratic_branch(self):
        loss = smooth_l1(torch.tensor([0.5]), torch.tensor([0.0]), delta=1.0)
        assert loss.item() == 0.125

    def test_linear_branch(self):
        loss = smooth_l1(torch.tensor([2.0]), torch.tensor([0.0]), delta=1.0)
        assert loss.item() == 1.5

    def test_branch_boundary_continuity(self):
        at = smooth_l1(torch.tensor([1.0]), torch.tensor([0.0]), delta=1.0)
        assert at.item() == 0.5
        below = smooth_l1(torch.tensor([1.0 - 1e-6]), torch.tensor([0.0]), delta=1.0)
        above = smooth_l1(torch.tensor([1.0 + 1e-6]), torch.tensor([0.0]), delta=1.0)
        assert abs(above.item() - below.item()) < 3e-6

    def test_mean_reduction(self):
        y = torch.tensor([0.5, 2.0])
        f = torch.zeros(2)
        assert smooth_l1(y, f).item() == pytest.approx((0.125 + 1.5) / 2)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            smooth_l1(torch.zeros(3), torch.zeros(4))

    def test_gradient_bounded_by_delta(self):
        f = torch.linspace(-5, 5, 41, dtype=torch.float64, requires_grad=True)
        y = torch.zeros(41, dtype=torch.float64)
        smooth_l1(y, f, delta=1.0).backward()
        # mean reduction divides by N
        assert torch.all(f.grad.abs() <= 1.0 / 41 + 1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        y = torch.tensor(rng.normal(size=10), dtype=torch.float64)
        f0 = rng.normal(size=10)
        f = torch.tensor(f0, dtype=torch.float64, requires_grad=True)
        smooth_l1(y, f, delta=1.0).backward()
        eps = 1e-6
        for i in range(10):
            fp = f0.copy()
            fm = f0.copy()
            fp[i] += eps
            fm[i] -= eps
            lp = smooth_l1(y, torch.tensor(fp, dtype=torch.float64)).item()
            lm = smooth_l1(y, torch.tensor(fm, dtype=torch.float64)).item()
            fd = (lp - lm) / (2 * eps)
            grad = f.grad[i].item()
            denom = max(abs(fd), 1e-12)
            assert abs(grad - fd) / denom < 1e-4
