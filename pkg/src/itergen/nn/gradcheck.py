"""Finite-difference verification of analytic gradients.

Central differences at 64-bit against autograd, over every parameter and
every differentiable input, reduced to the worst relative error.
"""

from __future__ import annotations

import torch


def grad_check(op, inputs: list[torch.Tensor], epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and numeric gradients.

    ``op(*inputs)`` must return a tensor; a fixed random cotangent reduces
    it to a scalar so one backward pass covers all outputs.  All tensors
    (inputs marked requires_grad and any parameters closed over via
    ``op.parameters()``) are perturbed elementwise.
    """
    tensors: list[torch.Tensor] = [t for t in inputs if t.requires_grad]
    if hasattr(op, "parameters"):
        tensors += [p for p in op.parameters() if p.requires_grad]
    if not tensors:
        return 0.0

    def scalar() -> torch.Tensor:
        out = op(*inputs)
        return (out * cotangent).sum()

    with torch.no_grad():
        probe = op(*inputs)
    generator = torch.Generator().manual_seed(0)
    cotangent = torch.randn(probe.shape, dtype=probe.dtype, generator=generator)

    loss = scalar()
    analytic = torch.autograd.grad(loss, tensors, allow_unused=True)

    worst = 0.0
    for tensor, grad in zip(tensors, analytic):
        grad = torch.zeros_like(tensor) if grad is None else grad
        # view (not reshape): perturbations must hit the original storage
        flat = tensor.detach().view(-1)
        for idx in range(flat.numel()):
            original = flat[idx].item()
            with torch.no_grad():
                flat[idx] = original + epsilon
                up = scalar().item()
                flat[idx] = original - epsilon
                down = scalar().item()
                flat[idx] = original
            numeric = (up - down) / (2.0 * epsilon)
            a = grad.reshape(-1)[idx].item()
            denom = max(abs(a), abs(numeric), 1e-6)
            worst = max(worst, abs(a - numeric) / denom)
    return worst
