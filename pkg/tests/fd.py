"""Central finite differences, used as the independent gradient oracle."""

import torch

STEP = 1e-5
REL_TOL = 1e-4


def numeric_grad(fn, tensor: torch.Tensor, step: float = STEP) -> torch.Tensor:
    grad = torch.zeros_like(tensor)
    flat = tensor.data.view(-1)
    out = grad.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            orig = flat[i].item()
            flat[i] = orig + step
            plus = float(fn())
            flat[i] = orig - step
            minus = float(fn())
            flat[i] = orig
            out[i] = (plus - minus) / (2 * step)
    return grad


def analytic_grad(fn, tensor: torch.Tensor) -> torch.Tensor:
    tensor.requires_grad_(True)
    if tensor.grad is not None:
        tensor.grad = None
    (g,) = torch.autograd.grad(fn(), tensor)
    return g.detach()


def relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    denom = max(a.norm().item(), b.norm().item(), 1e-12)
    return (a - b).norm().item() / denom


def check(fn, tensor: torch.Tensor) -> float:
    """Relative error between autograd and central differences for ``d fn / d tensor``."""
    return relative_error(analytic_grad(fn, tensor), numeric_grad(fn, tensor))
