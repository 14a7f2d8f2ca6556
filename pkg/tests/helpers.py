"""Independent numerical oracles shared by the test modules."""

import torch


@torch.no_grad()
def central_diff(fn, x, h=1e-6):
    """Central finite-difference gradient of scalar ``fn`` at float64 tensor ``x``."""
    x = x.detach().clone()
    grad = torch.zeros_like(x)
    flat = x.view(-1)
    g = grad.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + h
        fp = float(fn(x))
        flat[i] = orig - h
        fm = float(fn(x))
        flat[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return grad


def autograd_grad(fn, x):
    x = x.detach().clone().requires_grad_(True)
    out = fn(x)
    g, = torch.autograd.grad(out, x)
    return g


def rel_err(a, b, floor=1e-8):
    return float((a - b).norm() / max(float(b.norm()), floor))
