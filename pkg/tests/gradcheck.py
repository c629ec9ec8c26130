"""Central finite differences against autograd, per parameter group (float64)."""
import torch


def relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    den = max(float(a.norm()), float(b.norm()))
    return 0.0 if den == 0.0 else float((a - b).norm()) / den


def numeric_grad(loss_fn, param: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    grad = torch.zeros_like(param)
    flat, gflat = param.data.view(-1), grad.view(-1)
    for i in range(flat.numel()):
        old = flat[i].item()
        flat[i] = old + eps
        up = float(loss_fn())
        flat[i] = old - eps
        down = float(loss_fn())
        flat[i] = old
        gflat[i] = (up - down) / (2 * eps)
    return grad


def check(loss_fn, named_params, eps: float = 1e-6) -> dict[str, float]:
    """Return the relative error of every named parameter's gradient."""
    named_params = list(named_params)
    for _, p in named_params:
        p.grad = None
    loss_fn().backward()
    errors = {}
    with torch.no_grad():
        for name, p in named_params:
            analytic = p.grad.clone() if p.grad is not None else torch.zeros_like(p)
            errors[name] = relative_error(analytic, numeric_grad(loss_fn, p, eps))
    return errors
