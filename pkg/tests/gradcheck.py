"""Central finite-difference oracle shared by the gradient tests."""

import numpy as np
import torch

from mlcsearch.nn import compute_gradients


def relative_error(a, b, floor=1e-10):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale < floor:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def finite_difference(loss_fn, tensor, index, h=1e-5):
    with torch.no_grad():
        orig = tensor[index].item()
        tensor[index] = orig + h
        up = float(loss_fn())
        tensor[index] = orig - h
        down = float(loss_fn())
        tensor[index] = orig
    return (up - down) / (2 * h)


def check_gradients(loss_fn, params, rng, entries_per_tensor=6, h=1e-5):
    """Return ``{name: relative error}`` between autograd and central differences.

    ``loss_fn`` rebuilds the scalar loss from the current parameter values.
    """
    analytic = compute_gradients(loss_fn(), params)
    errors = {}
    for name, tensor in params.items():
        flat = tensor.numel()
        picks = rng.choice(flat, size=min(entries_per_tensor, flat), replace=False)
        idx = [np.unravel_index(int(p), tuple(tensor.shape)) for p in picks]
        a = [analytic[name][i].item() for i in idx]
        n = [finite_difference(loss_fn, tensor, i, h) for i in idx]
        errors[name] = relative_error(a, n)
    return errors
