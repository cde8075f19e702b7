"""Dense float64 network pieces: initialisation, FFNs, gradients and Adam.

Tensors are ``torch.float64`` throughout; reverse-mode gradients come from
``torch.autograd``. Parameters are plain leaf tensors held in named
dictionaries so the optimizer and checkpoints can address them by key.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ConfigurationError, ContractError, NumericError

DTYPE = torch.float64
CHECKPOINT_VERSION = 1

_ACTIVATIONS = {
    "relu": torch.relu,
    "tanh": torch.tanh,
    "identity": lambda x: x,
}


def as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(DTYPE)
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if not arr.flags.writeable:
        arr = arr.copy()
    return torch.from_numpy(arr)


def glorot_init(shape: tuple[int, int], seed) -> torch.Tensor:
    """Uniform Glorot/Xavier matrix; ``seed`` may be an int or a numpy Generator."""
    fan_in, fan_out = shape
    if fan_in < 1 or fan_out < 1:
        raise ConfigurationError(f"glorot_init needs positive dimensions, got {shape}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return torch.from_numpy(rng.uniform(-bound, bound, size=shape))


class FFN:
    """Row-wise feedforward network ``x -> act(x W_1 + b_1) -> ... -> x W_L + b_L``.

    ``dims`` lists neuron-layer widths, so ``[in, hidden, out]`` is the
    input/one-hidden/output network with two weight matrices.
    """

    def __init__(self, dims, seed, activation: str = "relu"):
        if len(dims) < 2:
            raise ConfigurationError("an FFN needs at least input and output widths")
        if activation not in _ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {activation!r}")
        self.dims = tuple(int(d) for d in dims)
        self.activation = activation
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for d_in, d_out in zip(self.dims[:-1], self.dims[1:]):
            self.weights.append(glorot_init((d_in, d_out), rng).requires_grad_(True))
            self.biases.append(torch.zeros(d_out, dtype=DTYPE, requires_grad=True))

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        return ffn_forward(self, x)

    def named_parameters(self, prefix: str = "") -> dict[str, torch.Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}W{i}"] = w
            out[f"{prefix}b{i}"] = b
        return out


def ffn_forward(params: FFN, x: torch.Tensor) -> torch.Tensor:
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ConfigurationError(
            f"FFN expects input with {params.in_dim} columns, got shape {tuple(x.shape)}"
        )
    act = _ACTIVATIONS[params.activation]
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        x = x @ w + b
        if i < last:
            x = act(x)
    return x


def compute_gradients(loss: torch.Tensor, params: dict[str, torch.Tensor]) -> dict[str, torch.Tensor]:
    """Reverse-mode gradients of a scalar ``loss`` for every named parameter.

    Parameters the loss does not depend on get zero gradients.
    """
    if not isinstance(loss, torch.Tensor) or loss.numel() != 1:
        raise ContractError("gradients require a scalar loss")
    names = list(params)
    tensors = [params[k] for k in names]
    if not loss.requires_grad:
        return {k: torch.zeros_like(t) for k, t in zip(names, tensors)}
    grads = torch.autograd.grad(loss.reshape(()), tensors, allow_unused=True)
    return {
        k: (g.detach() if g is not None else torch.zeros_like(t))
        for k, t, g in zip(names, tensors, grads)
    }


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor], state: AdamState, lr: float):
    """One in-place Adam update with L2 weight decay added to the gradient."""
    for name, g in grads.items():
        if not torch.all(torch.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ConfigurationError(f"gradient shape mismatch for {name!r}")
            if state.weight_decay:
                g = g + state.weight_decay * p
            m = state.m.get(name)
            if m is None:
                m = state.m[name] = torch.zeros_like(p)
                state.v[name] = torch.zeros_like(p)
            v = state.v[name]
            m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
            v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
            p.sub_(lr * (m / bc1) / (torch.sqrt(v / bc2) + state.eps))
    return params


def save_checkpoint(path, params: dict[str, torch.Tensor], meta: dict | None = None) -> None:
    """Write named parameters to an ``.npz`` container with a version tag."""
    arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in params.items()}
    arrays["__version__"] = np.asarray(CHECKPOINT_VERSION)
    arrays["__meta__"] = np.asarray(json.dumps(meta or {}, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path, expected: dict[str, torch.Tensor] | None = None):
    """Read a checkpoint; with ``expected``, validate shapes and copy values in."""
    with np.load(path, allow_pickle=False) as data:
        version = int(data["__version__"])
        if version != CHECKPOINT_VERSION:
            raise ContractError(f"unsupported checkpoint version {version}")
        meta = json.loads(str(data["__meta__"]))
        values = {k[len("param/"):]: data[k].copy() for k in data.files if k.startswith("param/")}
    if expected is not None:
        missing = set(expected) - set(values)
        extra = set(values) - set(expected)
        if missing or extra:
            raise ContractError(f"checkpoint keys differ: missing={sorted(missing)} extra={sorted(extra)}")
        for name, tensor in expected.items():
            if tuple(tensor.shape) != values[name].shape:
                raise ContractError(
                    f"shape mismatch for {name!r}: checkpoint {values[name].shape}, model {tuple(tensor.shape)}"
                )
        with torch.no_grad():
            for name, tensor in expected.items():
                tensor.copy_(torch.from_numpy(values[name]))
    return values, meta
