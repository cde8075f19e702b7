"""Layer-shared / layer-specific node encoders and the hop-attention context."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .diffusion import HopFeatureStack
from .errors import ConfigurationError
from .nn import FFN, as_tensor, glorot_init


@dataclass(frozen=True)
class EncoderConfig:
    hidden_dim: int = 512
    k_max: int = 3
    share_layer_weights: bool = False
    activation: str = "relu"

    def __post_init__(self):
        if self.hidden_dim < 1:
            raise ConfigurationError("hidden_dim must be >= 1")
        if self.k_max < 1:
            raise ConfigurationError("k_max must be >= 1")


class EncoderParams:
    """All trainable pieces of the encoder for an ``r_max``-layer graph.

    Construction order of the sub-networks is fixed so that a seed fully
    determines the initial weights.
    """

    def __init__(self, in_dim: int, r_max: int, cfg: EncoderConfig = EncoderConfig(), seed=0):
        self.in_dim = int(in_dim)
        self.r_max = int(r_max)
        self.cfg = cfg
        fh = cfg.hidden_dim
        rng = np.random.default_rng(seed)
        act = cfg.activation

        def per_layer(dims):
            if cfg.share_layer_weights:
                net = FFN(dims, rng, act)
                return [net] * self.r_max
            return [FFN(dims, rng, act) for _ in range(self.r_max)]

        self.shared_ffn = per_layer([self.in_dim, fh, fh])
        self.private_ffn = per_layer([self.in_dim, fh, fh])
        self.combiner_ffn = FFN([self.r_max * fh, fh, fh], rng, act)
        self.hop_ffn = [FFN([(i + 1) * self.in_dim, fh, fh], rng, act) for i in range(1, cfg.k_max + 1)]
        self.W_a = glorot_init((2 * fh, 1), rng).requires_grad_(True)
        self.proj_phi = per_layer([fh, fh])
        self.proj_psi = per_layer([fh, fh])

    @property
    def hidden_dim(self) -> int:
        return self.cfg.hidden_dim

    @property
    def k_max(self) -> int:
        return self.cfg.k_max

    def named_parameters(self) -> dict[str, torch.Tensor]:
        out: dict[str, torch.Tensor] = {}
        groups = [
            ("shared", self.shared_ffn),
            ("private", self.private_ffn),
            ("phi", self.proj_phi),
            ("psi", self.proj_psi),
        ]
        for name, nets in groups:
            if self.cfg.share_layer_weights:
                out.update(nets[0].named_parameters(f"{name}."))
            else:
                for r, net in enumerate(nets):
                    out.update(net.named_parameters(f"{name}[{r}]."))
        out.update(self.combiner_ffn.named_parameters("combiner."))
        for i, net in enumerate(self.hop_ffn, start=1):
            out.update(net.named_parameters(f"hop[{i}]."))
        out["W_a"] = self.W_a
        return out

    def group_of(self, name: str) -> str:
        """Parameter group label, e.g. ``'shared'`` or ``'hop'``."""
        return name.split(".")[0].split("[")[0]


@dataclass
class LayerRepresentations:
    C: list
    P: list
    U: torch.Tensor
    comZ: list
    alpha: list

    def detached(self) -> "LayerRepresentations":
        return LayerRepresentations(
            C=[c.detach() for c in self.C],
            P=[p.detach() for p in self.P],
            U=self.U.detach(),
            comZ=[z.detach() for z in self.comZ],
            alpha=[a.detach() for a in self.alpha],
        )

    def numpy(self):
        """``(C, P)`` as lists of float64 arrays."""
        return [c.detach().numpy() for c in self.C], [p.detach().numpy() for p in self.P]


def encode_layer(params: EncoderParams, H, r: int):
    H = as_tensor(H)
    return params.shared_ffn[r](H), params.private_ffn[r](H)


def combine_shared(params: EncoderParams, Cs) -> torch.Tensor:
    if len(Cs) * params.hidden_dim != params.combiner_ffn.in_dim:
        raise ConfigurationError(
            f"combiner expects {params.combiner_ffn.in_dim // params.hidden_dim} layers, got {len(Cs)}"
        )
    return params.combiner_ffn(torch.cat(list(Cs), dim=1))


def community_context(params: EncoderParams, C: torch.Tensor, hops: HopFeatureStack):
    """Attention-weighted mix of the per-depth neighbourhood encodings.

    Returns ``(comZ, alpha)`` where ``alpha`` is ``n x k_max`` and each row
    sums to one.
    """
    k_max = params.k_max
    if k_max < 1:
        raise ConfigurationError("k_max must be >= 1")
    if len(hops.stack) < k_max + 1:
        raise ConfigurationError(f"hop stack has depth {len(hops.stack) - 1}, need {k_max}")
    stack = [as_tensor(x) for x in hops.stack[: k_max + 1]]
    zs = [params.hop_ffn[i - 1](torch.cat(stack[: i + 1], dim=1)) for i in range(1, k_max + 1)]
    logits = torch.cat([torch.cat([C, z], dim=1) @ params.W_a for z in zs], dim=1)
    alpha = torch.softmax(logits, dim=1)
    comZ = sum(alpha[:, k : k + 1] * zs[k] for k in range(k_max))
    return comZ, alpha


def encode(params: EncoderParams, Hs, hop_stacks) -> LayerRepresentations:
    """Full forward pass over every layer."""
    if len(Hs) != params.r_max or len(hop_stacks) != params.r_max:
        raise ConfigurationError(f"expected {params.r_max} layers of inputs")
    Cs, Ps, comZs, alphas = [], [], [], []
    for r, H in enumerate(Hs):
        C, P = encode_layer(params, H, r)
        comZ, alpha = community_context(params, C, hop_stacks[r])
        Cs.append(C)
        Ps.append(P)
        comZs.append(comZ)
        alphas.append(alpha)
    U = combine_shared(params, Cs)
    return LayerRepresentations(C=Cs, P=Ps, U=U, comZ=comZs, alpha=alphas)
