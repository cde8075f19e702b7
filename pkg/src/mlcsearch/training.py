"""Label-free objectives and the training loop."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .diffusion import HeatKernelConfig, LayerDiffusion, diffuse_layer
from .encoder import EncoderConfig, EncoderParams, encode
from .errors import ConfigurationError, NumericError
from .graph import MultilayerGraph
from .nn import AdamState, adam_step, compute_gradients


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 0.8
    beta: float = 0.4
    margin: float = 0.5
    neg_samples_per_node: int = 5
    epochs: int = 70
    patience_window: int = 10
    min_improvement: float = 1e-4
    lr_init: float = 1e-4
    lr_peak: float = 0.01
    warmup_fraction: float = 0.1
    weight_decay: float = 1e-4
    all_pairs: bool = False
    literal_sign: bool = False
    correlation: str = "flat"

    def __post_init__(self):
        for name in ("alpha", "beta"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {value}")
        if not self.margin > 0:
            raise ConfigurationError("margin must be positive")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.patience_window < 1:
            raise ConfigurationError("patience_window must be >= 1")
        if self.correlation not in ("flat", "column"):
            raise ConfigurationError("correlation must be 'flat' or 'column'")
        if not self.all_pairs and self.neg_samples_per_node < 1:
            raise ConfigurationError("neg_samples_per_node must be >= 1")


# -- losses -------------------------------------------------------------------


def inter_layer_loss(Cs, U: torch.Tensor) -> torch.Tensor:
    """``(1/n) * sum_r ||C_r - U||_F^2``."""
    n = U.shape[0]
    total = U.new_zeros(())
    for C in Cs:
        if C.shape != U.shape:
            raise ConfigurationError(f"shape mismatch {tuple(C.shape)} vs {tuple(U.shape)}")
        total = total + ((C - U) ** 2).sum()
    return total / n


def _abs_pearson(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    da = a - a.mean()
    db = b - b.mean()
    va = (da * da).mean()
    vb = (db * db).mean()
    # relative guard: a constant vector leaves only rounding residue in da
    tiny = 1e-24
    if va <= tiny * ((a * a).mean() + 1e-300) or vb <= tiny * ((b * b).mean() + 1e-300):
        return a.new_zeros(())
    cov = (da * db).mean()
    return cov.abs() / (torch.sqrt(va) * torch.sqrt(vb))


def layer_correlation(phi_c: torch.Tensor, psi_p: torch.Tensor, mode: str = "flat") -> torch.Tensor:
    if mode == "flat":
        return _abs_pearson(phi_c.reshape(-1), psi_p.reshape(-1))
    if mode == "column":
        da = phi_c - phi_c.mean(dim=0)
        db = psi_p - psi_p.mean(dim=0)
        va = (da * da).mean(dim=0)
        vb = (db * db).mean(dim=0)
        tiny = 1e-24
        ok = (va > tiny * ((phi_c * phi_c).mean(dim=0) + 1e-300)) & (vb > tiny * ((psi_p * psi_p).mean(dim=0) + 1e-300))
        denom = torch.sqrt(torch.where(ok, va, torch.ones_like(va))) * torch.sqrt(torch.where(ok, vb, torch.ones_like(vb)))
        corr = torch.where(ok, (da * db).mean(dim=0).abs() / denom, torch.zeros_like(va))
        return corr.mean()
    raise ConfigurationError(f"unknown correlation mode {mode!r}")


def intra_layer_loss(Cs, Ps, proj_phi, proj_psi, mode: str = "flat") -> torch.Tensor:
    """Sum over layers of ``|corr(phi_r(C_r), psi_r(P_r))|``."""
    total = None
    for r, (C, P) in enumerate(zip(Cs, Ps)):
        if C.numel() < 2:
            raise ConfigurationError("correlation needs at least two entries")
        term = layer_correlation(proj_phi[r](C), proj_psi[r](P), mode)
        total = term if total is None else total + term
    return total


def sample_negatives(n: int, per_node: int, rng: np.random.Generator) -> np.ndarray:
    """``n x per_node`` uniform draws from ``[0, n) \\ {v}`` for each row ``v``."""
    if per_node < 1:
        raise ConfigurationError("need at least one negative per node")
    if n < 2:
        raise ConfigurationError("negative sampling needs at least two nodes")
    draw = rng.integers(0, n - 1, size=(n, per_node))
    return draw + (draw >= np.arange(n)[:, None])


def all_pairs_negatives(n: int) -> np.ndarray:
    return np.tile(np.arange(n), (n, 1))


def proximity_loss(C: torch.Tensor, comZ: torch.Tensor, negatives, margin: float = 0.5, literal_sign: bool = False):
    """Mean margin hinge ``max(sig(C_v.Z_u) - sig(C_v.Z_v) + margin, 0)`` over pairs.

    ``negatives[v]`` lists the ``u`` paired with node ``v``. With
    ``literal_sign`` the hinge is negated, reproducing the printed sign.
    """
    neg = torch.as_tensor(np.asarray(negatives), dtype=torch.long)
    if neg.ndim != 2 or neg.shape[1] == 0:
        raise ConfigurationError("every node needs a non-empty negative set")
    pos = torch.sigmoid((C * comZ).sum(dim=1))
    neg_score = torch.sigmoid(torch.einsum("vf,vsf->vs", C, comZ[neg]))
    hinge = torch.relu(neg_score - pos[:, None] + margin)
    loss = hinge.mean()
    return -loss if literal_sign else loss


@dataclass
class LossTerms:
    l_p: torch.Tensor
    l_inter: torch.Tensor
    l_intra: torch.Tensor
    total: torch.Tensor


def total_loss(l_p, l_inter, l_intra, alpha: float = 0.8, beta: float = 0.4) -> torch.Tensor:
    return l_p + alpha * l_inter + beta * l_intra


def compute_losses(params: EncoderParams, diffusions, negatives, cfg: LossConfig) -> LossTerms:
    """One forward pass and all loss components. ``negatives`` is per layer."""
    reps = encode(params, [d.H for d in diffusions], [d.hops for d in diffusions])
    l_p = sum(
        proximity_loss(C, Z, neg, cfg.margin, cfg.literal_sign)
        for C, Z, neg in zip(reps.C, reps.comZ, negatives)
    )
    l_inter = inter_layer_loss(reps.C, reps.U)
    l_intra = intra_layer_loss(reps.C, reps.P, params.proj_phi, params.proj_psi, cfg.correlation)
    return LossTerms(l_p, l_inter, l_intra, total_loss(l_p, l_inter, l_intra, cfg.alpha, cfg.beta))


# -- schedule & loop ----------------------------------------------------------


def warmup_epochs(cfg: LossConfig) -> int:
    return max(1, math.ceil(cfg.warmup_fraction * cfg.epochs))


def learning_rate(epoch: int, cfg: LossConfig) -> float:
    """Linear warmup to ``lr_peak`` then linear decay to ``lr_init`` (0-based epoch)."""
    warm = warmup_epochs(cfg)
    if epoch < warm:
        return cfg.lr_init + (cfg.lr_peak - cfg.lr_init) * (epoch + 1) / warm
    remaining = cfg.epochs - warm
    if remaining <= 0:
        return cfg.lr_peak
    frac = (epoch - warm + 1) / remaining
    return cfg.lr_peak - (cfg.lr_peak - cfg.lr_init) * min(frac, 1.0)


@dataclass
class TrainReport:
    l_p: list = field(default_factory=list)
    l_inter: list = field(default_factory=list)
    l_intra: list = field(default_factory=list)
    total: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    stopped_epoch: int = 0
    wall_time: float = 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "l_p", "l_inter", "l_intra", "total", "lr"])
        for e in range(len(self.total)):
            writer.writerow(
                [e + 1] + [repr(float(x[e])) for x in (self.l_p, self.l_inter, self.l_intra, self.total, self.lr)]
            )
        return buf.getvalue()


def precompute_diffusion(graph: MultilayerGraph, heat: HeatKernelConfig, k_max: int) -> list[LayerDiffusion]:
    return [diffuse_layer(layer.adjacency, x, heat, k_max) for layer, x in zip(graph.layers, graph.features)]


def train(
    graph: MultilayerGraph,
    cfg: LossConfig = LossConfig(),
    seed: int = 0,
    *,
    encoder_cfg: EncoderConfig = EncoderConfig(),
    heat: HeatKernelConfig = HeatKernelConfig(),
    diffusions=None,
):
    """Train encoder weights on ``graph``; returns ``(params, report)``."""
    start = time.perf_counter()
    if diffusions is None:
        diffusions = precompute_diffusion(graph, heat, encoder_cfg.k_max)
    params = EncoderParams(graph.num_features, graph.r_max, encoder_cfg, seed)
    named = params.named_parameters()
    state = AdamState(weight_decay=cfg.weight_decay)
    rng = np.random.default_rng([seed, 1])
    report = TrainReport()
    best = math.inf
    best_epoch = 0
    warm = warmup_epochs(cfg)

    for epoch in range(cfg.epochs):
        if cfg.all_pairs:
            negatives = [all_pairs_negatives(graph.n)] * graph.r_max
        else:
            negatives = [sample_negatives(graph.n, cfg.neg_samples_per_node, rng) for _ in range(graph.r_max)]
        terms = compute_losses(params, diffusions, negatives, cfg)
        total = float(terms.total.detach())
        if not math.isfinite(total):
            raise NumericError(f"non-finite loss at epoch {epoch + 1}")
        lr = learning_rate(epoch, cfg)
        report.l_p.append(float(terms.l_p.detach()))
        report.l_inter.append(float(terms.l_inter.detach()))
        report.l_intra.append(float(terms.l_intra.detach()))
        report.total.append(total)
        report.lr.append(lr)
        report.stopped_epoch = epoch + 1

        grads = compute_gradients(terms.total, named)
        adam_step(named, grads, state, lr)

        if epoch < warm:
            # losses climb while the rate ramps up; monitor from the peak on
            best, best_epoch = math.inf, epoch
        elif total < best - cfg.min_improvement:
            best = total
            best_epoch = epoch
        elif epoch - best_epoch >= cfg.patience_window:
            break

    report.wall_time = time.perf_counter() - start
    return params, report


def representations(params: EncoderParams, diffusions):
    """Inference pass; returns detached :class:`LayerRepresentations`."""
    with torch.no_grad():
        return encode(params, [d.H for d in diffusions], [d.hops for d in diffusions]).detached()
