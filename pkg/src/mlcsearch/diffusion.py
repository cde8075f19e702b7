"""Heat-kernel feature diffusion and hop-feature stacks.

Propagated features are ``H = D^-1 (sum_{k>=1} theta_k O^k) X`` where ``O``
is the symmetrically normalised self-loop-augmented adjacency and ``D`` its
degree matrix. ``O^k`` is never formed; each power is applied to the feature
matrix by repeated sparse products.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, DegenerateInputError, NumericError
from .graph import augment_adjacency


@dataclass(frozen=True)
class HeatKernelConfig:
    t: float = 5.0
    theta_threshold: float = 1e-4
    omega_loop: float = 1.0

    def __post_init__(self):
        if not self.t > 0:
            raise ConfigurationError(f"diffusion time must be positive, got {self.t}")
        if not 0 < self.theta_threshold < 1:
            raise ConfigurationError("theta_threshold must lie in (0, 1)")
        if self.omega_loop < 0:
            raise ConfigurationError("omega_loop must be >= 0")


@dataclass(frozen=True)
class DiffusedFeatures:
    H: np.ndarray
    K: int


@dataclass(frozen=True)
class HopFeatureStack:
    stack: tuple[np.ndarray, ...]

    @property
    def k_max(self) -> int:
        return len(self.stack) - 1


def heat_coefficients(cfg: HeatKernelConfig) -> np.ndarray:
    """Heat-kernel weights ``theta_1..theta_K``.

    Terms are generated with ``theta_{k+1} = theta_k * t / (k + 1)``. The
    series is cut after the last term at or above the threshold once the
    sequence is past its mode (``k >= floor(t)``), so small leading terms of
    a large ``t`` do not end it prematurely.
    """
    t = cfg.t
    mode = max(1, math.floor(t))
    theta = math.exp(-t) * t
    coeffs = [theta]
    k = 1
    last_above = 1 if theta >= cfg.theta_threshold else 0
    while True:
        nxt = theta * t / (k + 1)
        if k + 1 > mode and nxt < cfg.theta_threshold:
            break
        k += 1
        theta = nxt
        coeffs.append(theta)
        if theta >= cfg.theta_threshold:
            last_above = k
    K = max(1, last_above)
    return np.asarray(coeffs[:K], dtype=np.float64)


def normalize_symmetric(aug: sp.spmatrix) -> tuple[sp.csr_matrix, np.ndarray]:
    """Return ``(D^-1/2 A D^-1/2, deg)`` for an augmented adjacency ``A``."""
    aug = sp.csr_matrix(aug, dtype=np.float64)
    deg = np.asarray(aug.sum(axis=1)).ravel()
    if np.any(deg <= 0):
        bad = int(np.flatnonzero(deg <= 0)[0])
        raise DegenerateInputError(f"node {bad} has zero degree; use omega_loop > 0")
    inv_sqrt = 1.0 / np.sqrt(deg)
    scale = sp.diags(inv_sqrt)
    out = (scale @ aug @ scale).tocsr()
    out.sort_indices()
    return out, deg


def diffuse_features(O: sp.spmatrix, X: np.ndarray, deg: np.ndarray, coeffs) -> DiffusedFeatures:
    X = np.asarray(X, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise NumericError("non-finite value in feature matrix")
    if X.shape[0] != O.shape[0] or deg.shape[0] != O.shape[0]:
        raise ConfigurationError("shape mismatch between operator, features and degrees")
    coeffs = np.asarray(coeffs, dtype=np.float64)
    acc = np.zeros_like(X)
    power = X
    for theta in coeffs:
        power = O @ power
        acc += theta * power
    H = acc / deg[:, None]
    return DiffusedFeatures(H=H, K=len(coeffs))


def hop_features(O: sp.spmatrix, X: np.ndarray, k_max: int = 3) -> HopFeatureStack:
    if k_max < 1:
        raise ConfigurationError("k_max must be >= 1")
    X = np.asarray(X, dtype=np.float64)
    stack = [X]
    for _ in range(k_max):
        stack.append(O @ stack[-1])
    return HopFeatureStack(tuple(stack))


@dataclass(frozen=True)
class LayerDiffusion:
    """Everything the encoder needs from one layer, computed once."""

    H: np.ndarray
    hops: HopFeatureStack
    K: int


def diffuse_layer(adjacency, X, cfg: HeatKernelConfig = HeatKernelConfig(), k_max: int = 3) -> LayerDiffusion:
    O, deg = normalize_symmetric(augment_adjacency(adjacency, cfg.omega_loop))
    coeffs = heat_coefficients(cfg)
    diffused = diffuse_features(O, X, deg, coeffs)
    return LayerDiffusion(H=diffused.H, hops=hop_features(O, X, k_max), K=diffused.K)
