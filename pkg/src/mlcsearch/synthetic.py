"""Synthetic planted-partition multilayer graphs and noisy decision tensors."""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError
from .graph import LayerGraph, MultilayerGraph, fallback_features


def _partition(n: int, communities_spec) -> list[np.ndarray]:
    spec = list(communities_spec)
    if spec and np.isscalar(spec[0]):
        sizes = [int(s) for s in spec]
        if any(s < 1 for s in sizes) or sum(sizes) != n:
            raise ConfigurationError(f"community sizes {sizes} must be positive and sum to n={n}")
        bounds = np.cumsum([0] + sizes)
        return [np.arange(bounds[i], bounds[i + 1]) for i in range(len(sizes))]
    parts = [np.sort(np.asarray(list(c), dtype=np.int64)) for c in spec]
    flat = np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)
    if flat.size != n or not np.array_equal(np.sort(flat), np.arange(n)):
        raise ConfigurationError("communities must partition [0, n)")
    return parts


def planted_edges(labels: np.ndarray, p_in: float, p_out: float, rng: np.random.Generator) -> np.ndarray:
    n = labels.size
    iu, ju = np.triu_indices(n, k=1)
    same = labels[iu] == labels[ju]
    prob = np.where(same, p_in, p_out)
    keep = rng.random(iu.size) < prob
    return np.stack([iu[keep], ju[keep]], axis=1)


def rewire(edges: np.ndarray, n: int, fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Replace ``round(fraction * m)`` edges by uniformly drawn non-edges."""
    m = len(edges)
    k = int(round(fraction * m))
    if k == 0:
        return edges
    drop = rng.choice(m, size=k, replace=False)
    kept = np.delete(edges, drop, axis=0)
    present = {(int(u), int(v)) for u, v in edges}
    added = []
    max_edges = n * (n - 1) // 2
    if len(present) + k > max_edges:
        raise ConfigurationError("graph too dense to rewire")
    while len(added) < k:
        u, v = rng.integers(0, n, size=2)
        if u == v:
            continue
        pair = (int(min(u, v)), int(max(u, v)))
        if pair in present:
            continue
        present.add(pair)
        added.append(pair)
    out = np.concatenate([kept, np.asarray(added, dtype=np.int64)])
    return out[np.lexsort((out[:, 1], out[:, 0]))]


def synthetic_multilayer(
    n: int,
    communities_spec,
    r_max: int,
    p_in: float,
    p_out: float,
    layer_noise: float = 0.0,
    seed: int = 0,
    *,
    num_buckets: int = 8,
    bump_dim: int = 8,
    bump_scale: float = 1.0,
    feature_noise: float = 1.0,
):
    """Planted-partition layers with per-layer rewiring noise.

    Node features are the degree-bucket one-hot of each layer followed by a
    community bump: a per-community Gaussian centre (``bump_scale``) plus
    per-node Gaussian noise (``feature_noise``), shared across layers.
    Returns ``(graph, communities)``.
    """
    if not 0 <= p_out < p_in <= 1:
        raise ConfigurationError("need 0 <= p_out < p_in <= 1")
    if not 0 <= layer_noise <= 1:
        raise ConfigurationError("layer_noise must lie in [0, 1]")
    if r_max < 1:
        raise ConfigurationError("r_max must be >= 1")
    parts = _partition(n, communities_spec)
    labels = np.empty(n, dtype=np.int64)
    for c, members in enumerate(parts):
        labels[members] = c
    rng = np.random.default_rng(seed)
    layers = []
    for _ in range(r_max):
        edges = planted_edges(labels, p_in, p_out, rng)
        edges = rewire(edges, n, layer_noise, rng)
        layers.append(LayerGraph.from_edges(edges, n))
    g = MultilayerGraph(n, tuple(layers))
    feats = fallback_features(g, num_buckets)
    if bump_dim > 0:
        centres = rng.normal(0.0, bump_scale, size=(len(parts), bump_dim))
        bump = centres[labels] + rng.normal(0.0, feature_noise, size=(n, bump_dim))
        feats = [np.hstack([x, bump]) for x in feats]
    return g.with_features(feats), [list(map(int, p)) for p in parts]


def synthetic_decisions(truth, n: int, r_max: int, flip_rates, seed: int = 0) -> np.ndarray:
    """Each layer reports the truth indicator flipped with its own probability."""
    rates = np.asarray(flip_rates, dtype=np.float64)
    if rates.shape != (r_max,):
        raise ConfigurationError(f"need {r_max} flip rates, got {rates.shape}")
    if np.any(rates < 0) or np.any(rates >= 0.5):
        raise ConfigurationError("flip rates must lie in [0, 0.5)")
    indicator = np.zeros(n, dtype=bool)
    indicator[np.asarray(list(truth), dtype=np.int64)] = True
    rng = np.random.default_rng(seed)
    flips = rng.random((n, r_max)) < rates[None, :]
    reported = indicator[:, None] ^ flips
    D = np.zeros((n, 2, r_max), dtype=np.int8)
    D[:, 1, :] = reported
    D[:, 0, :] = ~reported
    return D
