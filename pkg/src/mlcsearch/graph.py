"""Multilayer graph model, file ingestion and adjacency helpers.

All layers share one node set ``0..n-1``. Each layer is an unweighted,
undirected simple graph stored both as a sorted edge array (``u < v``) and
as a symmetric CSR adjacency with zero diagonal.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError, GraphFormatError, NodeRangeError

_HEADER = re.compile(r"^#\s*n\s*=\s*(\d+)\s*$")


def _adjacency_from_edges(edges: np.ndarray, n: int) -> sp.csr_matrix:
    if len(edges) == 0:
        return sp.csr_matrix((n, n), dtype=np.float64)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    data = np.ones(len(rows), dtype=np.float64)
    adj = sp.csr_matrix((data, (rows, cols)), shape=(n, n))
    adj.sum_duplicates()
    adj.sort_indices()
    return adj


def canonical_edges(pairs: Iterable[tuple[int, int]] | np.ndarray) -> np.ndarray:
    """Return unique undirected edges as an ``(m, 2)`` int64 array with ``u < v``.

    Self-loops are rejected; duplicates and reversed pairs collapse.
    """
    arr = np.asarray(list(pairs) if not isinstance(pairs, np.ndarray) else pairs, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    arr = arr.reshape(-1, 2)
    if np.any(arr[:, 0] == arr[:, 1]):
        raise GraphFormatError("self-loops are not allowed in layer edges")
    lo = np.minimum(arr[:, 0], arr[:, 1])
    hi = np.maximum(arr[:, 0], arr[:, 1])
    return np.unique(np.stack([lo, hi], axis=1), axis=0)


@dataclass(frozen=True)
class LayerGraph:
    """One relation type over the shared node set."""

    edges: np.ndarray
    adjacency: sp.csr_matrix

    @classmethod
    def from_edges(cls, pairs, n: int) -> "LayerGraph":
        edges = canonical_edges(pairs)
        if len(edges) and (edges.min() < 0 or edges.max() >= n):
            raise NodeRangeError(f"edge endpoint outside [0, {n})")
        edges.setflags(write=False)
        return cls(edges=edges, adjacency=_adjacency_from_edges(edges, n))

    @property
    def num_edges(self) -> int:
        return int(len(self.edges))

    def degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel()

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(u), int(v)) for u, v in self.edges}


@dataclass(frozen=True)
class MultilayerGraph:
    """Node set shared by ``r_max`` layers plus one feature matrix per layer."""

    n: int
    layers: tuple[LayerGraph, ...]
    features: tuple[np.ndarray, ...] = field(default=())

    def __post_init__(self):
        if len(self.layers) < 1:
            raise ConfigurationError("a multilayer graph needs at least one layer")
        if self.n < 1:
            raise ConfigurationError("a multilayer graph needs at least one node")
        for layer in self.layers:
            if layer.adjacency.shape != (self.n, self.n):
                raise ConfigurationError("layer adjacency shape does not match n")
        feats = tuple(np.asarray(x, dtype=np.float64) for x in self.features)
        if feats:
            if len(feats) != len(self.layers):
                raise ConfigurationError(
                    f"expected {len(self.layers)} feature matrices, got {len(feats)}"
                )
            shape = feats[0].shape
            for x in feats:
                if x.ndim != 2 or x.shape != shape or x.shape[0] != self.n:
                    raise ConfigurationError("feature matrices must all have shape (n, f)")
            for x in feats:
                x.setflags(write=False)
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "features", feats)

    @property
    def r_max(self) -> int:
        return len(self.layers)

    @property
    def num_features(self) -> int:
        return self.features[0].shape[1] if self.features else 0

    def with_features(self, features: Sequence[np.ndarray]) -> "MultilayerGraph":
        return MultilayerGraph(self.n, self.layers, tuple(features))

    def union_adjacency(self) -> sp.csr_matrix:
        total = self.layers[0].adjacency.copy()
        for layer in self.layers[1:]:
            total = total + layer.adjacency
        total.data[:] = 1.0
        return total.tocsr()

    @classmethod
    def from_edge_lists(cls, n: int, edge_lists, features=None) -> "MultilayerGraph":
        layers = tuple(LayerGraph.from_edges(e, n) for e in edge_lists)
        g = cls(n, layers)
        if features is None:
            return g.with_features(fallback_features(g))
        if isinstance(features, np.ndarray) and features.ndim == 2:
            features = [features] * len(layers)
        return g.with_features(features)


# -- parsing -----------------------------------------------------------------


def load_id_map(path) -> dict[str, int]:
    """Read one label per line; the line order defines the dense node id."""
    mapping: dict[str, int] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            label = raw.strip()
            if not label or label.startswith("#"):
                continue
            if label in mapping:
                raise GraphFormatError(f"duplicate label {label!r}", path, lineno)
            mapping[label] = len(mapping)
    return mapping


def _parse_edge_file(path, id_map=None):
    declared = None
    pairs = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                m = _HEADER.match(line)
                if m and lineno == 1:
                    declared = int(m.group(1))
                continue
            parts = line.split()
            if len(parts) != 2:
                what = "weighted edges are not supported" if len(parts) == 3 else "expected two node ids"
                raise GraphFormatError(what, path, lineno)
            if id_map is not None:
                try:
                    u, v = id_map[parts[0]], id_map[parts[1]]
                except KeyError as exc:
                    raise GraphFormatError(f"unknown node label {exc.args[0]!r}", path, lineno) from None
            else:
                try:
                    u, v = int(parts[0]), int(parts[1])
                except ValueError:
                    raise GraphFormatError(f"invalid node id in {line!r}", path, lineno) from None
                if u < 0 or v < 0:
                    raise NodeRangeError("negative node id", path, lineno)
            if u == v:
                raise GraphFormatError("self-loop edge", path, lineno)
            pairs.append((u, v, lineno))
    return declared, pairs


def load_features(path, n: int | None = None) -> np.ndarray:
    """Parse a whitespace-separated real matrix, one node per row."""
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                rows.append([float(tok) for tok in line.split()])
            except ValueError:
                raise GraphFormatError(f"invalid real value in {line!r}", path, lineno) from None
            if len(rows[-1]) != len(rows[0]):
                raise GraphFormatError("ragged feature row", path, lineno)
    x = np.asarray(rows, dtype=np.float64)
    if n is not None and x.shape[0] != n:
        raise GraphFormatError(f"feature file has {x.shape[0]} rows, expected {n}", path)
    if not np.all(np.isfinite(x)):
        raise GraphFormatError("non-finite feature value", path)
    return x


def load_multilayer_graph(
    layer_paths: Sequence[str | os.PathLike],
    feature_path=None,
    *,
    num_buckets: int = 8,
    id_map_path=None,
) -> MultilayerGraph:
    """Load one edge file per layer and an optional feature file.

    ``feature_path`` may be a single path (replicated across layers) or a
    sequence with one path per layer. Without features, degree-bucket
    one-hot features are generated.
    """
    if len(layer_paths) == 0:
        raise ConfigurationError("at least one layer file is required")
    id_map = load_id_map(id_map_path) if id_map_path is not None else None
    parsed = [(_parse_edge_file(p, id_map), p) for p in layer_paths]

    declared = [d for (d, _), _ in parsed if d is not None]
    if id_map is not None:
        declared.append(len(id_map))
    if declared:
        n = max(declared)
        for (decl, pairs), path in parsed:
            limit = decl if decl is not None else n
            for u, v, lineno in pairs:
                if u >= limit or v >= limit:
                    raise NodeRangeError(f"node id {max(u, v)} >= declared n={limit}", path, lineno)
    else:
        ids = [max(u, v) for (_, pairs), _ in parsed for u, v, _ in pairs]
        n = max(ids) + 1 if ids else 0
        if n == 0:
            raise ConfigurationError("no edges and no '#n=' header: node count unknown")

    layers = tuple(LayerGraph.from_edges([(u, v) for u, v, _ in pairs], n) for (_, pairs), _ in parsed)
    g = MultilayerGraph(n, layers)

    if feature_path is None:
        return g.with_features(fallback_features(g, num_buckets))
    if isinstance(feature_path, (str, os.PathLike)):
        x = load_features(feature_path, n)
        return g.with_features([x] * g.r_max)
    if len(feature_path) != g.r_max:
        raise ConfigurationError(f"got {len(feature_path)} feature files for {g.r_max} layers")
    return g.with_features([load_features(p, n) for p in feature_path])


def write_layer(path, layer: LayerGraph, n: int | None = None) -> None:
    with open(path, "w") as fh:
        if n is not None:
            fh.write(f"#n={n}\n")
        for u, v in layer.edges:
            fh.write(f"{u} {v}\n")


def write_features(path, x: np.ndarray) -> None:
    np.savetxt(path, x, fmt="%.17g")


def _read_id_lines(path, what: str) -> list[list[int]]:
    out = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                ids = [int(tok) for tok in line.split()]
            except ValueError:
                raise GraphFormatError(f"invalid node id in {what} line {line!r}", path, lineno) from None
            if any(i < 0 for i in ids):
                raise NodeRangeError("negative node id", path, lineno)
            out.append(ids)
    return out


def read_communities(path) -> list[list[int]]:
    return [sorted(set(c)) for c in _read_id_lines(path, "community")]


def read_queries(path) -> list[list[int]]:
    return _read_id_lines(path, "query")


def write_node_lines(path, groups: Iterable[Iterable[int]]) -> None:
    with open(path, "w") as fh:
        for group in groups:
            fh.write(" ".join(str(int(v)) for v in group) + "\n")


# -- adjacency & features -----------------------------------------------------


def augment_adjacency(adjacency: sp.spmatrix, omega_loop: float = 1.0) -> sp.csr_matrix:
    """Return ``omega_loop * I + A``."""
    if omega_loop < 0:
        raise ConfigurationError(f"omega_loop must be >= 0, got {omega_loop}")
    n = adjacency.shape[0]
    out = sp.csr_matrix(adjacency, dtype=np.float64, copy=True)
    if omega_loop:
        out = (out + omega_loop * sp.identity(n, dtype=np.float64, format="csr")).tocsr()
    out.sort_indices()
    return out


def fallback_features(g: MultilayerGraph, num_buckets: int = 8) -> list[np.ndarray]:
    """One-hot log2 degree buckets, one matrix per layer."""
    if num_buckets < 1:
        raise ConfigurationError("num_buckets must be >= 1")
    out = []
    for layer in g.layers:
        deg = layer.degrees()
        bucket = np.minimum(np.floor(np.log2(deg + 1.0)).astype(np.int64), num_buckets - 1)
        x = np.zeros((g.n, num_buckets), dtype=np.float64)
        x[np.arange(g.n), bucket] = 1.0
        out.append(x)
    return out
