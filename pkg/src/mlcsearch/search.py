"""Per-layer community scoring and ESG-maximising identification."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order

from .errors import ConfigurationError, ContractError

SIMILARITIES = ("cosine", "L1", "L2")


@dataclass(frozen=True)
class ScoreConfig:
    lam: float = -1.0
    tau: float = 0.9
    similarity: str = "cosine"
    connected_only: bool = False

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ConfigurationError(f"tau must lie in (0, 1], got {self.tau}")
        if self.similarity not in SIMILARITIES:
            raise ConfigurationError(f"similarity must be one of {SIMILARITIES}")


@dataclass(frozen=True)
class CommunityScore:
    cS: np.ndarray
    pS: np.ndarray
    S: np.ndarray


@dataclass(frozen=True)
class LayerCommunity:
    layer: int
    nodes: np.ndarray
    esg: float
    iterations: int = 0

    def to_json(self, query) -> str:
        return json.dumps(
            {
                "query": [int(q) for q in query],
                "layer": self.layer,
                "nodes": [int(v) for v in self.nodes],
                "esg": float(self.esg),
            }
        )


def _check_query(query, n: int) -> np.ndarray:
    q = np.unique(np.asarray(list(query), dtype=np.int64))
    if q.size == 0:
        raise ContractError("query must contain at least one node")
    if q.min() < 0 or q.max() >= n:
        raise ConfigurationError(f"query node outside [0, {n})")
    return q


def similarity_to_query(X: np.ndarray, query: np.ndarray, kind: str = "cosine") -> np.ndarray:
    """Mean similarity of every row of ``X`` to the query rows."""
    X = np.asarray(X, dtype=np.float64)
    Q = X[query]
    if kind == "cosine":
        norms = np.linalg.norm(X, axis=1)
        safe = np.where(norms > 0, norms, 1.0)
        Xn = X / safe[:, None]
        Xn[norms == 0] = 0.0
        return (Xn @ Xn[query].T).mean(axis=1)
    if kind == "L1":
        return -np.abs(X[:, None, :] - Q[None, :, :]).sum(axis=2).mean(axis=1)
    if kind == "L2":
        return -np.linalg.norm(X[:, None, :] - Q[None, :, :], axis=2).mean(axis=1)
    raise ConfigurationError(f"unknown similarity {kind!r}")


def zscore(x: np.ndarray) -> np.ndarray:
    """Population z-score; a constant vector maps to zeros."""
    sigma = x.std()
    if sigma == 0 or not np.isfinite(sigma):
        return np.zeros_like(x)
    return (x - x.mean()) / sigma


def layer_community_scores(query, C, P, cfg: ScoreConfig = ScoreConfig()) -> CommunityScore:
    C = np.asarray(C, dtype=np.float64)
    q = _check_query(query, C.shape[0])
    cS = similarity_to_query(C, q, cfg.similarity)
    pS = similarity_to_query(P, q, cfg.similarity)
    return CommunityScore(cS=cS, pS=pS, S=zscore(cS) + cfg.lam * zscore(pS))


def esg(S, members, n_total: int | None = None, tau: float = 0.9) -> float:
    """Expected score gain of ``members`` under scores ``S``.

    ``(sum_{v in members} S_v - mean(S) * |members|) / |members|**tau``.
    """
    S = np.asarray(S, dtype=np.float64)
    members = np.asarray(list(members) if not isinstance(members, np.ndarray) else members, dtype=np.int64)
    size = members.size
    if size == 0:
        raise ContractError("ESG of an empty set is undefined")
    n_total = S.size if n_total is None else n_total
    mean = S.sum() / n_total
    return float((S[members].sum() - mean * size) / size**tau)


def score_order(S: np.ndarray) -> np.ndarray:
    """Node ids by descending score, ties by ascending id."""
    S = np.asarray(S, dtype=np.float64)
    return np.lexsort((np.arange(S.size), -S))


def identify_community(S, query, cfg: ScoreConfig = ScoreConfig(), *, layer: int = 0, adjacency=None) -> LayerCommunity:
    """Binary search for the ESG peak over score-sorted prefixes.

    ``g(k)`` is the ESG of the top ``k + 1`` nodes. The search finds the
    first ``k`` with ``g(k) <= g(k - 1)`` (``g(-1) = -inf``); under a
    unimodal prefix profile the prefix just before it is the global maximum.
    Equal ESG counts as no gain, so ties shrink the prefix.
    """
    S = np.asarray(S, dtype=np.float64)
    n = S.size
    q = _check_query(query, n)
    order = score_order(S)
    csum = np.cumsum(S[order])
    mean = S.sum() / n

    def gain(k):
        if k < 0:
            return -np.inf
        size = k + 1
        return (csum[k] - mean * size) / size**cfg.tau

    ts, te, iterations = 0, n, 0
    while ts < te:
        iterations += 1
        mid = (ts + te) // 2
        if gain(mid) > gain(mid - 1):
            ts = mid + 1
        else:
            te = mid
    prefix = order[:te]
    value = float(gain(te - 1))
    nodes = np.union1d(prefix, q)
    if cfg.connected_only and adjacency is not None:
        nodes = _connected_to_query(nodes, q, adjacency)
    return LayerCommunity(layer=layer, nodes=nodes, esg=value, iterations=iterations)


def _connected_to_query(nodes: np.ndarray, query: np.ndarray, adjacency) -> np.ndarray:
    sub = sp.csr_matrix(adjacency)[nodes][:, nodes]
    index = {int(v): i for i, v in enumerate(nodes)}
    keep = np.zeros(nodes.size, dtype=bool)
    for qv in query:
        reached = breadth_first_order(sub, index[int(qv)], directed=False, return_predecessors=False)
        keep[reached] = True
    return nodes[keep]


def decisions_from_communities(communities, n: int, num_categories: int = 2) -> np.ndarray:
    """Pack per-layer node sets into an ``n x |J| x r_max`` indicator tensor."""
    r_max = len(communities)
    D = np.zeros((n, num_categories, r_max), dtype=np.int8)
    for r, nodes in enumerate(communities):
        inside = np.zeros(n, dtype=bool)
        inside[np.asarray(list(nodes), dtype=np.int64)] = True
        D[inside, 1, r] = 1
        D[~inside, 0, r] = 1
    return D


def search_all_layers(query, C_list, P_list, cfg: ScoreConfig = ScoreConfig(), *, graph=None, workers: int = 1):
    """Score and identify in every layer; returns ``(communities, D, scores)``."""
    r_max = len(C_list)
    n = np.asarray(C_list[0]).shape[0]

    def one(r):
        scores = layer_community_scores(query, C_list[r], P_list[r], cfg)
        adjacency = graph.union_adjacency() if (graph is not None and cfg.connected_only) else None
        return scores, identify_community(scores.S, query, cfg, layer=r, adjacency=adjacency)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(r_max)))
    else:
        results = [one(r) for r in range(r_max)]
    scores = [s for s, _ in results]
    found = [c for _, c in results]
    D = decisions_from_communities([c.nodes for c in found], n)
    return found, D, scores
