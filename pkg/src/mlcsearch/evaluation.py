"""Query generation and set-overlap metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError

QUERY_MODES = ("transductive", "inductive", "hybrid")


@dataclass(frozen=True)
class QueryCase:
    nodes: tuple[int, ...]
    truth: tuple[int, ...]
    community: int


def split_communities(num: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Shuffle community indices and split ~1:1; odd counts favour the training side."""
    order = rng.permutation(num)
    cut = math.ceil(num / 2)
    return np.sort(order[:cut]), np.sort(order[cut:])


def generate_queries(communities, mode: str = "transductive", count: int = 30, seed: int = 0) -> list[QueryCase]:
    """Draw ``count`` queries of 1-3 distinct nodes, each from one community.

    ``transductive`` samples from every community; ``inductive`` only from
    the held-out half; ``hybrid`` splits the same way but tests on all.
    """
    comms = [sorted(set(int(v) for v in c)) for c in communities]
    if not comms or any(len(c) == 0 for c in comms):
        raise ConfigurationError("communities must be non-empty")
    if mode not in QUERY_MODES:
        raise ConfigurationError(f"unknown query mode {mode!r}")
    rng = np.random.default_rng(seed)
    if mode == "transductive":
        pool = np.arange(len(comms))
    else:
        if len(comms) < 2:
            raise ConfigurationError(f"{mode} mode needs at least two communities")
        _, test = split_communities(len(comms), rng)
        pool = test if mode == "inductive" else np.arange(len(comms))
    cases = []
    for _ in range(count):
        c = int(pool[rng.integers(len(pool))])
        members = comms[c]
        size = int(rng.integers(1, min(3, len(members)) + 1))
        nodes = rng.choice(members, size=size, replace=False)
        cases.append(QueryCase(tuple(sorted(int(v) for v in nodes)), tuple(members), c))
    return cases


def f1_score(predicted, truth) -> tuple[float, float, float]:
    """``(precision, recall, f1)`` of a predicted node set against the truth."""
    truth = set(int(v) for v in truth)
    if not truth:
        raise ContractError("ground-truth community must be non-empty")
    pred = set(int(v) for v in predicted)
    hit = len(pred & truth)
    precision = hit / len(pred) if pred else 0.0
    recall = hit / len(truth)
    if precision + recall == 0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)
