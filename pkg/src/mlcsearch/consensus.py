"""EM consensus over per-layer community decisions (Dawid-Skene model).

Each layer is an observer with a confusion matrix ``pi[r, j, l]`` (true
category ``j`` reported as ``l``); ``eta`` is the category prior and ``T``
the per-node posterior over categories.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import ConfigurationError, ContractError


@dataclass(frozen=True)
class EMConfig:
    tolerance: float = 1e-5
    max_iterations: int = 200
    clamp_floor: float = 1e-10

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ConfigurationError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be >= 1")
        if not 0 < self.clamp_floor < 1:
            raise ConfigurationError("clamp_floor must lie in (0, 1)")


@dataclass
class ConsensusState:
    T: np.ndarray
    T_raw: np.ndarray
    pi: np.ndarray
    eta: np.ndarray
    iterations: int
    converged: bool
    log_likelihood: list = field(default_factory=list)

    def summary(self, query=None, nodes=None) -> dict:
        return {
            "query": None if query is None else [int(q) for q in query],
            "nodes": None if nodes is None else [int(v) for v in nodes],
            "T_mean": self.T.mean(axis=0).tolist(),
            "T_raw_mean": self.T_raw.mean(axis=0).tolist(),
            "pi": self.pi.tolist(),
            "eta": self.eta.tolist(),
            "iterations": self.iterations,
            "converged": self.converged,
        }

    def to_json(self, query=None, nodes=None) -> str:
        return json.dumps(self.summary(query, nodes))


def check_decisions(D) -> np.ndarray:
    D = np.asarray(D)
    if D.ndim != 3:
        raise ContractError("decision tensor must be n x |J| x r_max")
    if D.shape[2] < 1:
        raise ContractError("decision tensor needs at least one layer")
    if not np.all((D == 0) | (D == 1)):
        raise ContractError("decision entries must be 0 or 1")
    if not np.all(D.sum(axis=1) == 1):
        raise ContractError("each (node, layer) needs exactly one category")
    return D.astype(np.float64)


def init_membership(D) -> np.ndarray:
    D = check_decisions(D)
    counts = D.sum(axis=2)
    return counts / counts.sum(axis=1, keepdims=True)


def _clamp_rows(x: np.ndarray, floor: float) -> np.ndarray:
    x = np.clip(x, floor, 1.0)
    return x / x.sum(axis=-1, keepdims=True)


def m_step(T, D, clamp_floor: float = 1e-10):
    """Confusion matrices ``pi`` (``r x J x J``) and prior ``eta`` from ``T``."""
    D = check_decisions(D)
    T = np.asarray(T, dtype=np.float64)
    J = D.shape[1]
    counts = np.einsum("ij,ilr->rjl", T, D)
    totals = counts.sum(axis=2, keepdims=True)
    pi = np.where(totals > 0, counts / np.where(totals > 0, totals, 1.0), 1.0 / J)
    eta = T.sum(axis=0) / T.shape[0]
    return _clamp_rows(pi, clamp_floor), _clamp_rows(eta, clamp_floor)


def _log_joint(D, pi, eta) -> np.ndarray:
    # log eta_j + sum_r sum_l D[i,l,r] log pi[r,j,l]
    return np.log(eta)[None, :] + np.einsum("ilr,rjl->ij", D, np.log(pi))


def e_step(D, pi, eta) -> np.ndarray:
    D = check_decisions(D)
    logp = _log_joint(D, np.asarray(pi, dtype=np.float64), np.asarray(eta, dtype=np.float64))
    if not np.all(np.isfinite(logp.max(axis=1))):
        raise ContractError("a node has zero likelihood under every category")
    logp -= logp.max(axis=1, keepdims=True)
    T = np.exp(logp)
    return T / T.sum(axis=1, keepdims=True)


def log_likelihood(D, pi, eta) -> float:
    """Marginal observed-data log-likelihood ``sum_i log sum_j eta_j prod pi^D``."""
    D = check_decisions(D)
    return float(logsumexp(_log_joint(D, pi, eta), axis=1).sum())


def expected_log_likelihood(D, T, pi, eta) -> float:
    """``sum_ij T_ij [log eta_j + sum_rl D_il^r log pi_jl^r]`` at fixed ``T``."""
    D = check_decisions(D)
    return float((np.asarray(T) * _log_joint(D, pi, eta)).sum())


def run_em(D, cfg: EMConfig = EMConfig()) -> ConsensusState:
    """Initialise from vote fractions, then alternate M- and E-steps.

    Stops when ``max |T_new - T_old| < tolerance``. The returned ``T`` is the
    row-wise softmax of the final posterior; ``T_raw`` keeps the posterior.
    Running out of iterations sets ``converged=False`` instead of raising.
    """
    D = check_decisions(D)
    T = init_membership(D)
    lls = []
    converged = False
    m = 0
    pi = eta = None
    for m in range(1, cfg.max_iterations + 1):
        pi, eta = m_step(T, D, cfg.clamp_floor)
        lls.append(log_likelihood(D, pi, eta))
        T_new = e_step(D, pi, eta)
        delta = np.abs(T_new - T).max()
        T = T_new
        if delta < cfg.tolerance:
            converged = True
            break
    return ConsensusState(
        T=softmax(T, axis=1),
        T_raw=T,
        pi=pi,
        eta=eta,
        iterations=m,
        converged=converged,
        log_likelihood=lls,
    )


def majority_vote(D) -> np.ndarray:
    """Boolean membership: strictly more than half of the layers vote in."""
    D = check_decisions(D)
    votes = D[:, 1, :].sum(axis=1)
    return votes > D.shape[2] / 2


def extract_community(state: ConsensusState, query=()) -> np.ndarray:
    """Nodes whose most probable category is ``1``, plus the query nodes.

    ``np.argmax`` returns the first maximum, so exact ties fall to ``0``.
    """
    inside = np.argmax(state.T, axis=1) == 1
    members = np.flatnonzero(inside)
    return np.union1d(members, np.asarray(list(query), dtype=np.int64))
