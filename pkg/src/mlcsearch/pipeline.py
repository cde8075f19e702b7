"""Run configuration, end-to-end orchestration and report files."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .consensus import EMConfig, extract_community, majority_vote, run_em
from .diffusion import HeatKernelConfig
from .encoder import EncoderConfig, EncoderParams
from .errors import ConfigurationError, StageError
from .evaluation import QUERY_MODES, QueryCase, f1_score, generate_queries
from .graph import load_multilayer_graph, read_communities, read_queries
from .nn import load_checkpoint, save_checkpoint
from .search import ScoreConfig, search_all_layers
from .training import LossConfig, precompute_diffusion, representations, train

log = logging.getLogger(__name__)


@dataclass
class RunConfig:
    layers: list = field(default_factory=list)
    features: list = field(default_factory=list)
    communities: str | None = None
    queries_file: str | None = None
    out: str | None = None
    seed: int = 0
    mode: str = "transductive"
    queries: int = 30
    num_buckets: int = 8
    workers: int = 1
    heat: HeatKernelConfig = field(default_factory=HeatKernelConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    score: ScoreConfig = field(default_factory=ScoreConfig)
    em: EMConfig = field(default_factory=EMConfig)

    def validate(self, need_files: bool = True) -> None:
        if self.mode not in QUERY_MODES:
            raise ConfigurationError(f"mode must be one of {QUERY_MODES}")
        if self.queries < 1:
            raise ConfigurationError("queries must be >= 1")
        if need_files:
            if not self.layers:
                raise ConfigurationError("no layer files configured")
            paths = list(self.layers) + list(self.features)
            paths += [p for p in (self.communities, self.queries_file) if p]
            for p in paths:
                if not os.path.exists(p):
                    raise ConfigurationError(f"path does not exist: {p}")
            if self.communities is None:
                raise ConfigurationError("a communities file is required for evaluation")


_SECTIONS = {"heat": HeatKernelConfig, "encoder": EncoderConfig, "loss": LossConfig, "score": ScoreConfig, "em": EMConfig}
_LIST_KEYS = {"layers", "features"}


def _coerce(value: str, kind):
    if kind is bool or kind == "bool":
        lowered = value.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"not a boolean: {value!r}")
    if kind in (int, "int"):
        return int(value)
    if kind in (float, "float"):
        return float(value)
    return value.strip()


def parse_config_text(text: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment. Later keys win."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def config_from_mapping(values: dict, base: RunConfig | None = None, base_dir: str | None = None) -> RunConfig:
    cfg = dataclasses.replace(base) if base is not None else RunConfig()
    section_updates: dict[str, dict] = {}
    top_fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    for key, raw in values.items():
        if "." in key:
            section, name = key.split(".", 1)
            if section not in _SECTIONS:
                raise ConfigurationError(f"unknown config section {section!r}")
            kinds = {f.name: f.type for f in dataclasses.fields(_SECTIONS[section])}
            if section == "score" and name == "lambda":
                name = "lam"
            if name not in kinds:
                raise ConfigurationError(f"unknown config key {key!r}")
            section_updates.setdefault(section, {})[name] = _coerce(str(raw), kinds[name]) if isinstance(raw, str) else raw
            continue
        if key not in top_fields or key in _SECTIONS:
            raise ConfigurationError(f"unknown config key {key!r}")
        if key in _LIST_KEYS:
            items = raw if isinstance(raw, list) else [p.strip() for p in str(raw).split(",") if p.strip()]
            if base_dir:
                items = [p if os.path.isabs(p) else os.path.join(base_dir, p) for p in items]
            setattr(cfg, key, items)
        elif key in ("communities", "queries_file", "out"):
            value = str(raw)
            if base_dir and key != "out" and not os.path.isabs(value):
                value = os.path.join(base_dir, value)
            setattr(cfg, key, value)
        else:
            kind = top_fields[key].type
            setattr(cfg, key, _coerce(str(raw), kind) if isinstance(raw, str) else raw)
    for section, updates in section_updates.items():
        setattr(cfg, section, dataclasses.replace(getattr(cfg, section), **updates))
    return cfg


def load_config(path, overrides: dict | None = None) -> RunConfig:
    with open(path) as fh:
        values = parse_config_text(fh.read())
    cfg = config_from_mapping(values, base_dir=str(Path(path).parent))
    if overrides:
        cfg = config_from_mapping(overrides, base=cfg)
    return cfg


def config_to_text(cfg: RunConfig) -> str:
    lines = [
        f"layers = {', '.join(cfg.layers)}",
    ]
    if cfg.features:
        lines.append(f"features = {', '.join(cfg.features)}")
    for key in ("communities", "queries_file", "out"):
        value = getattr(cfg, key)
        if value is not None:
            lines.append(f"{key} = {value}")
    for key in ("seed", "mode", "queries", "num_buckets", "workers"):
        lines.append(f"{key} = {getattr(cfg, key)}")
    for section in _SECTIONS:
        sub = getattr(cfg, section)
        for f in dataclasses.fields(sub):
            name = "lambda" if (section == "score" and f.name == "lam") else f.name
            lines.append(f"{section}.{name} = {getattr(sub, f.name)}")
    return "\n".join(lines) + "\n"


# -- report -------------------------------------------------------------------


@dataclass
class QueryResult:
    query: tuple
    truth: tuple
    nodes: np.ndarray
    precision: float
    recall: float
    f1: float
    layer_f1: list
    vote_f1: float
    em_iterations: int
    em_converged: bool
    layer_nodes: list


@dataclass
class EvalReport:
    results: list = field(default_factory=list)
    stage_times: dict = field(default_factory=dict)
    train_epochs: int = 0

    def _col(self, name):
        return np.array([getattr(r, name) for r in self.results], dtype=np.float64)

    @property
    def mean_f1(self) -> float:
        return float(self._col("f1").mean())

    @property
    def std_f1(self) -> float:
        return float(self._col("f1").std())

    @property
    def mean_vote_f1(self) -> float:
        return float(self._col("vote_f1").mean())

    def mean_layer_f1(self) -> np.ndarray:
        return np.array([r.layer_f1 for r in self.results], dtype=np.float64).mean(axis=0)

    @property
    def best_layer_f1(self) -> float:
        return float(self.mean_layer_f1().max())

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["query_nodes", "f1", "precision", "recall", "layer_f1", "vote_f1", "em_iterations"])
        for r in self.results:
            writer.writerow(
                [
                    " ".join(str(v) for v in r.query),
                    repr(r.f1),
                    repr(r.precision),
                    repr(r.recall),
                    ";".join(repr(x) for x in r.layer_f1),
                    repr(r.vote_f1),
                    r.em_iterations,
                ]
            )
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "queries": len(self.results),
            "mean_f1": self.mean_f1,
            "std_f1": self.std_f1,
            "mean_precision": float(self._col("precision").mean()),
            "mean_recall": float(self._col("recall").mean()),
            "mean_layer_f1": self.mean_layer_f1().tolist(),
            "best_layer_f1": self.best_layer_f1,
            "mean_vote_f1": self.mean_vote_f1,
            "em_converged": int(sum(r.em_converged for r in self.results)),
            "train_epochs": self.train_epochs,
            "stage_times": self.stage_times,
        }

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.csv").write_text(self.to_csv())
        (out / "summary.json").write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")
        with open(out / "queries.jsonl", "w") as fh:
            for r in self.results:
                record = {
                    "query": list(r.query),
                    "nodes": [int(v) for v in r.nodes],
                    "f1": r.f1,
                    "vote_f1": r.vote_f1,
                    "em_iterations": r.em_iterations,
                    "converged": r.em_converged,
                    "layers": [[int(v) for v in nodes] for nodes in r.layer_nodes],
                }
                fh.write(json.dumps(record) + "\n")


# -- stages -------------------------------------------------------------------


class _Stage:
    def __init__(self, name, times):
        self.name = name
        self.times = times

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        self.times[self.name] = self.times.get(self.name, 0.0) + time.perf_counter() - self.start
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


def truth_for_query(query, communities) -> tuple:
    """The first community containing every query node, else the first containing any."""
    qs = set(query)
    for c in communities:
        if qs <= set(c):
            return tuple(c)
    for c in communities:
        if qs & set(c):
            return tuple(c)
    raise ConfigurationError(f"query {sorted(qs)} is not inside any community")


def evaluate_query(case: QueryCase, reps_c, reps_p, n: int, cfg: RunConfig, graph=None) -> QueryResult:
    found, D, _ = search_all_layers(case.nodes, reps_c, reps_p, cfg.score, graph=graph, workers=cfg.workers)
    state = run_em(D, cfg.em)
    nodes = extract_community(state, case.nodes)
    precision, recall, f1 = f1_score(nodes, case.truth)
    vote_nodes = np.union1d(np.flatnonzero(majority_vote(D)), case.nodes)
    layer_f1 = [f1_score(c.nodes, case.truth)[2] for c in found]
    return QueryResult(
        query=tuple(case.nodes),
        truth=tuple(case.truth),
        nodes=nodes,
        precision=precision,
        recall=recall,
        f1=f1,
        layer_f1=layer_f1,
        vote_f1=f1_score(vote_nodes, case.truth)[2],
        em_iterations=state.iterations,
        em_converged=state.converged,
        layer_nodes=[c.nodes for c in found],
    )


def build_queries(cfg: RunConfig, communities) -> list[QueryCase]:
    if cfg.queries_file:
        cases = []
        for q in read_queries(cfg.queries_file):
            truth = truth_for_query(q, communities)
            cases.append(QueryCase(tuple(sorted(set(q))), truth, -1))
        return cases
    return generate_queries(communities, cfg.mode, cfg.queries, cfg.seed)


def run_pipeline(cfg: RunConfig, graph=None, communities=None) -> EvalReport:
    """Load, diffuse, train, then search / merge / score every query."""
    times: dict[str, float] = {}
    with _Stage("load", times):
        if graph is None:
            cfg.validate()
            features = None
            if cfg.features:
                features = cfg.features[0] if len(cfg.features) == 1 else cfg.features
            graph = load_multilayer_graph(cfg.layers, features, num_buckets=cfg.num_buckets)
            communities = read_communities(cfg.communities)
        else:
            cfg.validate(need_files=False)
            if communities is None:
                raise ConfigurationError("communities are required for evaluation")
        cases = build_queries(cfg, communities)
    with _Stage("diffuse", times):
        diffusions = precompute_diffusion(graph, cfg.heat, cfg.encoder.k_max)
    with _Stage("train", times):
        params, train_report = train(graph, cfg.loss, cfg.seed, encoder_cfg=cfg.encoder, diffusions=diffusions)
        reps = representations(params, diffusions)
        C_list, P_list = reps.numpy()
    log.info("trained %d epochs, final loss %.6g", train_report.stopped_epoch, train_report.total[-1])

    results = []
    for case in cases:
        with _Stage("search+merge", times):
            results.append(evaluate_query(case, C_list, P_list, graph.n, cfg, graph))
    report = EvalReport(results=results, stage_times=times, train_epochs=train_report.stopped_epoch)
    if cfg.out:
        report.write(cfg.out)
        Path(cfg.out, "train.csv").write_text(train_report.to_csv())
        save_encoder(Path(cfg.out, "model.npz"), params)
    return report


def save_encoder(path, params: EncoderParams) -> None:
    meta = {"in_dim": params.in_dim, "r_max": params.r_max, "encoder": dataclasses.asdict(params.cfg)}
    save_checkpoint(path, params.named_parameters(), meta)


def load_encoder(path) -> EncoderParams:
    _, meta = load_checkpoint(path)
    params = EncoderParams(meta["in_dim"], meta["r_max"], EncoderConfig(**meta["encoder"]), seed=0)
    load_checkpoint(path, params.named_parameters())
    return params
