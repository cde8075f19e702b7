"""Command-line entry point: ``mlcsearch <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from .consensus import extract_community, majority_vote, run_em
from .evaluation import f1_score
from .graph import read_communities, write_features, write_layer, write_node_lines
from .pipeline import (
    EvalReport,
    RunConfig,
    build_queries,
    config_to_text,
    load_config,
    load_encoder,
    run_pipeline,
    save_encoder,
    truth_for_query,
)
from .search import decisions_from_communities, search_all_layers
from .synthetic import synthetic_multilayer
from .training import precompute_diffusion, representations, train

log = logging.getLogger("mlcsearch")


def _overrides(args) -> dict:
    out = {}
    for key in ("seed", "mode", "queries", "out"):
        value = getattr(args, key, None)
        if value is not None:
            out[key] = value
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _load_graph(cfg: RunConfig):
    from .graph import load_multilayer_graph

    features = None
    if cfg.features:
        features = cfg.features[0] if len(cfg.features) == 1 else cfg.features
    return load_multilayer_graph(cfg.layers, features, num_buckets=cfg.num_buckets)


def cmd_generate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sizes = [int(s) for s in args.sizes.split(",")]
    g, comms = synthetic_multilayer(
        sum(sizes), sizes, args.layers, args.p_in, args.p_out, args.noise, args.seed,
        bump_scale=args.bump_scale, feature_noise=args.feature_noise,
    )
    layer_files, feature_files = [], []
    for r, layer in enumerate(g.layers):
        write_layer(out / f"layer{r}.txt", layer, g.n)
        write_features(out / f"features{r}.txt", g.features[r])
        layer_files.append(f"layer{r}.txt")
        feature_files.append(f"features{r}.txt")
    write_node_lines(out / "communities.txt", comms)
    cfg = RunConfig(layers=layer_files, features=feature_files, communities="communities.txt", seed=args.seed)
    (out / "config.txt").write_text(config_to_text(cfg))
    print(json.dumps({"n": g.n, "layers": g.r_max, "edges": [l.num_edges for l in g.layers], "config": str(out / "config.txt")}))
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    graph = _load_graph(cfg)
    params, report = train(graph, cfg.loss, cfg.seed, encoder_cfg=cfg.encoder, heat=cfg.heat)
    out = Path(args.out or cfg.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    save_encoder(out / "model.npz", params)
    (out / "train.csv").write_text(report.to_csv())
    print(json.dumps({"stopped_epoch": report.stopped_epoch, "final_total": report.total[-1], "wall_time": report.wall_time}))
    return 0


def cmd_search(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    graph = _load_graph(cfg)
    params = load_encoder(args.model)
    diffusions = precompute_diffusion(graph, cfg.heat, params.k_max)
    C_list, P_list = representations(params, diffusions).numpy()
    if args.queries_file:
        from .graph import read_queries

        queries = [sorted(set(q)) for q in read_queries(args.queries_file)]
    else:
        queries = [list(c.nodes) for c in build_queries(cfg, read_communities(cfg.communities))]
    sink = open(args.output, "w") if args.output else sys.stdout
    try:
        for q in queries:
            found, _, _ = search_all_layers(q, C_list, P_list, cfg.score, graph=graph, workers=cfg.workers)
            for c in found:
                sink.write(c.to_json(q) + "\n")
    finally:
        if sink is not sys.stdout:
            sink.close()
    return 0


def _read_layer_records(path):
    grouped = defaultdict(dict)
    order = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            key = tuple(rec["query"])
            if key not in grouped:
                order.append(key)
            grouped[key][int(rec["layer"])] = rec["nodes"]
    return [(key, [grouped[key][r] for r in sorted(grouped[key])]) for key in order]


def cmd_merge(args) -> int:
    from .consensus import EMConfig

    em = EMConfig(tolerance=args.tolerance, max_iterations=args.max_iterations)
    sink = open(args.output, "w") if args.output else sys.stdout
    try:
        for query, layers in _read_layer_records(args.decisions):
            D = decisions_from_communities(layers, args.n)
            state = run_em(D, em)
            nodes = extract_community(state, query)
            record = state.summary(query, nodes)
            record["vote_nodes"] = [int(v) for v in np.union1d(np.flatnonzero(majority_vote(D)), query)]
            sink.write(json.dumps(record) + "\n")
    finally:
        if sink is not sys.stdout:
            sink.close()
    return 0


def cmd_evaluate(args) -> int:
    communities = read_communities(args.communities)
    scores = []
    with open(args.predicted) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            truth = truth_for_query(rec["query"], communities)
            p, r, f = f1_score(rec["nodes"], truth)
            scores.append((p, r, f))
    arr = np.array(scores, dtype=np.float64).reshape(-1, 3)
    print(json.dumps({
        "queries": len(scores),
        "mean_precision": float(arr[:, 0].mean()) if len(arr) else 0.0,
        "mean_recall": float(arr[:, 1].mean()) if len(arr) else 0.0,
        "mean_f1": float(arr[:, 2].mean()) if len(arr) else 0.0,
        "std_f1": float(arr[:, 2].std()) if len(arr) else 0.0,
    }))
    return 0


def cmd_pipeline(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    report: EvalReport = run_pipeline(cfg)
    s = report.summary()
    print(json.dumps(s, sort_keys=True))
    print(
        f"queries={s['queries']} mean_f1={s['mean_f1']:.4f} (+/-{s['std_f1']:.4f}) "
        f"vote_f1={s['mean_vote_f1']:.4f} best_layer_f1={s['best_layer_f1']:.4f}",
        file=sys.stderr,
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mlcsearch", description="Unsupervised multilayer community search.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p):
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int)
        p.add_argument("--mode", choices=["transductive", "inductive", "hybrid"])
        p.add_argument("--queries", type=int)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
        return p

    p = sub.add_parser("generate", help="write a synthetic planted-partition dataset")
    p.add_argument("--sizes", default="100,100,100", help="comma-separated community sizes")
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--p-in", type=float, default=0.3)
    p.add_argument("--p-out", type=float, default=0.02)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--bump-scale", type=float, default=1.0)
    p.add_argument("--feature-noise", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = with_config(sub.add_parser("train", help="train the encoder"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = with_config(sub.add_parser("search", help="per-layer communities as JSON lines"))
    p.add_argument("--model", required=True)
    p.add_argument("--queries-file", dest="queries_file")
    p.add_argument("--output")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("merge", help="EM consensus over per-layer communities")
    p.add_argument("--decisions", required=True, help="JSON lines written by 'search'")
    p.add_argument("--n", type=int, required=True, help="node count")
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--max-iterations", type=int, default=200)
    p.add_argument("--output")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("evaluate", help="F1 of predicted communities")
    p.add_argument("--predicted", required=True, help="JSON lines with 'query' and 'nodes'")
    p.add_argument("--communities", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = with_config(sub.add_parser("pipeline", help="train, search, merge and evaluate"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
