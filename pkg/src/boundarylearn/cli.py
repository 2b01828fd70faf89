"""Command-line harness: benchmark generation, replay experiments,
segmentation scoring, threshold calibration, and the HTTP service.

Usage errors exit with code 2 (argparse default); data errors print a
diagnostic and exit with code 1.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .activeloop import LoopConfig, STRATEGIES, run_replay
from .affinity import build_affinity, estimate_sigma
from .forest import ForestConfig, ForestModel, train_forest_on_arrays
from .graph import GraphFormatError, load_region_graph
from .rng import child_seed
from .segmentation import (
    AgglomerationConfig,
    agglomerate,
    calibrate_delta,
    split_ri,
    split_vi,
)
from .synth import SynthConfig, generate, train_test_pair

TABLE_ORDER = ("all", "proposed", "cotrain", "iwal", "uncertain", "random")


class DataError(Exception):
    pass


def _load_config_file(path: str) -> dict:
    text = Path(path).read_bytes()
    if path.endswith(".toml"):
        try:
            import tomllib  # py311+
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(text.decode())
    return json.loads(text)


def _apply_config_file(args: argparse.Namespace) -> None:
    """File values fill in options the command line left at their defaults."""
    if not getattr(args, "config", None):
        return
    overrides = _load_config_file(args.config)
    for key, value in overrides.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise DataError(f"unknown config key {key!r}")
        if attr not in args._explicit:
            setattr(args, attr, value)


class _TrackingParser(argparse.ArgumentParser):
    """Remembers which destinations were set explicitly on the command line."""

    def parse_args(self, argv=None, namespace=None):  # type: ignore[override]
        ns = super().parse_args(argv, namespace)
        explicit = set()
        argv = list(sys.argv[1:] if argv is None else argv)
        for action in self._subparser_actions():
            for opt in action.option_strings:
                if opt in argv:
                    explicit.add(action.dest)
        ns._explicit = explicit
        return ns

    def _subparser_actions(self):
        seen = []
        stack = [self]
        while stack:
            parser = stack.pop()
            for action in parser._actions:
                if isinstance(action, argparse._SubParsersAction):
                    stack.extend(action.choices.values())
                else:
                    seen.append(action)
        return seen


def build_parser() -> argparse.ArgumentParser:
    parser = _TrackingParser(prog="boundarylearn")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic benchmark graph")
    gen.add_argument("--out", required=True, help="output JSONL path")
    gen.add_argument("--test-out", help="optional second graph sharing the mixture")
    gen.add_argument("--n-bodies", type=int, default=60)
    gen.add_argument("--lattice", default="60x50", help="e.g. 60x50 or 20x15x10")
    gen.add_argument("--feature-dim", type=int, default=12)
    gen.add_argument("--subclasses", type=int, default=3)
    gen.add_argument("--separation", type=float, default=5.5)
    gen.add_argument("--noise", type=float, default=0.02)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--test-seed", type=int, default=None)
    gen.add_argument("--config", help="JSON/TOML file with option overrides")

    rep = sub.add_parser("replay", help="run oracle-replay training experiments")
    rep.add_argument("--graph", required=True)
    rep.add_argument("--test-graph", help="graph for held-out accuracy")
    rep.add_argument("--strategy", default="proposed",
                     choices=list(STRATEGIES) + ["all"])
    rep.add_argument("--trials", type=int, default=10)
    rep.add_argument("--seed", type=int, default=0)
    rep.add_argument("--out-dir", required=True)
    rep.add_argument("--seed-fraction", type=float, default=0.03)
    rep.add_argument("--seed-method", default="kmeans",
                     choices=["kmeans", "max_degree"])
    rep.add_argument("--batch-size", type=int, default=10)
    rep.add_argument("--budget", type=int, default=None)
    rep.add_argument("--stop-extra", type=int, default=500)
    rep.add_argument("--trees", type=int, default=100)
    rep.add_argument("--save-models", action="store_true")
    rep.add_argument("--config", help="JSON/TOML file with option overrides")

    seg = sub.add_parser("segment", help="agglomerate and score one predictor")
    seg.add_argument("--graph", required=True)
    seg.add_argument("--model", required=True, help="forest model JSON")
    seg.add_argument("--delta", type=float, default=0.2)
    seg.add_argument("--out", help="append scores CSV row here")
    seg.add_argument("--label", default="model", help="strategy column value")
    seg.add_argument("--trial", type=int, default=0)
    seg.add_argument("--config", help="JSON/TOML file with option overrides")

    cal = sub.add_parser("calibrate", help="match a model's merge threshold to a reference")
    cal.add_argument("--graph", required=True)
    cal.add_argument("--model", required=True)
    cal.add_argument("--reference-model", required=True)
    cal.add_argument("--reference-delta", type=float, default=0.2)
    cal.add_argument("--config", help="JSON/TOML file with option overrides")

    srv = sub.add_parser("serve", help="start the HTTP session service")
    srv.add_argument("--host", default="127.0.0.1")
    srv.add_argument("--port", type=int,
                     default=int(os.environ.get("PORT", "8000")))
    srv.add_argument("--data-dir", default=os.environ.get("DATA_DIR"))
    srv.add_argument("--ui-dir", help="serve a built frontend from this directory")
    srv.add_argument("--config", help="JSON/TOML file with option overrides")

    return parser


def _parse_lattice(text: str):
    try:
        dims = tuple(int(p) for p in text.lower().split("x"))
    except ValueError:
        raise DataError(f"bad lattice spec {text!r}")
    return dims


def cmd_generate(args) -> int:
    config = SynthConfig(
        n_bodies=args.n_bodies,
        lattice_dims=_parse_lattice(args.lattice),
        feature_dim=args.feature_dim,
        n_subclasses=args.subclasses,
        class_separation=args.separation,
        label_noise=args.noise,
        rng_seed=args.seed,
    )
    from .graph import save_region_graph

    if args.test_out:
        test_seed = args.test_seed if args.test_seed is not None else args.seed + 1
        train, test = train_test_pair(config, args.seed, test_seed)
        save_region_graph(train, args.out)
        save_region_graph(test, args.test_out)
        print(f"wrote {args.out} ({train.n_edges} edges) and "
              f"{args.test_out} ({test.n_edges} edges)")
    else:
        graph = generate(config)
        save_region_graph(graph, args.out)
        print(f"wrote {args.out} ({graph.n_edges} edges)")
    return 0


def _test_accuracy(model, graph) -> float:
    conf = model.predict_confidence(graph.features)
    pred = np.where(conf > 0, 1, -1)
    return float((pred == graph.true_labels).mean())


def cmd_replay(args) -> int:
    graph = load_region_graph(args.graph)
    test_graph = load_region_graph(args.test_graph) if args.test_graph else None
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    strategies = list(TABLE_ORDER) if args.strategy == "all" else [args.strategy]
    aff = build_affinity(graph, estimate_sigma(graph))

    summary_rows = []
    for name in strategies:
        accs, pool_accs, labels_used = [], [], []
        if name == "all":
            for t in range(args.trials):
                model = train_forest_on_arrays(
                    graph.features, graph.true_labels.astype(np.float64),
                    ForestConfig(n_trees=args.trees,
                                 rng_seed=child_seed(args.seed, "all", t)),
                )
                labels_used.append(graph.n_edges)
                pool_accs.append(float("nan"))
                if test_graph is not None:
                    accs.append(_test_accuracy(model, test_graph))
                if args.save_models:
                    (out_dir / f"all_trial{t}_model.json").write_text(model.to_json())
        else:
            config = LoopConfig(
                seed_fraction=args.seed_fraction,
                seed_method=args.seed_method,
                batch_size=args.batch_size,
                budget=args.budget,
                stop_extra=args.stop_extra,
                rng_seed=args.seed,
                strategy=name,
                forest=ForestConfig(n_trees=args.trees),
            )
            results = run_replay(graph, config, args.trials, affinity=aff)
            for t, (model, trace) in enumerate(results):
                trace.to_csv(out_dir / f"{name}_trial{t}_trace.csv")
                labels_used.append(trace.records[-1].labels_used)
                pool_accs.append(trace.records[-1].pool_accuracy)
                if test_graph is not None:
                    accs.append(_test_accuracy(model, test_graph))
                if args.save_models and hasattr(model, "to_json"):
                    (out_dir / f"{name}_trial{t}_model.json").write_text(model.to_json())
        finite_pool = [v for v in pool_accs if v == v]  # drop NaN from "all"
        row = {
            "strategy": name,
            "trials": args.trials,
            "mean_labels_used": float(np.mean(labels_used)),
            "mean_final_pool_acc": float(np.mean(finite_pool)) if finite_pool else "",
            "std_final_pool_acc": float(np.std(finite_pool)) if finite_pool else "",
            "mean_test_acc": float(np.mean(accs)) if accs else "",
            "std_test_acc": float(np.std(accs)) if accs else "",
        }
        summary_rows.append(row)
        print(f"{name}: labels={row['mean_labels_used']:.0f}"
              + (f" test_acc={row['mean_test_acc']:.4f}±{row['std_test_acc']:.4f}"
                 if accs else ""))

    with open(out_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(summary_rows[0]))
        writer.writeheader()
        writer.writerows(summary_rows)
    print(f"wrote {out_dir / 'summary.csv'}")
    return 0


def cmd_segment(args) -> int:
    graph = load_region_graph(args.graph)
    model = ForestModel.from_json(Path(args.model).read_text())
    seg = agglomerate(graph, model, AgglomerationConfig(delta_c=args.delta))
    vi_fm, vi_fs = split_vi(seg, graph)
    ri_fm, ri_fs = split_ri(seg, graph)
    print(f"segments={seg.n_segments} vi_false_merge={vi_fm:.6f} "
          f"vi_false_split={vi_fs:.6f} ri_false_merge={ri_fm:.6f} "
          f"ri_false_split={ri_fs:.6f}")
    if args.out:
        new = not Path(args.out).exists()
        with open(args.out, "a", newline="") as fh:
            writer = csv.writer(fh)
            if new:
                writer.writerow(["strategy", "trial", "delta_c",
                                 "vi_fm", "vi_fs", "ri_fm", "ri_fs"])
            writer.writerow([args.label, args.trial, args.delta,
                             repr(vi_fm), repr(vi_fs), repr(ri_fm), repr(ri_fs)])
    return 0


def cmd_calibrate(args) -> int:
    graph = load_region_graph(args.graph)
    model = ForestModel.from_json(Path(args.model).read_text())
    reference = ForestModel.from_json(Path(args.reference_model).read_text())
    result = calibrate_delta(graph, model, reference,
                             reference_delta=args.reference_delta)
    flag = "" if result.converged else " (warning: outside tolerance window)"
    print(f"delta={result.delta:.6f} achieved_false_merge="
          f"{result.achieved_false_merge:.6f} target={result.target_false_merge:.6f}"
          f"{flag}")
    print(json.dumps({
        "delta": result.delta,
        "achieved_false_merge": result.achieved_false_merge,
        "target_false_merge": result.target_false_merge,
        "converged": result.converged,
    }))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(data_dir=args.data_dir)
    if args.ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=args.ui_dir, html=True), name="ui")
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


_COMMANDS = {
    "generate": cmd_generate,
    "replay": cmd_replay,
    "segment": cmd_segment,
    "calibrate": cmd_calibrate,
    "serve": cmd_serve,
}


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_file(args)
        return _COMMANDS[args.command](args)
    except (DataError, GraphFormatError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
