"""Command-line front end; operates embedded on a campaign root directory."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import yaml

from ..store import EvalOptions, SearchQuery, parse_predicate
from ..scheduler import (
    Task,
    cost_model_from_document,
    network_transfers_of_resource_set,
    plan_cloud,
    plan_cluster,
    render_subtask_manifest,
    simulate,
)
from ..suite import Suite
from .deployment import load_deployment_config


def _suite(args) -> Suite:
    return Suite(args.root, time_scale=args.time_scale)


def cmd_init(args) -> int:
    suite = _suite(args)
    if args.demo:
        suite.seed_demo(frames=args.frames)
        print(f"seeded demo catalog under {suite.layout.root}")
    else:
        print(f"initialized campaign root {suite.layout.root}")
    return 0


def cmd_expand(args) -> int:
    suite = _suite(args)
    document = yaml.safe_load(Path(args.spec).read_text())
    if args.preview:
        print(suite.preview_combination(document))
        return 0
    configs = suite.expand_combination(document, store_results=True)
    print(len(configs))
    if args.verbose:
        for config in configs:
            print(config.id)
    return 0


def cmd_run(args) -> int:
    suite = _suite(args)
    records = suite.run_configs(
        args.config_ids, max_parallel=args.max_parallel, repeats=args.repeats
    )
    failed = 0
    for record in records:
        print(f"{record.run_id} {record.status} traj_length={record.traj_length}")
        if record.status != "finished":
            failed += 1
    return 1 if failed else 0


def cmd_evaluate(args) -> int:
    suite = _suite(args)
    options = EvalOptions(align=not args.no_align, with_scale=args.with_scale,
                          force=args.force)
    run_ids = None if args.all_unevaluated else args.run_ids
    if run_ids is not None and not run_ids:
        print("provide run ids or --all-unevaluated", file=sys.stderr)
        return 2
    records = suite.evaluate_runs(run_ids, options)
    print(len(records))
    return 0


def cmd_search(args) -> int:
    suite = _suite(args)
    bounds = []
    for bound in args.bound or []:
        metric, lo, hi = (bound.split(":") + ["", ""])[:3]
        bounds.append((metric, float(lo) if lo else None, float(hi) if hi else None))
    query = SearchQuery(
        algorithm_ids=frozenset(args.algorithms or ()),
        dataset_ids=frozenset(args.datasets or ()),
        param_predicates=tuple(parse_predicate(p) for p in args.predicates),
        metric_bounds=tuple(bounds),
    )
    for item_id in suite.store.search(query, target=args.target):
        print(item_id)
    return 0


def cmd_analyze(args) -> int:
    suite = _suite(args)
    report = suite.run_analysis(Path(args.spec).read_text())
    print(f"report {report.report_id} token {report.url_token}")
    if report.export_dir:
        print(f"raw data: {report.export_dir}")
    for notice in report.notices:
        print(f"notice: {notice}")
    return 0


def _plan_tasks(suite: Suite, args) -> list[Task]:
    tasks = []
    for config_id in args.config_ids:
        config = suite.store.get_configuration(config_id)
        tasks.append(Task(config.id, config.algorithm_id, config.dataset_id))
    return tasks


def cmd_plan(args) -> int:
    suite = _suite(args)
    model = cost_model_from_document(
        yaml.safe_load(Path(args.model).read_text()) if args.model else None
    )
    if args.plan_kind == "cluster":
        plan = plan_cluster(_plan_tasks(suite, args), args.nodes, seed=args.seed,
                            strategy=args.strategy)
        print(render_subtask_manifest(plan))
        timeline = simulate(plan, None, model)
        print(f"makespan {timeline.makespan:.1f} s, "
              f"network {timeline.total_network_bytes} bytes")
        return 0
    plan = plan_cluster(_plan_tasks(suite, args), args.nodes, seed=args.seed,
                        strategy=args.strategy)
    provision = plan_cloud(len(plan.controllers), args.provision, model)
    print(f"{provision.strategy}: {len(provision.steps)} steps, "
          f"{network_transfers_of_resource_set(provision)} resource-set transfer(s)")
    timeline = simulate(plan, provision, model)
    print(f"makespan {timeline.makespan:.1f} s, "
          f"network {timeline.total_network_bytes} bytes")
    return 0


def cmd_serve(args) -> int:
    from .app import serve

    deployment = load_deployment_config(args.config)
    suite = _suite(args)
    serve(suite, deployment, console_dir=args.console)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mapbench",
        description="benchmark-campaign orchestration for mapping runs",
    )
    parser.add_argument(
        "--root",
        default=os.environ.get("MAPBENCH_ROOT", "./campaign"),
        help="campaign root directory (default: ./campaign or $MAPBENCH_ROOT)",
    )
    parser.add_argument(
        "--time-scale", type=float,
        default=float(os.environ.get("MAPBENCH_TIME_SCALE", "1.0")),
        help="dataset playback acceleration (e.g. 0.01 plays 100x faster)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="create a campaign root")
    p.add_argument("--demo", action="store_true", help="seed mock algorithms and synthetic datasets")
    p.add_argument("--frames", type=int, default=40)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("expand", help="expand a combination spec file")
    p.add_argument("spec")
    p.add_argument("--preview", action="store_true", help="count only, store nothing")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_expand)

    p = sub.add_parser("run", help="execute configurations and ingest results")
    p.add_argument("config_ids", nargs="+")
    p.add_argument("--max-parallel", type=int, default=1)
    p.add_argument("--repeats", type=int, default=1)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="evaluate finished runs")
    p.add_argument("run_ids", nargs="*")
    p.add_argument("--all-unevaluated", action="store_true")
    p.add_argument("--no-align", action="store_true")
    p.add_argument("--with-scale", action="store_true")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("search", help="search configurations or evaluations")
    p.add_argument("predicates", nargs="*", help='e.g. "nFeatures => 2000"')
    p.add_argument("--target", choices=["configurations", "evaluations"],
                   default="configurations")
    p.add_argument("--algorithms", nargs="*")
    p.add_argument("--datasets", nargs="*")
    p.add_argument("--bound", action="append",
                   help="metric:min:max (empty side = unbounded)")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("analyze", help="run an analysis spec file")
    p.add_argument("spec")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("plan", help="plan and simulate a multi-node campaign")
    p.add_argument("plan_kind", choices=["cluster", "cloud"])
    p.add_argument("config_ids", nargs="+")
    p.add_argument("--nodes", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strategy", choices=["random", "balanced"], default="random")
    p.add_argument("--provision", choices=["direct", "snapshot"], default="snapshot")
    p.add_argument("--model", help="cost model YAML file")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("serve", help="run the HTTP API")
    p.add_argument("--config", help="deployment config YAML")
    p.add_argument("--console", help="directory with the built web console "
                                     "(served at /console)")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # CLI surfaces domain errors as exit status
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
