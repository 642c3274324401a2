"""Command line entry point.

Exit codes: 0 success, 1 operational error, 2 usage error.  Diagnostics go
to stderr; machine-readable output goes to stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as cfgmod
from .errors import ToolrankError


def _flat_config(args) -> dict[str, str]:
    cfg = cfgmod.load_file(args.config) if getattr(args, "config", None) else {}
    cfg.update(cfgmod.parse_overrides(getattr(args, "set", None) or []))
    return cfg


def cmd_corpus_validate(args) -> int:
    from .corpus import load_tasks, load_tools, validate

    tools = load_tools(args.corpus)
    tasks = load_tasks(args.tasks) if args.tasks else []
    report = validate(tools, tasks)
    for line in report.lines():
        print(line)
    if report.ok:
        print(f"ok: {len(tools)} tools, {len(tasks)} tasks", file=sys.stderr)
        return 0
    print(f"{len(report.lines())} violation(s)", file=sys.stderr)
    return 1


def cmd_corpus_stats(args) -> int:
    from .corpus import load_tasks, load_tools, stats

    tools = load_tools(args.corpus)
    tasks = load_tasks(args.tasks) if args.tasks else []
    print(json.dumps(stats(tools, tasks).to_dict(), indent=2))
    return 0


def cmd_index_build(args) -> int:
    from . import index as indexmod
    from .corpus import load_tools
    from .embed import make_provider

    cfg = _flat_config(args)
    tools = load_tools(args.corpus)
    provider = make_provider(cfg)
    idx = indexmod.build(tools, provider, batch_size=args.batch_size)
    indexmod.save(idx, args.out)
    print(json.dumps({"path": str(args.out), "n_tools": len(idx), **idx.fingerprint.to_dict()}))
    return 0


def cmd_synth_gen(args) -> int:
    from .corpus import save_tasks, save_tools
    from .synth import SynthSpec, gen_synthetic

    spec = SynthSpec(args.families, args.tools_per_family, args.tasks_per_family, args.dim, args.seed)
    tools, tasks = gen_synthetic(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_tools(tools, out / "tools.jsonl")
    save_tasks(tasks, out / "tasks.jsonl")
    print(json.dumps({"tools": str(out / "tools.jsonl"), "tasks": str(out / "tasks.jsonl"), "n_tools": len(tools), "n_tasks": len(tasks)}))
    return 0


def cmd_eval_run(args) -> int:
    from .harness import latency_profile, run_from_config

    cfg = _flat_config(args)
    if args.output_dir:
        cfg["run.output_dir"] = args.output_dir
    report = run_from_config(cfg)
    sys.stdout.write(report.to_table())
    sys.stderr.write(latency_profile(report))
    if report.excluded:
        print(f"{len(report.excluded)} task(s) excluded after retrieval errors", file=sys.stderr)
    return 0


def cmd_serve(args) -> int:
    from .gateway import serve

    cfg = _flat_config(args)
    if args.index:
        cfg["service.index_path"] = args.index
    if args.corpus:
        cfg["service.corpus_path"] = args.corpus
    if args.port is not None:
        cfg["service.port"] = str(args.port)
    serve(cfg)
    return 0


def cmd_convert_toolret(args) -> int:
    from .corpus import convert_toolret

    tools_path, tasks_path = convert_toolret(args.tools, args.tasks, args.out_dir)
    print(json.dumps({"tools": str(tools_path), "tasks": str(tasks_path)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="toolrank", description="Two-stage tool retrieval and benchmark harness")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="group", metavar="COMMAND")
    sub.required = True

    def with_config(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")

    corpus = sub.add_parser("corpus", help="inspect tool corpora and task sets")
    csub = corpus.add_subparsers(dest="action", metavar="ACTION")
    csub.required = True
    p = csub.add_parser("validate", help="report consistency violations")
    p.add_argument("--corpus", required=True)
    p.add_argument("--tasks")
    p.set_defaults(func=cmd_corpus_validate)
    p = csub.add_parser("stats", help="print corpus statistics as JSON")
    p.add_argument("--corpus", required=True)
    p.add_argument("--tasks")
    p.set_defaults(func=cmd_corpus_stats)

    index = sub.add_parser("index", help="build dense indexes")
    isub = index.add_subparsers(dest="action", metavar="ACTION")
    isub.required = True
    p = isub.add_parser("build", help="embed a corpus and write an index file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int, default=256)
    with_config(p)
    p.set_defaults(func=cmd_index_build)

    synth = sub.add_parser("synth", help="synthetic benchmark data")
    ssub = synth.add_subparsers(dest="action", metavar="ACTION")
    ssub.required = True
    p = ssub.add_parser("gen", help="write a seeded synthetic corpus and task set")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--families", type=int, default=20)
    p.add_argument("--tools-per-family", type=int, default=5)
    p.add_argument("--tasks-per-family", type=int, default=4)
    p.add_argument("--dim", type=int, default=384)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_gen)

    ev = sub.add_parser("eval", help="benchmark runs")
    esub = ev.add_subparsers(dest="action", metavar="ACTION")
    esub.required = True
    p = esub.add_parser("run", help="run the configured arms and modes, write reports")
    with_config(p)
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_eval_run)

    p = sub.add_parser("serve", help="run the HTTP gateway")
    with_config(p)
    p.add_argument("--index")
    p.add_argument("--corpus")
    p.add_argument("--port", type=int)
    p.set_defaults(func=cmd_serve)

    conv = sub.add_parser("convert", help="convert external datasets")
    vsub = conv.add_subparsers(dest="action", metavar="ACTION")
    vsub.required = True
    p = vsub.add_parser("toolret", help="map raw ToolRet files to the corpus/task format")
    p.add_argument("--tools", nargs="+", required=True, help="raw tool files (JSON or JSONL)")
    p.add_argument("--tasks", nargs="+", required=True, help="raw query files (JSON or JSONL)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_convert_toolret)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ToolrankError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
