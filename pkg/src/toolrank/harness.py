"""End-to-end benchmark runs over arms (ETR, TRR) and query modes."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import config as cfgmod
from . import index as indexmod
from .corpus import Task, ToolRecord, load_tasks, load_tools, validate
from .embed import EmbeddingProvider, QueryMode, make_provider
from .errors import ConfigError
from .index import RankedList, ToolIndex
from .metrics import CSV_HEADER, MetricReport, QueryMetrics, aggregate, csv_rows, render_table, score_query
from .rerank import DEFAULT_PROMPT_VERSION, RerankOutcome, make_llm_client, oracle_rerank, rerank
from .retrieve import RetrievalConfig, check_compatible, retrieve
from .synth import SynthSpec, gen_synthetic

log = logging.getLogger(__name__)

ETR = "ETR"
TRR = "TRR"
ARMS = (ETR, TRR)

Reranker = Callable[[Task, RankedList, QueryMode], RerankOutcome]


@dataclass(frozen=True)
class RunConfig:
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    corpus_path: str | None = None
    tasks_path: str | None = None
    arms: tuple[str, ...] = (ETR,)
    modes: tuple[QueryMode, ...] = (QueryMode.QUERY_ONLY, QueryMode.QUERY_PLUS_INSTRUCTION)
    cutoffs: tuple[int, ...] = (1, 10)
    parallelism: int = 1
    seed: int = 0
    output_dir: str | None = None
    trace: bool = False
    weighting: str = "subset"
    prompt_version: str = DEFAULT_PROMPT_VERSION
    index_path: str | None = None
    synth: SynthSpec | None = None

    def __post_init__(self):
        object.__setattr__(self, "arms", tuple(a.upper() for a in self.arms))
        object.__setattr__(self, "modes", tuple(QueryMode.parse(m) for m in self.modes))
        object.__setattr__(self, "cutoffs", tuple(sorted(set(int(k) for k in self.cutoffs))))
        unknown = set(self.arms) - set(ARMS)
        if unknown or not self.arms:
            raise ConfigError(f"arms must be a non-empty subset of {ARMS}, got {self.arms}")
        if not self.modes:
            raise ConfigError("at least one query mode is required")
        if not self.cutoffs or self.cutoffs[0] < 1:
            raise ConfigError("cutoffs must be positive integers")
        if self.cutoffs[-1] > self.retrieval.k_retrieve:
            raise ConfigError(f"cutoff {self.cutoffs[-1]} exceeds k_retrieve {self.retrieval.k_retrieve}")
        if TRR in self.arms and self.cutoffs[-1] > self.retrieval.k_rerank:
            raise ConfigError(f"TRR cutoff {self.cutoffs[-1]} exceeds k_rerank {self.retrieval.k_rerank}")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if self.weighting not in ("subset", "task"):
            raise ConfigError("weighting must be 'subset' or 'task'")
        if self.synth is None and not (self.corpus_path and self.tasks_path):
            raise ConfigError("either corpus_path and tasks_path or synthetic generator settings are required")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["retrieval"]["mode"] = self.retrieval.mode.value
        d["modes"] = [m.value for m in self.modes]
        return d


@dataclass
class BenchmarkReport:
    reports: dict[tuple[str, QueryMode], MetricReport]
    latency: dict[str, dict[str, list[float]]]
    fallback_reasons: dict[str, dict[str, int]]
    metadata: dict
    excluded: list[str] = field(default_factory=list)
    traces: list[dict] = field(default_factory=list)

    def get(self, arm: str, mode: QueryMode | str) -> MetricReport:
        return self.reports[(arm.upper(), QueryMode.parse(mode))]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("arm", "mode", *CSV_HEADER))
        for (arm, mode), rep in self.reports.items():
            for row in csv_rows(rep):
                w.writerow((arm, mode.value, *row))
        return buf.getvalue()

    def to_table(self) -> str:
        rows = [(f"{arm} {mode.value}", rep) for (arm, mode), rep in self.reports.items()]
        return render_table(rows)


def _percentiles(samples: Sequence[float]) -> dict[str, float]:
    arr = np.asarray(samples, dtype=np.float64)
    return {
        "p50": float(np.percentile(arr, 50)),
        "p95": float(np.percentile(arr, 95)),
        "max": float(arr.max()),
    }


def latency_profile(report: BenchmarkReport) -> str:
    """p50/p95/max per stage for each arm, plus the fallback reason histogram."""
    lines = []
    for arm in ARMS:
        stages = report.latency.get(arm)
        if not stages:
            continue
        lines.append(f"[{arm}]")
        for stage in ("encode", "search", "rerank"):
            samples = stages.get(stage)
            if not samples:
                continue
            p = _percentiles(samples)
            lines.append(f"  {stage:<7} p50={p['p50']:.3f}ms p95={p['p95']:.3f}ms max={p['max']:.3f}ms n={len(samples)}")
    hist = Counter()
    for reasons in report.fallback_reasons.values():
        hist.update(reasons)
    if TRR in report.latency:
        lines.append("[fallback]")
        if hist:
            for reason, n in sorted(hist.items()):
                lines.append(f"  {reason}: {n}")
        else:
            lines.append("  none")
    return "\n".join(lines) + "\n"


def _load_data(config: RunConfig) -> tuple[list[ToolRecord], list[Task]]:
    if config.synth is not None:
        return gen_synthetic(config.synth)
    return load_tools(config.corpus_path), load_tasks(config.tasks_path)


def _check_data(corpus: Sequence[ToolRecord], tasks: Sequence[Task]) -> None:
    report = validate(corpus, tasks)
    blocking = report.duplicate_tool_ids or report.dangling_labels or report.empty_queries
    if blocking:
        details = [l for l in report.lines() if not l.startswith("empty description")]
        raise ConfigError("corpus/tasks do not validate:\n  " + "\n  ".join(details[:20]))
    if report.empty_descriptions:
        log.warning("%d tools have empty descriptions", len(report.empty_descriptions))


def run(
    config: RunConfig,
    provider: EmbeddingProvider,
    *,
    llm_client=None,
    reranker: Reranker | None = None,
    corpus: Sequence[ToolRecord] | None = None,
    tasks: Sequence[Task] | None = None,
    index: ToolIndex | None = None,
) -> BenchmarkReport:
    """Run every requested (arm, mode) pair and aggregate metrics.

    The TRR arm needs either ``reranker`` (called as ``reranker(task,
    etr_list, mode)``) or an ``llm_client``.  Tasks whose retrieval fails in
    any mode are excluded from every arm and mode so comparisons stay paired.
    """
    started = time.time()
    if corpus is None or tasks is None:
        corpus, tasks = _load_data(config)
    _check_data(corpus, tasks)
    corpus_map = {t.tool_id: t for t in corpus}

    if TRR in config.arms and reranker is None:
        if llm_client is None:
            raise ConfigError("the TRR arm needs an LLM client or a reranker")

        def reranker(task: Task, etr_list: RankedList, mode: QueryMode) -> RerankOutcome:
            rcfg = dataclasses.replace(config.retrieval, mode=mode, rerank_enabled=True)
            return rerank(llm_client, task, etr_list, rcfg, corpus_map, config.prompt_version)

    if index is None:
        if config.index_path:
            index = indexmod.load(config.index_path)
        else:
            index = indexmod.build(corpus, provider)
    check_compatible(index, provider)

    def one(task: Task, mode: QueryMode):
        rcfg = dataclasses.replace(config.retrieval, mode=mode)
        try:
            res = retrieve(index, provider, task, rcfg)
        except Exception as exc:  # recorded as an exclusion
            return task.task_id, mode, None, None, repr(exc)
        outcome = reranker(task, res.etr_list, mode) if TRR in config.arms else None
        return task.task_id, mode, res, outcome, None

    jobs = [(t, m) for m in config.modes for t in tasks]
    if config.parallelism > 1:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            results = list(pool.map(lambda job: one(*job), jobs))
    else:
        results = [one(*job) for job in jobs]

    errors = {tid: err for tid, _, _, _, err in results if err is not None}
    for tid, err in sorted(errors.items()):
        log.warning("task %s excluded: %s", tid, err)
    by_id = {t.task_id: t for t in tasks}

    per: dict[tuple[str, QueryMode], list[QueryMetrics]] = {(a, m): [] for a in config.arms for m in config.modes}
    latency: dict[str, dict[str, list[float]]] = {a: {"encode": [], "search": []} for a in config.arms}
    if TRR in config.arms:
        latency[TRR]["rerank"] = []
    reasons: dict[str, Counter] = {m.value: Counter() for m in config.modes}
    traces = []
    for tid, mode, res, outcome, err in sorted(results, key=lambda r: (r[1].value, r[0])):
        if tid in errors:
            continue
        relevant = by_id[tid].relevant
        for arm in config.arms:
            latency[arm]["encode"].append(res.encode_ms)
            latency[arm]["search"].append(res.search_ms)
        if ETR in config.arms:
            ids = res.etr_list.ids
            per[(ETR, mode)].append(score_query(tid, ids, relevant, config.cutoffs))
            if config.trace:
                traces.append({"task_id": tid, "arm": ETR, "mode": mode.value, "ranking": ids, "fallback_reason": None})
        if outcome is not None:
            ids = outcome.final_list.ids
            per[(TRR, mode)].append(score_query(tid, ids, relevant, config.cutoffs, fallback=outcome.fallback))
            latency[TRR]["rerank"].append(outcome.rerank_latency_ms)
            if outcome.fallback:
                reasons[mode.value][outcome.fallback_reason.value] += 1
            if config.trace:
                traces.append(
                    {
                        "task_id": tid,
                        "arm": TRR,
                        "mode": mode.value,
                        "ranking": ids,
                        "fallback_reason": outcome.fallback_reason.value,
                    }
                )

    reports = {
        key: aggregate(qs, by_id, config.cutoffs, excluded=errors, weighting=config.weighting)
        for key, qs in per.items()
    }
    metadata = {
        "config": config.to_dict(),
        "fingerprint": index.fingerprint.to_dict(),
        "n_tools": len(corpus),
        "n_tasks": len(tasks),
        "prompt_version": config.prompt_version,
        "seed": config.seed,
        "started_at": started,
        "finished_at": time.time(),
    }
    report = BenchmarkReport(
        reports=reports,
        latency=latency,
        fallback_reasons={m: dict(c) for m, c in reasons.items()} if TRR in config.arms else {},
        metadata=metadata,
        excluded=sorted(errors),
        traces=traces,
    )
    if config.output_dir:
        write_outputs(report, config.output_dir, trace=config.trace)
    return report


def write_outputs(report: BenchmarkReport, output_dir: str | Path, trace: bool = False) -> None:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    (out / "report.txt").write_text(report.to_table(), encoding="utf-8")
    (out / "latency.txt").write_text(latency_profile(report), encoding="utf-8")
    meta = dict(report.metadata, excluded=report.excluded, fallback_reasons=report.fallback_reasons)
    (out / "run_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if trace:
        with open(out / "trace.jsonl", "w", encoding="utf-8") as fh:
            for row in report.traces:
                fh.write(json.dumps(row) + "\n")


# --- building runs from flat config -------------------------------------------

def retrieval_config_from(cfg: Mapping[str, str]) -> RetrievalConfig:
    k_rerank = cfgmod.get_int(cfg, "retrieve.k_rerank", 10)
    return RetrievalConfig(
        k_retrieve=cfgmod.get_int(cfg, "retrieve.k_retrieve", None),
        k_rerank=k_rerank,
        mode=QueryMode.parse(cfg.get("retrieve.mode", "query_only")),
        rerank_enabled=cfgmod.get_bool(cfg, "rerank.enabled", False),
        rerank_timeout_ms=cfgmod.get_int(cfg, "rerank.timeout_ms", 5_000),
    )


def run_config_from(cfg: Mapping[str, str]) -> RunConfig:
    synth = None
    if "synth.n_families" in cfg:
        synth = SynthSpec(
            n_families=cfgmod.get_int(cfg, "synth.n_families"),
            tools_per_family=cfgmod.get_int(cfg, "synth.tools_per_family", 5),
            tasks_per_family=cfgmod.get_int(cfg, "synth.tasks_per_family", 4),
            dim=cfgmod.get_int(cfg, "synth.dim", cfgmod.get_int(cfg, "embed.dim", 384)),
            seed=cfgmod.get_int(cfg, "synth.seed", cfgmod.get_int(cfg, "run.seed", 0)),
        )
    return RunConfig(
        retrieval=retrieval_config_from(cfg),
        corpus_path=cfg.get("run.corpus_path"),
        tasks_path=cfg.get("run.tasks_path"),
        arms=tuple(cfgmod.get_list(cfg, "run.arms", [ETR])),
        modes=tuple(cfgmod.get_list(cfg, "run.modes", ["query_only", "query_plus_instruction"])),
        cutoffs=tuple(int(k) for k in cfgmod.get_list(cfg, "run.cutoffs", ["1", "10"])),
        parallelism=cfgmod.get_int(cfg, "run.parallelism", 1),
        seed=cfgmod.get_int(cfg, "run.seed", 0),
        output_dir=cfg.get("run.output_dir"),
        trace=cfgmod.get_bool(cfg, "run.trace", False),
        weighting=cfg.get("metrics.weighting", "subset"),
        prompt_version=cfg.get("rerank.prompt_version", DEFAULT_PROMPT_VERSION),
        index_path=cfg.get("run.index_path") or None,
        synth=synth,
    )


def reranker_from(cfg: Mapping[str, str], run_config: RunConfig):
    """Resolve ``rerank.backend`` into ``(llm_client, reranker)``; one of them is None."""
    backend = cfg.get("rerank.backend", "http").lower()
    if backend == "http":
        return make_llm_client(cfg), None
    if backend == "oracle":
        k = run_config.retrieval.k_rerank
        return None, lambda task, etr_list, mode: oracle_rerank(task, etr_list, k)
    from .mocks import llm_for_behavior

    try:
        return llm_for_behavior(backend), None
    except ValueError:
        raise ConfigError(f"unknown rerank.backend {backend!r}") from None


def run_from_config(cfg: Mapping[str, str]) -> BenchmarkReport:
    run_config = run_config_from(cfg)
    if TRR in run_config.arms and "rerank.timeout_ms" not in cfg:
        raise ConfigError("rerank.timeout_ms is required for the TRR arm (5000 is a reasonable starting point)")
    provider = make_provider(cfg)
    llm_client = reranker = None
    if TRR in run_config.arms:
        llm_client, reranker = reranker_from(cfg, run_config)
    return run(run_config, provider, llm_client=llm_client, reranker=reranker)
