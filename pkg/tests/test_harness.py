import json

import numpy as np
import pytest

from toolrank import harness
from toolrank.corpus import Task, ToolRecord
from toolrank.embed import HashEmbedder, QueryMode
from toolrank.errors import ConfigError
from toolrank.harness import ETR, TRR, RunConfig, latency_profile, run, run_from_config
from toolrank.mocks import AlwaysTimeoutLLM, IdentityLLM
from toolrank.rerank import oracle_rerank
from toolrank.retrieve import RetrievalConfig
from toolrank.synth import SynthSpec

SPEC = SynthSpec(6, 4, 3, 128, seed=2)


def synth_config(**kw):
    kw.setdefault("synth", SPEC)
    return RunConfig(**kw)


def test_etr_run_is_reproducible(tmp_path):
    for name in ("a", "b"):
        run(synth_config(output_dir=str(tmp_path / name), seed=3), HashEmbedder(128))
    assert (tmp_path / "a" / "report.csv").read_bytes() == (tmp_path / "b" / "report.csv").read_bytes()
    for f in ("report.txt", "latency.txt", "run_meta.json"):
        assert (tmp_path / "a" / f).exists()
    meta = json.loads((tmp_path / "a" / "run_meta.json").read_text())
    assert meta["fingerprint"]["dim"] == 128 and meta["n_tasks"] == 18


def test_etr_only_has_no_rerank_section():
    report = run(synth_config(), HashEmbedder(128))
    prof = latency_profile(report)
    assert "rerank" not in prof and "[fallback]" not in prof
    assert set(report.reports) == {(ETR, QueryMode.QUERY_ONLY), (ETR, QueryMode.QUERY_PLUS_INSTRUCTION)}


def test_all_timeout_profile():
    cfg = synth_config(
        arms=(ETR, TRR),
        modes=(QueryMode.QUERY_ONLY,),
        retrieval=RetrievalConfig(rerank_timeout_ms=20),
        parallelism=8,
    )
    report = run(cfg, HashEmbedder(128), llm_client=AlwaysTimeoutLLM())
    rerank_ms = np.asarray(report.latency[TRR]["rerank"])
    assert abs(np.median(rerank_ms) - 20) < 10
    assert report.fallback_reasons == {"query_only": {"Timeout": 18}}
    assert "Timeout: 18" in latency_profile(report)
    etr, trr = report.get(ETR, "query_only"), report.get(TRR, "query_only")
    assert trr.metric_values() == etr.metric_values()
    assert trr.overall.fallback_rate == 1.0


def test_parallelism_does_not_change_metrics():
    cfgs = [synth_config(arms=(ETR, TRR), parallelism=p) for p in (1, 6)]
    a, b = (run(c, HashEmbedder(128), llm_client=IdentityLLM()) for c in cfgs)
    assert a.to_csv() == b.to_csv()


def test_oracle_reranker_and_trace(tmp_path):
    cfg = synth_config(arms=(ETR, TRR), trace=True, output_dir=str(tmp_path))
    report = run(cfg, HashEmbedder(128), reranker=lambda t, l, m: oracle_rerank(t, l, 10))
    for mode in QueryMode:
        assert report.get(TRR, mode).overall.get("ndcg", 10) >= report.get(ETR, mode).overall.get("ndcg", 10)
    rows = [json.loads(l) for l in (tmp_path / "trace.jsonl").read_text().splitlines()]
    assert len(rows) == 18 * 2 * 2
    assert {r["arm"] for r in rows} == {ETR, TRR}


def test_blocking_validation():
    tools = [ToolRecord("a", "a", "x")]
    tasks = [Task("q", "x", ("missing",))]
    with pytest.raises(ConfigError, match="dangling"):
        run(synth_config(), HashEmbedder(16), corpus=tools, tasks=tasks)


def test_failed_tasks_excluded_everywhere(small_tools, small_tasks):
    class Flaky(HashEmbedder):
        def embed(self, texts):
            if any("Paris" in t for t in texts):
                raise RuntimeError("provider down")
            return super().embed(texts)

    report = run(synth_config(arms=(ETR, TRR)), Flaky(64), llm_client=IdentityLLM(), corpus=small_tools, tasks=small_tasks)
    assert report.excluded == ["t2"]
    for rep in report.reports.values():
        assert rep.per_subset["Web"].n_tasks == 1
        assert rep.per_subset["Web"].n_excluded == 1


def test_run_config_validation():
    with pytest.raises(ConfigError):
        synth_config(arms=("XYZ",))
    with pytest.raises(ConfigError):
        synth_config(cutoffs=(1, 50))
    with pytest.raises(ConfigError):
        RunConfig()
    with pytest.raises(ConfigError):
        run(synth_config(arms=(TRR,)), HashEmbedder(128))


def test_run_from_flat_config(tmp_path):
    cfg = {
        "embed.provider": "hash",
        "embed.dim": "128",
        "synth.n_families": "6",
        "synth.tools_per_family": "4",
        "synth.tasks_per_family": "3",
        "run.arms": "ETR,TRR",
        "run.modes": "query_only",
        "rerank.backend": "reverse",
        "rerank.timeout_ms": "2000",
        "run.output_dir": str(tmp_path),
    }
    report = run_from_config(cfg)
    assert (TRR, QueryMode.QUERY_ONLY) in report.reports
    header = (tmp_path / "report.csv").read_text().splitlines()[0]
    assert header == "arm,mode,subset,metric,k,value,n_tasks,fallback_rate"
    with pytest.raises(ConfigError, match="timeout_ms"):
        run_from_config({k: v for k, v in cfg.items() if k != "rerank.timeout_ms"})
    with pytest.raises(ConfigError):
        harness.reranker_from({"rerank.backend": "nonsense"}, harness.run_config_from(cfg))
