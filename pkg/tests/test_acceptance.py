"""Acceptance suite: one test (or a small group) per criterion.

Every test carries a ``criterion`` marker; a PASS/FAIL/SKIP line per
criterion is printed in the terminal summary.
"""

import itertools
import os
import random
import statistics
import time
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient
from oracles import completeness_ref, ndcg_ref, precision_ref, ranking_ref, recall_ref, success_ref
from threadpoolctl import threadpool_limits

from toolrank import index as indexmod
from toolrank.corpus import Category, Task, load_tasks, load_tools
from toolrank.embed import HashEmbedder, ProviderFingerprint, ProviderKind, QueryMode, RemoteEmbedder
from toolrank.gateway import Service, ServiceConfig, create_app
from toolrank.harness import ETR, TRR, RunConfig, run
from toolrank.index import ToolIndex, top_k
from toolrank.metrics import aggregate, completeness_at_k, ndcg_at_k, precision_at_k, recall_at_k, score_query, success_at_1
from toolrank.mocks import AlwaysTimeoutLLM, IdentityLLM, MockEmbeddingServer, MockLLMServer
from toolrank.rerank import ChatCompletionsClient, format_permutation, oracle_rerank, parse_permutation
from toolrank.retrieve import RetrievalConfig
from toolrank.synth import SynthSpec, gen_synthetic

criterion = pytest.mark.criterion


# --- metrics --------------------------------------------------------------

@criterion("metric oracle equivalence (10,000 cases, 1e-9, < 30 s)")
def test_metric_oracle_equivalence():
    rng = random.Random(20240101)
    t0 = time.perf_counter()
    cases = 0
    while cases < 10_000:
        pool = [f"tool{i}" for i in range(rng.randint(1, 40))]
        ranking = rng.sample(pool, rng.randint(0, len(pool)))
        relevant = set(rng.sample(pool, rng.randint(1, min(6, len(pool)))))
        k = rng.randint(1, 25)
        assert abs(precision_at_k(ranking, relevant, k) - precision_ref(ranking, relevant, k)) <= 1e-9
        assert abs(recall_at_k(ranking, relevant, k) - recall_ref(ranking, relevant, k)) <= 1e-9
        assert completeness_at_k(ranking, relevant, k) == completeness_ref(ranking, relevant, k)
        assert abs(ndcg_at_k(ranking, relevant, k) - ndcg_ref(ranking, relevant, k)) <= 1e-9
        assert success_at_1(ranking, relevant) == success_ref(ranking, relevant)
        cases += 1
    assert time.perf_counter() - t0 < 30


@criterion("nDCG spot values")
def test_ndcg_spot_values():
    assert ndcg_at_k(["x", "a"], {"a"}, 10) == pytest.approx(0.63093, abs=1e-5)
    assert ndcg_at_k(["a", "x", "b"], {"a", "b"}, 10) == pytest.approx(0.91972, abs=1e-5)


@criterion("aggregation: 11.71 / 14.26 / 24.78 -> 16.92")
def test_aggregation_overall():
    tasks, per_query = [], []
    for subset, mean in ((Category.WEB, 0.1171), (Category.CODE, 0.1426), (Category.CUSTOM, 0.2478)):
        # two tasks per subset averaging to the target mean
        for j, v in enumerate((mean - 0.05, mean + 0.05)):
            tid = f"{subset.value}{j}"
            tasks.append(Task(tid, "q", ("a",), subset=subset))
            qm = score_query(tid, ["a"], {"a"}, (10,))
            qm.ndcg_at[10] = v
            per_query.append(qm)
    rep = aggregate(per_query, tasks, (10,))
    assert rep.per_subset["Web"].get("ndcg", 10) == pytest.approx(11.71, abs=1e-9)
    assert rep.overall.get("ndcg", 10) == pytest.approx(16.92, abs=0.005)


# --- fallback and reranking -----------------------------------------------

FALLBACK_SPEC = SynthSpec(20, 5, 3, 384, seed=5)
CUTOFFS = (1, 3, 5, 10)


@criterion("fallback identity (timeout and identity mocks, < 1 min)")
def test_fallback_identity_timeout():
    t0 = time.perf_counter()
    cfg = RunConfig(
        synth=FALLBACK_SPEC,
        arms=(ETR, TRR),
        cutoffs=CUTOFFS,
        retrieval=RetrievalConfig(k_rerank=10, rerank_timeout_ms=25),
        parallelism=16,
    )
    report = run(cfg, HashEmbedder(384), llm_client=AlwaysTimeoutLLM())
    for mode in QueryMode:
        etr, trr = report.get(ETR, mode), report.get(TRR, mode)
        assert trr.metric_values() == etr.metric_values()
        assert trr.overall.fallback_rate == 1.0
        for s in trr.per_subset.values():
            assert s.n_tasks == 0 or s.fallback_rate == 1.0
        assert report.fallback_reasons[mode.value] == {"Timeout": 60}
    assert time.perf_counter() - t0 < 60


@criterion("fallback identity (timeout and identity mocks, < 1 min)")
def test_fallback_identity_permutation():
    cfg = RunConfig(synth=FALLBACK_SPEC, arms=(ETR, TRR), cutoffs=CUTOFFS, parallelism=4)
    report = run(cfg, HashEmbedder(384), llm_client=IdentityLLM())
    for mode in QueryMode:
        assert report.get(TRR, mode).metric_values() == report.get(ETR, mode).metric_values()
        assert report.get(TRR, mode).overall.fallback_rate == 0.0


@criterion("oracle dominance over 100 seeded runs")
def test_oracle_dominance():
    k_rerank = 10
    strict_subsets = 0
    for seed in range(100):
        spec = SynthSpec(6, 5, 3, 128, seed=seed)
        cfg = RunConfig(synth=spec, arms=(ETR, TRR), trace=True, seed=seed)
        report = run(cfg, HashEmbedder(128), reranker=lambda t, l, m: oracle_rerank(t, l, k_rerank))
        rankings = {(r["task_id"], r["arm"], r["mode"]): r["ranking"] for r in report.traces}
        _, tasks = gen_synthetic(spec)
        for mode in QueryMode:
            etr_rep, trr_rep = report.get(ETR, mode), report.get(TRR, mode)
            for subset, summ in etr_rep.per_subset.items():
                if summ.n_tasks == 0:
                    continue
                e, o = summ.get("ndcg", 10), trr_rep.per_subset[subset].get("ndcg", 10)
                assert o >= e
                if o == e:
                    for task in (t for t in tasks if t.subset.value == subset):
                        ranking = rankings[(task.task_id, ETR, mode.value)]
                        ideal = ndcg_at_k(ranking, task.relevant, 10) == 1.0
                        none_found = not (task.relevant & set(ranking[:k_rerank]))
                        assert ideal or none_found
                else:
                    strict_subsets += 1
    assert strict_subsets > 0


@criterion("instruction effect: QPI - QO nDCG@10 >= 0.20")
def test_instruction_effect():
    spec = SynthSpec(20, 5, 4, 384, seed=1)
    report = run(RunConfig(synth=spec), HashEmbedder(384))
    qo = report.get(ETR, QueryMode.QUERY_ONLY).overall.get("ndcg", 10) / 100
    qpi = report.get(ETR, QueryMode.QUERY_PLUS_INSTRUCTION).overall.get("ndcg", 10) / 100
    assert qpi - qo >= 0.20, (qo, qpi)


# --- permutation parser ---------------------------------------------------

@criterion("permutation parser: exhaustive round-trip n <= 6 and 10,000 fuzzed inputs")
def test_parser_round_trip():
    for n in range(1, 7):
        for perm in itertools.permutations(range(1, n + 1)):
            p = parse_permutation(format_permutation(perm), n)
            assert p.order == perm and not p.repaired


def _fuzz_text(rng: random.Random, n: int) -> str:
    pieces = []
    for _ in range(rng.randint(0, 25)):
        r = rng.random()
        if r < 0.35:
            pieces.append(f"[{rng.randint(-3, n + 5)}]")
        elif r < 0.45:
            pieces.append(rng.choice(["[", "]", "[[", "]]", "[]", "[ ]", "[x]", "[1.5]", "[-0]", "[٣]", "[３]"]))
        elif r < 0.5:
            pieces.append("[" + "9" * rng.randint(5, 40) + "]")
        elif r < 0.75:
            pieces.append(rng.choice([">", ">>", ",", "then", "and", "\n", "best:", "I think", "\x00", "🙂"]))
        else:
            pieces.append("".join(chr(rng.randint(32, 0x2FFF)) for _ in range(rng.randint(1, 8))))
    return rng.choice(["", " ", " > "]).join(pieces)


@criterion("permutation parser: exhaustive round-trip n <= 6 and 10,000 fuzzed inputs")
def test_parser_fuzz():
    rng = random.Random(77)
    for _ in range(10_000):
        n = rng.randint(1, 30)
        p = parse_permutation(_fuzz_text(rng, n), n)
        assert sorted(p.order) == list(range(1, n + 1))
        assert p.usable or p.order == tuple(range(1, n + 1))


# --- index ----------------------------------------------------------------

@criterion("index: exact top-k, 50k x 384 latency, bit-identical save/load")
def test_index_matches_sort_oracle():
    rng = np.random.default_rng(1234)
    n, dim = 1000, 64
    vecs = rng.normal(size=(n, dim))
    # duplicated rows and a coarse block force exact ties
    vecs[rng.choice(n, 150, replace=False)] = vecs[rng.integers(0, n, 150)]
    vecs[:200] = np.round(vecs[:200])
    ids = [f"tool_{i:04d}" for i in rng.permutation(n)]
    idx = ToolIndex.from_vectors(ids, vecs, ProviderFingerprint(ProviderKind.REMOTE, "rand", dim))
    for qi in range(1000):
        q = np.round(rng.normal(size=dim)) if qi % 2 else rng.normal(size=dim)
        if not q.any():
            q[0] = 1.0
        k = int(rng.integers(1, 60))
        assert list(top_k(idx, q.astype(np.float32), k)) == ranking_ref(idx.tool_ids, idx.matrix, q.astype(np.float32), k)


@criterion("index: exact top-k, 50k x 384 latency, bit-identical save/load")
def test_index_latency_50k():
    rng = np.random.default_rng(0)
    vecs = rng.normal(size=(50_000, 384)).astype(np.float32)
    idx = ToolIndex.from_vectors([f"t{i}" for i in range(50_000)], vecs, ProviderFingerprint(ProviderKind.REMOTE, "rand", 384))
    queries = rng.normal(size=(21, 384)).astype(np.float32)
    times = []
    with threadpool_limits(limits=1):
        top_k(idx, queries[0], 10)  # warm-up
        for q in queries[1:]:
            t0 = time.perf_counter()
            top_k(idx, q, 10)
            times.append((time.perf_counter() - t0) * 1000)
    print(f"top-10 over 50k x 384: median {statistics.median(times):.2f} ms, max {max(times):.2f} ms")
    assert statistics.median(times) < 50


@criterion("index: exact top-k, 50k x 384 latency, bit-identical save/load")
def test_index_save_load(tmp_path):
    rng = np.random.default_rng(9)
    idx = ToolIndex.from_vectors([f"t{i}" for i in range(500)], rng.normal(size=(500, 384)), ProviderFingerprint(ProviderKind.REMOTE, "rand", 384))
    indexmod.save(idx, tmp_path / "a.idx")
    back = indexmod.load(tmp_path / "a.idx")
    assert back.matrix.tobytes() == idx.matrix.tobytes()
    assert back.tool_ids == idx.tool_ids and back.fingerprint == idx.fingerprint
    indexmod.save(back, tmp_path / "b.idx")
    assert (tmp_path / "a.idx").read_bytes() == (tmp_path / "b.idx").read_bytes()


# --- service --------------------------------------------------------------

@criterion("service conformance against mock embedding and LLM servers")
def test_service_conformance(small_tools, unused_port):
    with MockEmbeddingServer(dim=128, model="mock") as emb, MockLLMServer("identity") as llm:
        provider = RemoteEmbedder(emb.base_url, "mock", 128)
        idx = indexmod.build(small_tools, provider)
        cfg = ServiceConfig(index_path="unused", corpus_path="unused", rerank_timeout_ms=2000)
        client = TestClient(create_app(Service(cfg, idx, small_tools, provider, ChatCompletionsClient(llm.base_url, "m"))))

        r = client.post("/v1/retrieve", json={"query": "resize image", "k": 5, "rerank": False})
        assert r.status_code == 200 and r.json()["results"][0]["tool_id"] == "resize_image_tool"

        assert client.post("/v1/retrieve", json={"query": "", "k": 5}).status_code == 400

        plain = client.post("/v1/retrieve", json={"query": "q", "k": 3, "rerank": False}).json()
        reranked = client.post("/v1/retrieve", json={"query": "q", "k": 3, "rerank": True}).json()
        assert [x["tool_id"] for x in reranked["results"]] == [x["tool_id"] for x in plain["results"]]

        dead_llm = ChatCompletionsClient(f"http://127.0.0.1:{unused_port}", "m")
        client = TestClient(create_app(Service(cfg, idx, small_tools, provider, dead_llm)))
        r = client.post("/v1/retrieve", json={"query": "resize image", "k": 5, "rerank": True})
        assert r.status_code == 200 and r.json()["fallback"] is True and r.json()["fallback_reason"] == "TransportError"


# --- dataset --------------------------------------------------------------

def _toolret_dir() -> Path | None:
    raw = os.environ.get("TOOLRANK_TOOLRET_DIR")
    if not raw:
        return None
    d = Path(raw)
    return d if (d / "tools.jsonl").is_file() and (d / "tasks.jsonl").is_file() else None


@criterion("dataset counts: 44,453 tools and 7,961 tasks (optional)")
def test_toolret_counts():
    d = _toolret_dir()
    if d is None:
        pytest.skip("ToolRet data not present (set TOOLRANK_TOOLRET_DIR to a directory with converted tools.jsonl and tasks.jsonl)")
    assert len(load_tools(d / "tools.jsonl")) == 44_453
    assert len(load_tasks(d / "tasks.jsonl")) == 7_961
