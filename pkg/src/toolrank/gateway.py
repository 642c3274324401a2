"""HTTP gateway serving retrieval and reranking over a prebuilt index.

Endpoints::

    POST /v1/retrieve        {"query", "instruction"?, "k"?, "rerank"?}
    GET  /v1/tools/{tool_id}
    GET  /v1/stats
    GET  /healthz            liveness
    GET  /readyz             index loaded and embedding provider reachable

Reranker failures never produce an error status; they come back as a 200
with ``fallback: true`` and the reason.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

from fastapi import FastAPI, HTTPException, Request
from pydantic import BaseModel, ValidationError
from starlette.concurrency import run_in_threadpool

from . import config as cfgmod
from . import index as indexmod
from .corpus import Task, ToolRecord, load_tasks, load_tools, stats
from .embed import EmbeddingProvider, QueryMode, make_provider
from .errors import ConfigError, ProviderTransportError, ToolrankError
from .index import ToolIndex
from .rerank import DEFAULT_PROMPT_VERSION, FallbackReason, LLMClient, make_llm_client, rerank
from .retrieve import RetrievalConfig, check_compatible, retrieve

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ServiceConfig:
    index_path: str
    corpus_path: str
    tasks_path: str | None = None
    host: str = "127.0.0.1"
    port: int = 8080
    default_k: int = 10
    max_k: int = 100
    k_rerank: int = 10
    embed_timeout_ms: int = 10_000
    rerank_timeout_ms: int = 5_000
    request_timeout_ms: int = 20_000
    prompt_version: str = DEFAULT_PROMPT_VERSION

    def __post_init__(self):
        if self.request_timeout_ms < self.embed_timeout_ms + self.rerank_timeout_ms:
            raise ConfigError(
                f"service.request_timeout_ms ({self.request_timeout_ms}) must cover embed.timeout_ms "
                f"+ rerank.timeout_ms ({self.embed_timeout_ms + self.rerank_timeout_ms})"
            )
        if self.max_k < 1 or self.default_k < 1 or self.k_rerank < 1:
            raise ConfigError("k limits must be >= 1")

    @classmethod
    def from_flat(cls, cfg: Mapping[str, str]) -> "ServiceConfig":
        index_path = cfg.get("service.index_path")
        corpus_path = cfg.get("service.corpus_path")
        if not index_path or not corpus_path:
            raise ConfigError("service.index_path and service.corpus_path are required")
        if cfg.get("rerank.base_url") and "rerank.timeout_ms" not in cfg:
            raise ConfigError("rerank.timeout_ms is required when rerank.base_url is set")
        return cls(
            index_path=index_path,
            corpus_path=corpus_path,
            tasks_path=cfg.get("service.tasks_path") or None,
            host=cfg.get("service.host", "127.0.0.1"),
            port=cfgmod.get_int(cfg, "service.port", 8080),
            default_k=cfgmod.get_int(cfg, "service.default_k", 10),
            max_k=cfgmod.get_int(cfg, "service.max_k", 100),
            k_rerank=cfgmod.get_int(cfg, "retrieve.k_rerank", 10),
            embed_timeout_ms=cfgmod.get_int(cfg, "embed.timeout_ms", 10_000),
            rerank_timeout_ms=cfgmod.get_int(cfg, "rerank.timeout_ms", 5_000),
            request_timeout_ms=cfgmod.get_int(cfg, "service.request_timeout_ms", 20_000),
            prompt_version=cfg.get("rerank.prompt_version", DEFAULT_PROMPT_VERSION),
        )


class RetrieveRequest(BaseModel):
    query: str
    instruction: str | None = None
    k: int | None = None
    rerank: bool = False


class BadRequest(ValueError):
    pass


class Service:
    """Loaded state shared by all requests; immutable after construction."""

    def __init__(
        self,
        config: ServiceConfig,
        index: ToolIndex,
        corpus: Sequence[ToolRecord],
        provider: EmbeddingProvider,
        llm_client: LLMClient | None = None,
        tasks: Sequence[Task] = (),
    ):
        check_compatible(index, provider)
        self.config = config
        self.index = index
        self.corpus = {t.tool_id: t for t in corpus}
        missing = [tid for tid in index.tool_ids if tid not in self.corpus]
        if missing:
            raise ConfigError(f"{len(missing)} indexed tool ids are absent from the corpus, e.g. {missing[0]!r}")
        self.provider = provider
        self.llm_client = llm_client
        self.stats = stats(list(corpus), list(tasks))

    @classmethod
    def from_config(cls, config: ServiceConfig, flat: Mapping[str, str]) -> "Service":
        index = indexmod.load(config.index_path)
        corpus = load_tools(config.corpus_path)
        tasks = load_tasks(config.tasks_path) if config.tasks_path else []
        provider = make_provider(flat)
        llm = make_llm_client(flat) if flat.get("rerank.base_url") else None
        return cls(config, index, corpus, provider, llm, tasks)

    def handle_retrieve(self, body: Mapping) -> dict:
        """Validate a retrieve request and run retrieval (and reranking when asked).

        Raises :class:`BadRequest` for invalid input and lets
        :class:`ProviderTransportError` through; the HTTP layer maps these to
        400 and 503.
        """
        try:
            req = RetrieveRequest.model_validate(body)
        except ValidationError as exc:
            raise BadRequest(exc.errors(include_url=False)[0]["msg"]) from None
        if not req.query.strip():
            raise BadRequest("query must be a non-empty string")
        k = self.config.default_k if req.k is None else req.k
        if k < 1:
            raise BadRequest("k must be >= 1")
        k = min(k, self.config.max_k)
        k_rerank = min(self.config.k_rerank, k)
        mode = QueryMode.QUERY_PLUS_INSTRUCTION if req.instruction else QueryMode.QUERY_ONLY
        rcfg = RetrievalConfig(
            k_retrieve=k,
            k_rerank=k_rerank,
            mode=mode,
            rerank_enabled=req.rerank,
            rerank_timeout_ms=self.config.rerank_timeout_ms,
        )
        # relevance labels are unused at serving time; the placeholder satisfies Task
        task = Task(task_id="request", query=req.query, instruction=req.instruction, relevant_tool_ids=("?",))
        res = retrieve(self.index, self.provider, task, rcfg)
        ranked = res.etr_list
        fallback, reason, rerank_ms = False, FallbackReason.NONE, 0.0
        if req.rerank and len(ranked):
            if self.llm_client is None:
                ranked, fallback, reason = ranked.truncate(k_rerank), True, FallbackReason.TRANSPORT_ERROR
            else:
                outcome = rerank(self.llm_client, task, ranked, rcfg, self.corpus, self.config.prompt_version)
                ranked, fallback, reason = outcome.final_list, outcome.fallback, outcome.fallback_reason
                rerank_ms = outcome.rerank_latency_ms
        return {
            "mode_used": res.mode_used.value,
            "fallback": fallback,
            "fallback_reason": reason.value,
            "latency_ms": {"encode": res.encode_ms, "search": res.search_ms, "rerank": rerank_ms},
            "results": [
                {"rank": i, "tool_id": tid, "name": self.corpus[tid].name, "score": score}
                for i, (tid, score) in enumerate(ranked, start=1)
            ],
        }


def create_app(service: Service) -> FastAPI:
    app = FastAPI(title="toolrank", version="0.1.0")
    app.state.service = service

    @app.post("/v1/retrieve")
    async def retrieve_endpoint(request: Request):
        try:
            body = await request.json()
        except ValueError:
            raise HTTPException(status_code=400, detail="body must be JSON") from None
        if not isinstance(body, dict):
            raise HTTPException(status_code=400, detail="body must be a JSON object")
        try:
            return await run_in_threadpool(service.handle_retrieve, body)
        except BadRequest as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        except ProviderTransportError as exc:
            raise HTTPException(status_code=503, detail=f"embedding provider unavailable: {exc}") from None
        except ToolrankError as exc:
            log.exception("retrieval failed")
            raise HTTPException(status_code=500, detail=str(exc)) from None

    @app.get("/v1/tools/{tool_id}")
    def get_tool(tool_id: str):
        tool = service.corpus.get(tool_id)
        if tool is None:
            raise HTTPException(status_code=404, detail=f"unknown tool {tool_id!r}")
        return tool.to_dict()

    @app.get("/v1/stats")
    def get_stats():
        return service.stats.to_dict()

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/readyz")
    def readyz():
        probe = getattr(service.provider, "probe", None)
        embed_ok = probe() if probe is not None else True
        body = {"index_loaded": True, "n_tools": len(service.index), "embedding_provider": embed_ok}
        if not embed_ok:
            raise HTTPException(status_code=503, detail=body)
        return {"status": "ready", **body}

    return app


def serve(flat: Mapping[str, str]) -> None:
    """Load everything, then serve until interrupted.  Load failures raise before binding."""
    import uvicorn

    flat = dict(flat)
    flat.update(cfgmod.env_overrides())
    config = ServiceConfig.from_flat(flat)
    service = Service.from_config(config, flat)
    log.info("serving %d tools on %s:%d", len(service.index), config.host, config.port)
    uvicorn.run(create_app(service), host=config.host, port=config.port, log_level="info")
