"""Scripted stand-ins for the embedding service and the reranking LLM.

In-process clients implement the ``complete(prompt, timeout_s)`` interface
of :class:`toolrank.rerank.ChatCompletionsClient`.  The HTTP servers speak
the same wire protocols as the real services and are used by tests, the
CLI ``rerank.backend`` option and local demos.
"""

from __future__ import annotations

import json
import re
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Mapping, Sequence

import numpy as np

from .embed import hash_embed
from .errors import LLMTransportError
from .rerank import format_permutation, prompt_candidate_count

_REQUEST_RE = re.compile(r"Request:\n(.*?)\n\nCandidate tools:", re.DOTALL)
_NAME_RE = re.compile(r"^\[(\d+)\] name: (.*)$", re.MULTILINE)


class IdentityLLM:
    def complete(self, prompt: str, timeout_s: float) -> str:
        return format_permutation(range(1, prompt_candidate_count(prompt) + 1))


class ReverseLLM:
    def complete(self, prompt: str, timeout_s: float) -> str:
        return format_permutation(range(prompt_candidate_count(prompt), 0, -1))


class ScriptedLLM:
    """Returns the given responses in turn, repeating the last one."""

    def __init__(self, responses: str | Sequence[str]):
        self.responses = [responses] if isinstance(responses, str) else list(responses)
        self._i = 0
        self._lock = threading.Lock()

    def complete(self, prompt: str, timeout_s: float) -> str:
        with self._lock:
            text = self.responses[min(self._i, len(self.responses) - 1)]
            self._i += 1
        return text


class DelayedLLM:
    def __init__(self, inner, delay_s: float):
        self.inner = inner
        self.delay_s = delay_s

    def complete(self, prompt: str, timeout_s: float) -> str:
        time.sleep(self.delay_s)
        return self.inner.complete(prompt, timeout_s)


class AlwaysTimeoutLLM:
    """Answers only after the caller's deadline has passed."""

    def complete(self, prompt: str, timeout_s: float) -> str:
        time.sleep(timeout_s * 1.5 + 0.01)
        return IdentityLLM().complete(prompt, timeout_s)


class FailingLLM:
    def complete(self, prompt: str, timeout_s: float) -> str:
        raise LLMTransportError("scripted transport failure")


class OracleLLM:
    """Ranks candidates whose name is labelled relevant for the prompt's request first.

    ``relevant_names`` maps composed request text to the set of relevant tool names.
    """

    def __init__(self, relevant_names: Mapping[str, set[str]]):
        self.relevant_names = relevant_names

    def complete(self, prompt: str, timeout_s: float) -> str:
        m = _REQUEST_RE.search(prompt)
        relevant = self.relevant_names.get(m.group(1), set()) if m else set()
        names = [(int(i), name) for i, name in _NAME_RE.findall(prompt)]
        first = [i for i, name in names if name in relevant]
        rest = [i for i, name in names if name not in relevant]
        return format_permutation(first + rest)


def llm_for_behavior(behavior: str, *, script: str | Sequence[str] = "", delay_s: float = 0.0, relevant_names=None):
    behavior = behavior.lower()
    if behavior == "identity":
        return IdentityLLM()
    if behavior == "reverse":
        return ReverseLLM()
    if behavior == "scripted":
        return ScriptedLLM(script)
    if behavior == "delayed":
        return DelayedLLM(IdentityLLM(), delay_s)
    if behavior == "timeout":
        return AlwaysTimeoutLLM()
    if behavior == "error":
        return FailingLLM()
    if behavior == "oracle":
        return OracleLLM(relevant_names or {})
    raise ValueError(f"unknown mock LLM behavior {behavior!r}")


class _JSONServer:
    """Threaded HTTP server on 127.0.0.1 with an ephemeral port."""

    def __init__(self, routes: Mapping[str, Callable[[dict], tuple[int, dict]]]):
        self.requests: list[tuple[str, dict]] = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length") or 0)
                try:
                    body = json.loads(self.rfile.read(length) or b"{}")
                except json.JSONDecodeError:
                    self._send(400, {"error": "invalid JSON"})
                    return
                outer.requests.append((self.path, body))
                route = routes.get(self.path)
                if route is None:
                    self._send(404, {"error": f"no route {self.path}"})
                    return
                status, payload = route(body)
                self._send(status, payload)

            def _send(self, status: int, payload: dict):
                data = json.dumps(payload).encode("utf-8")
                try:
                    self.send_response(status)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(data)))
                    self.end_headers()
                    self.wfile.write(data)
                except (BrokenPipeError, ConnectionResetError):
                    pass  # client gave up (deadline); nothing to deliver

            def log_message(self, format, *args):
                pass

        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self):
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


class MockEmbeddingServer(_JSONServer):
    """``/v1/embeddings`` backed by the hash embedder.

    ``scale`` multiplies every vector (to exercise client re-normalisation),
    ``reverse`` returns items in reverse index order, ``extra`` appends
    surplus vectors.
    """

    def __init__(self, dim: int, model: str = "mock-hash", scale: float = 1.0, reverse: bool = False, extra: int = 0):
        self.dim = dim
        self.model = model

        def embeddings(body: dict) -> tuple[int, dict]:
            inputs = body.get("input")
            if isinstance(inputs, str):
                inputs = [inputs]
            if not isinstance(inputs, list):
                return 400, {"error": "input must be a list of strings"}
            data = [
                {"object": "embedding", "index": i, "embedding": (hash_embed(t, dim).astype(np.float64) * scale).tolist()}
                for i, t in enumerate(inputs)
            ]
            data += [{"object": "embedding", "index": len(inputs) + j, "embedding": [0.0] * dim} for j in range(extra)]
            if reverse:
                data.reverse()
            return 200, {"object": "list", "model": body.get("model", model), "data": data}

        super().__init__({"/v1/embeddings": embeddings})


class MockLLMServer(_JSONServer):
    """``/v1/chat/completions`` answering with one of the in-process behaviours."""

    def __init__(self, behavior: str = "identity", *, script: str | Sequence[str] = "", delay_s: float = 0.0, relevant_names=None):
        self.behavior = behavior
        client = llm_for_behavior(behavior if behavior != "timeout" else "delayed", script=script, delay_s=delay_s, relevant_names=relevant_names)

        def chat(body: dict) -> tuple[int, dict]:
            if behavior == "error":
                return 500, {"error": "scripted failure"}
            try:
                prompt = body["messages"][-1]["content"]
            except (KeyError, IndexError, TypeError):
                return 400, {"error": "messages missing"}
            text = client.complete(prompt, 0.0)
            return 200, {
                "object": "chat.completion",
                "model": body.get("model", "mock"),
                "choices": [{"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": "stop"}],
            }

        super().__init__({"/v1/chat/completions": chat})
