"""Tool corpus and task set loading, validation and summary statistics.

Both file kinds are JSON Lines: one flat JSON object per line.  Tool records
carry ``tool_id``, ``name``, ``description``, ``category``, ``domain``,
``input_schema`` and ``output_schema``; task records carry ``task_id``,
``query``, ``instruction`` (optional), ``relevant_tool_ids`` and ``subset``.

Token counts reported by :func:`stats` are whitespace tokens (maximal runs of
non-whitespace characters).  They are not sub-word tokenizer counts and will
not match lengths reported for the original benchmark.
"""

from __future__ import annotations

import enum
import json
import math
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .errors import CorpusFormatError, DuplicateToolError

TOOL_KEYS = ("tool_id", "name", "description", "category", "domain", "input_schema", "output_schema")
TASK_KEYS = ("task_id", "query", "instruction", "relevant_tool_ids", "subset")


class Category(str, enum.Enum):
    WEB = "Web"
    CODE = "Code"
    CUSTOM = "Custom"
    OTHER = "Other"

    @classmethod
    def parse(cls, raw: str | None) -> "Category":
        """Map a category string to a subset; anything unrecognised becomes ``Other``."""
        if raw is None:
            return cls.OTHER
        return _CATEGORY_ALIASES.get(raw.strip().lower(), cls.OTHER)


_CATEGORY_ALIASES = {
    "web": Category.WEB,
    "web api": Category.WEB,
    "code": Category.CODE,
    "code function": Category.CODE,
    "custom": Category.CUSTOM,
    "customized": Category.CUSTOM,
    "customized app": Category.CUSTOM,
    "other": Category.OTHER,
}

# Order used for every per-subset table.
SUBSET_ORDER = (Category.WEB, Category.CODE, Category.CUSTOM, Category.OTHER)


@dataclass(frozen=True)
class ToolRecord:
    tool_id: str
    name: str
    description: str = ""
    category: Category = Category.OTHER
    domain: str = ""
    input_schema: str = ""
    output_schema: str = ""

    def to_dict(self) -> dict[str, str]:
        return {
            "tool_id": self.tool_id,
            "name": self.name,
            "description": self.description,
            "category": self.category.value,
            "domain": self.domain,
            "input_schema": self.input_schema,
            "output_schema": self.output_schema,
        }


@dataclass(frozen=True)
class Task:
    task_id: str
    query: str
    relevant_tool_ids: tuple[str, ...]
    instruction: str | None = None
    subset: Category = Category.OTHER

    def __post_init__(self):
        if not self.query:
            raise ValueError(f"task {self.task_id!r}: query must be non-empty")
        if not self.relevant_tool_ids:
            raise ValueError(f"task {self.task_id!r}: relevant_tool_ids must be non-empty")

    @property
    def relevant(self) -> frozenset[str]:
        return frozenset(self.relevant_tool_ids)

    def to_dict(self) -> dict:
        out: dict = {"task_id": self.task_id, "query": self.query}
        if self.instruction is not None:
            out["instruction"] = self.instruction
        out["relevant_tool_ids"] = list(self.relevant_tool_ids)
        out["subset"] = self.subset.value
        return out


@dataclass(frozen=True)
class ValidationReport:
    duplicate_tool_ids: list[str] = field(default_factory=list)
    empty_descriptions: list[str] = field(default_factory=list)
    dangling_labels: list[tuple[str, str]] = field(default_factory=list)
    empty_queries: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.duplicate_tool_ids or self.empty_descriptions or self.dangling_labels or self.empty_queries)

    def lines(self) -> list[str]:
        out = [f"duplicate tool_id: {t}" for t in self.duplicate_tool_ids]
        out += [f"empty description: {t}" for t in self.empty_descriptions]
        out += [f"dangling label: task {t} -> tool {tool}" for t, tool in self.dangling_labels]
        out += [f"empty query: {t}" for t in self.empty_queries]
        return out


@dataclass(frozen=True)
class CorpusStats:
    n_tools: int
    n_tasks: int
    tools_per_category: dict[str, int]
    tasks_per_subset: dict[str, int]
    avg_query_tokens: float
    avg_instruction_tokens: float
    avg_description_tokens: float

    def to_dict(self) -> dict:
        return {
            "n_tools": self.n_tools,
            "n_tasks": self.n_tasks,
            "tools_per_category": dict(self.tools_per_category),
            "tasks_per_subset": dict(self.tasks_per_subset),
            "avg_query_tokens": self.avg_query_tokens,
            "avg_instruction_tokens": self.avg_instruction_tokens,
            "avg_description_tokens": self.avg_description_tokens,
        }


def _iter_json_lines(path: str | os.PathLike) -> Iterator[tuple[int, dict]]:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    with p.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"invalid JSON ({exc.msg})", path=str(p), line=lineno) from None
            if not isinstance(obj, dict):
                raise CorpusFormatError("record is not a JSON object", path=str(p), line=lineno)
            yield lineno, obj


def _text_field(obj: dict, key: str, *, required: bool, path: str, line: int) -> str:
    if key not in obj or obj[key] is None:
        if required:
            raise CorpusFormatError(f"missing required field {key!r}", path=path, line=line)
        return ""
    value = obj[key]
    if not isinstance(value, str):
        raise CorpusFormatError(f"field {key!r} must be a string", path=path, line=line)
    return value


def parse_tool(obj: dict, *, path: str = "<memory>", line: int = 0) -> ToolRecord:
    unknown = sorted(set(obj) - set(TOOL_KEYS))
    if unknown:
        raise CorpusFormatError(f"unknown field(s) {unknown}", path=path, line=line)
    tool_id = _text_field(obj, "tool_id", required=True, path=path, line=line)
    if not tool_id:
        raise CorpusFormatError("empty tool_id", path=path, line=line)
    return ToolRecord(
        tool_id=tool_id,
        name=_text_field(obj, "name", required=True, path=path, line=line),
        description=_text_field(obj, "description", required=False, path=path, line=line),
        category=Category.parse(_text_field(obj, "category", required=False, path=path, line=line)),
        domain=_text_field(obj, "domain", required=False, path=path, line=line),
        input_schema=_text_field(obj, "input_schema", required=False, path=path, line=line),
        output_schema=_text_field(obj, "output_schema", required=False, path=path, line=line),
    )


def parse_task(obj: dict, *, path: str = "<memory>", line: int = 0) -> Task:
    unknown = sorted(set(obj) - set(TASK_KEYS))
    if unknown:
        raise CorpusFormatError(f"unknown field(s) {unknown}", path=path, line=line)
    task_id = _text_field(obj, "task_id", required=True, path=path, line=line)
    if not task_id:
        raise CorpusFormatError("empty task_id", path=path, line=line)
    query = _text_field(obj, "query", required=True, path=path, line=line)
    if not query:
        raise CorpusFormatError("empty query", path=path, line=line)
    instruction = obj.get("instruction")
    if instruction is not None and not isinstance(instruction, str):
        raise CorpusFormatError("field 'instruction' must be a string", path=path, line=line)
    labels = obj.get("relevant_tool_ids")
    if not isinstance(labels, list) or not all(isinstance(x, str) and x for x in labels):
        raise CorpusFormatError("'relevant_tool_ids' must be a list of non-empty strings", path=path, line=line)
    if not labels:
        raise CorpusFormatError("empty 'relevant_tool_ids'", path=path, line=line)
    return Task(
        task_id=task_id,
        query=query,
        instruction=instruction,
        relevant_tool_ids=tuple(dict.fromkeys(labels)),
        subset=Category.parse(_text_field(obj, "subset", required=False, path=path, line=line)),
    )


def load_tools(path: str | os.PathLike) -> list[ToolRecord]:
    """Load a tool corpus file, preserving line order.

    Raises :class:`DuplicateToolError` on a repeated ``tool_id`` and
    :class:`CorpusFormatError` (with the line number) on a malformed line.
    """
    seen: dict[str, int] = {}
    tools = []
    for lineno, obj in _iter_json_lines(path):
        tool = parse_tool(obj, path=str(path), line=lineno)
        if tool.tool_id in seen:
            raise DuplicateToolError(
                f"duplicate tool_id {tool.tool_id!r} (first seen on line {seen[tool.tool_id]})",
                path=str(path),
                line=lineno,
            )
        seen[tool.tool_id] = lineno
        tools.append(tool)
    return tools


def load_tasks(path: str | os.PathLike) -> list[Task]:
    return [parse_task(obj, path=str(path), line=lineno) for lineno, obj in _iter_json_lines(path)]


def _write_lines(path: str | os.PathLike, rows: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=False))
            fh.write("\n")


def save_tools(tools: Iterable[ToolRecord], path: str | os.PathLike) -> None:
    _write_lines(path, (t.to_dict() for t in tools))


def save_tasks(tasks: Iterable[Task], path: str | os.PathLike) -> None:
    _write_lines(path, (t.to_dict() for t in tasks))


def validate(corpus: Sequence[ToolRecord], tasks: Sequence[Task]) -> ValidationReport:
    """Collect every consistency violation between a corpus and its tasks.

    Lists are sorted by id so the report does not depend on input order.
    """
    counts = Counter(t.tool_id for t in corpus)
    known = set(counts)
    dangling = sorted({(task.task_id, tid) for task in tasks for tid in task.relevant_tool_ids if tid not in known})
    return ValidationReport(
        duplicate_tool_ids=sorted(tid for tid, n in counts.items() if n > 1),
        empty_descriptions=sorted({t.tool_id for t in corpus if not t.description.strip()}),
        dangling_labels=dangling,
        empty_queries=sorted({t.task_id for t in tasks if not t.query.strip()}),
    )


def count_tokens(text: str | None) -> int:
    return len(text.split()) if text else 0


def _mean(values: list[int]) -> float:
    return math.fsum(values) / len(values) if values else 0.0


def stats(corpus: Sequence[ToolRecord], tasks: Sequence[Task]) -> CorpusStats:
    tools_per_category = {c.value: 0 for c in SUBSET_ORDER}
    for t in corpus:
        tools_per_category[t.category.value] += 1
    tasks_per_subset = {c.value: 0 for c in SUBSET_ORDER}
    for t in tasks:
        tasks_per_subset[t.subset.value] += 1
    # instruction average is over tasks that carry one
    instructions = [count_tokens(t.instruction) for t in tasks if t.instruction is not None]
    return CorpusStats(
        n_tools=len(corpus),
        n_tasks=len(tasks),
        tools_per_category=tools_per_category,
        tasks_per_subset=tasks_per_subset,
        avg_query_tokens=_mean([count_tokens(t.query) for t in tasks]),
        avg_instruction_tokens=_mean(instructions),
        avg_description_tokens=_mean([count_tokens(t.description) for t in corpus]),
    )


# --- ToolRet conversion -----------------------------------------------------

def _maybe_json(value):
    if isinstance(value, str):
        s = value.strip()
        if s[:1] in "{[":
            try:
                return json.loads(s)
            except json.JSONDecodeError:
                return value
    return value


def _as_text(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    return json.dumps(value, ensure_ascii=False, sort_keys=True)


def convert_toolret_tool(raw: dict, category: str | None = None) -> ToolRecord:
    """Map one raw ToolRet tool row to a :class:`ToolRecord`.

    The raw row's ``documentation`` may be a JSON string or object; name,
    description and parameter schema are read from it when present.
    """
    doc = _maybe_json(raw.get("documentation"))
    if not isinstance(doc, dict):
        doc = {"description": _as_text(doc)} if doc else {}
    tool_id = _as_text(raw.get("id", raw.get("tool_id")))
    if not tool_id:
        raise CorpusFormatError("raw tool row without 'id'")
    name = _as_text(doc.get("name") or raw.get("name") or tool_id)
    return ToolRecord(
        tool_id=tool_id,
        name=name,
        description=_as_text(doc.get("description") or raw.get("description")),
        category=Category.parse(category or raw.get("category")),
        domain=_as_text(doc.get("category") or raw.get("domain")),
        input_schema=_as_text(doc.get("parameters") or doc.get("arguments") or raw.get("input_schema")),
        output_schema=_as_text(doc.get("response") or doc.get("returns") or raw.get("output_schema")),
    )


def convert_toolret_task(raw: dict, subset: str | None = None) -> Task:
    """Map one raw ToolRet query row to a :class:`Task`.

    Labels come from ``labels`` (list of ``{"id", "relevance"}`` objects or
    plain ids, possibly JSON-encoded); entries with relevance ``<= 0`` are skipped.
    """
    labels = _maybe_json(raw.get("labels", raw.get("relevant_tool_ids")))
    ids: list[str] = []
    for item in labels or []:
        if isinstance(item, dict):
            if float(item.get("relevance", 1) or 0) <= 0:
                continue
            ids.append(_as_text(item.get("id")))
        else:
            ids.append(_as_text(item))
    task_id = _as_text(raw.get("id", raw.get("task_id")))
    instruction = raw.get("instruction")
    return Task(
        task_id=task_id,
        query=_as_text(raw.get("query")),
        instruction=None if instruction is None else _as_text(instruction),
        relevant_tool_ids=tuple(dict.fromkeys(i for i in ids if i)),
        subset=Category.parse(subset or raw.get("category") or raw.get("subset")),
    )


def _read_raw_rows(path: str | os.PathLike) -> list[dict]:
    p = Path(path)
    text = p.read_text(encoding="utf-8")
    if text.lstrip().startswith("["):
        rows = json.loads(text)
    else:
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
    return rows


def convert_toolret(
    tool_files: Sequence[str | os.PathLike],
    task_files: Sequence[str | os.PathLike],
    out_dir: str | os.PathLike,
) -> tuple[Path, Path]:
    """Convert raw ToolRet downloads into ``tools.jsonl`` and ``tasks.jsonl``.

    The subset of each file is inferred from its name (``web``, ``code`` or
    ``custom`` substring) unless rows carry a ``category`` field themselves.
    Duplicate tool ids across files keep the first occurrence.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tools: dict[str, ToolRecord] = {}
    for f in tool_files:
        hint = _subset_hint(f)
        for row in _read_raw_rows(f):
            tool = convert_toolret_tool(row, category=row.get("category") or hint)
            tools.setdefault(tool.tool_id, tool)
    tasks: list[Task] = []
    for f in task_files:
        hint = _subset_hint(f)
        for row in _read_raw_rows(f):
            try:
                tasks.append(convert_toolret_task(row, subset=row.get("category") or hint))
            except ValueError as exc:
                raise CorpusFormatError(str(exc), path=str(f)) from None
    tools_path, tasks_path = out / "tools.jsonl", out / "tasks.jsonl"
    save_tools(tools.values(), tools_path)
    save_tasks(tasks, tasks_path)
    return tools_path, tasks_path


def _subset_hint(path: str | os.PathLike) -> str | None:
    name = Path(path).name.lower()
    for key in ("web", "code", "custom"):
        if key in name:
            return key
    return None
