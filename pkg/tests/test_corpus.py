import json

import pytest
from conftest import write_jsonl

from toolrank.corpus import (
    Category,
    Task,
    ToolRecord,
    convert_toolret,
    convert_toolret_task,
    convert_toolret_tool,
    load_tasks,
    load_tools,
    save_tasks,
    save_tools,
    stats,
    validate,
)
from toolrank.errors import CorpusFormatError, DuplicateToolError


def tool_row(i, **kw):
    row = {"tool_id": f"t{i}", "name": f"tool {i}", "description": "does things", "category": "web"}
    row.update(kw)
    return row


def test_load_three_lines(tmp_path):
    p = write_jsonl(tmp_path / "tools.jsonl", [tool_row(i) for i in range(3)])
    tools = load_tools(p)
    assert [t.tool_id for t in tools] == ["t0", "t1", "t2"]
    assert all(t.category is Category.WEB for t in tools)


def test_missing_tool_id_names_line(tmp_path):
    rows = [tool_row(0), {"name": "nameless"}, tool_row(2)]
    p = write_jsonl(tmp_path / "tools.jsonl", rows)
    with pytest.raises(CorpusFormatError) as ei:
        load_tools(p)
    assert ei.value.line == 2
    assert ":2:" in str(ei.value)
    assert "tool_id" in str(ei.value)


def test_invalid_json_names_line(tmp_path):
    p = write_jsonl(tmp_path / "tools.jsonl", [tool_row(0), "{not json"])
    with pytest.raises(CorpusFormatError) as ei:
        load_tools(p)
    assert ei.value.line == 2


def test_duplicate_tool_id_rejected(tmp_path):
    p = write_jsonl(tmp_path / "tools.jsonl", [tool_row(0), tool_row(0)])
    with pytest.raises(DuplicateToolError):
        load_tools(p)


def test_unknown_field_rejected(tmp_path):
    p = write_jsonl(tmp_path / "tools.jsonl", [tool_row(0, colour="red")])
    with pytest.raises(CorpusFormatError, match="colour"):
        load_tools(p)


def test_empty_label_list_rejected(tmp_path):
    p = write_jsonl(tmp_path / "tasks.jsonl", [{"task_id": "q1", "query": "x", "relevant_tool_ids": []}])
    with pytest.raises(CorpusFormatError) as ei:
        load_tasks(p)
    assert ei.value.line == 1


def test_task_constructor_invariants():
    with pytest.raises(ValueError):
        Task("q", "", ("a",))
    with pytest.raises(ValueError):
        Task("q", "x", ())


def test_category_aliases():
    assert Category.parse("Web API") is Category.WEB
    assert Category.parse("code function") is Category.CODE
    assert Category.parse("customized app") is Category.CUSTOM
    assert Category.parse(None) is Category.OTHER
    assert Category.parse("whatever") is Category.OTHER


def test_validate_reports_dangling_and_duplicates():
    tools = [ToolRecord("a", "a", "x"), ToolRecord("a", "a2", "y"), ToolRecord("b", "b", "")]
    tasks = [Task("q1", "find", ("a", "zzz")), Task("q2", "   ", ("b",))]
    rep = validate(tools, tasks)
    assert not rep.ok
    assert rep.duplicate_tool_ids == ["a"]
    assert rep.dangling_labels == [("q1", "zzz")]
    assert rep.empty_descriptions == ["b"]
    assert rep.empty_queries == ["q2"]
    assert any("zzz" in line for line in rep.lines())


def test_validate_clean(small_tools, small_tasks):
    assert validate(small_tools, small_tasks).ok


def test_stats_token_averages():
    tools = [ToolRecord("a", "a", "one two three four", Category.CODE)]
    tasks = [Task("q", "one two three", ("a",), subset=Category.CODE)]
    s = stats(tools, tasks)
    assert s.avg_description_tokens == 4
    assert s.avg_query_tokens == 3
    assert s.tools_per_category["Code"] == 1
    assert s.tasks_per_subset["Code"] == 1
    assert s.avg_instruction_tokens == 0


def test_stats_empty_tasks():
    s = stats([ToolRecord("a", "a", "x")], [])
    assert s.avg_query_tokens == 0
    assert s.n_tasks == 0


def test_stats_instruction_average_over_instructed_tasks():
    tasks = [Task("q1", "x", ("a",), "one two"), Task("q2", "y", ("a",))]
    assert stats([], tasks).avg_instruction_tokens == 2


def test_round_trip(tmp_path, small_tools, small_tasks):
    save_tools(small_tools, tmp_path / "tools.jsonl")
    save_tasks(small_tasks, tmp_path / "tasks.jsonl")
    assert load_tools(tmp_path / "tools.jsonl") == small_tools
    assert load_tasks(tmp_path / "tasks.jsonl") == small_tasks


def test_instruction_absent_vs_empty(tmp_path):
    tasks = [Task("q1", "x", ("a",)), Task("q2", "y", ("a",), "")]
    save_tasks(tasks, tmp_path / "t.jsonl")
    rows = [json.loads(l) for l in (tmp_path / "t.jsonl").read_text().splitlines()]
    assert "instruction" not in rows[0]
    assert rows[1]["instruction"] == ""
    assert load_tasks(tmp_path / "t.jsonl") == tasks


def test_convert_toolret_rows():
    raw_tool = {
        "id": "weather_api_1",
        "documentation": json.dumps({"name": "get_weather", "description": "Weather lookup", "parameters": {"city": "str"}}),
    }
    t = convert_toolret_tool(raw_tool, category="web")
    assert (t.tool_id, t.name, t.description, t.category) == ("weather_api_1", "get_weather", "Weather lookup", Category.WEB)
    assert json.loads(t.input_schema) == {"city": "str"}

    raw_task = {
        "id": "q7",
        "query": "weather in Oslo",
        "instruction": "Retrieve a web API.",
        "labels": json.dumps([{"id": "weather_api_1", "relevance": 1}, {"id": "other", "relevance": 0}]),
    }
    task = convert_toolret_task(raw_task, subset="web")
    assert task.relevant_tool_ids == ("weather_api_1",)
    assert task.instruction == "Retrieve a web API."
    assert task.subset is Category.WEB


def test_convert_toolret_files(tmp_path):
    write_jsonl(tmp_path / "code_tools.jsonl", [{"id": "f1", "documentation": "sorts a list"}])
    write_jsonl(tmp_path / "code_queries.jsonl", [{"id": "q1", "query": "sort numbers", "labels": ["f1"]}])
    tools_path, tasks_path = convert_toolret([tmp_path / "code_tools.jsonl"], [tmp_path / "code_queries.jsonl"], tmp_path / "out")
    tools, tasks = load_tools(tools_path), load_tasks(tasks_path)
    assert tools[0].category is Category.CODE and tools[0].description == "sorts a list"
    assert tasks[0].subset is Category.CODE
    assert validate(tools, tasks).ok
