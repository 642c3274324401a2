import json
import socket

import pytest

from toolrank.corpus import Category, Task, ToolRecord

# Filled by test_acceptance.py; printed at the end of the session.
ACCEPTANCE_RESULTS: dict[str, str] = {}

SMALL_TOOLS = [
    ToolRecord("resize_image_tool", "resize_image_tool", "Resize an image to a new width and height.", Category.WEB),
    ToolRecord("crop_photo_tool", "crop_photo_tool", "Crop a photo to a rectangle.", Category.WEB),
    ToolRecord("weather_lookup", "weather_lookup", "Current weather forecast for a city.", Category.WEB),
    ToolRecord("translate_text", "translate_text", "Translate text between languages.", Category.CODE),
    ToolRecord("send_email", "send_email", "Send an email message to a recipient.", Category.CODE),
    ToolRecord("compress_archive", "compress_archive", "Compress files into a zip archive.", Category.CUSTOM),
    ToolRecord("currency_convert", "currency_convert", "Convert an amount between currencies.", Category.CUSTOM),
    ToolRecord("calendar_event", "calendar_event", "Create a calendar event with a date.", Category.CUSTOM),
]

SMALL_TASKS = [
    Task("t1", "make this picture smaller", ("resize_image_tool",), "Resize the image.", Category.WEB),
    Task("t2", "what is the weather in Paris", ("weather_lookup",), None, Category.WEB),
    Task("t3", "translate hello into French", ("translate_text",), "Use the translate text tool.", Category.CODE),
    Task("t4", "zip these files and email them", ("compress_archive", "send_email"), None, Category.CUSTOM),
]


@pytest.fixture
def small_tools():
    return list(SMALL_TOOLS)


@pytest.fixture
def small_tasks():
    return list(SMALL_TASKS)


@pytest.fixture
def unused_port():
    """A local port with nothing listening on it."""
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write((row if isinstance(row, str) else json.dumps(row)) + "\n")
    return path


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    rep = outcome.get_result()
    name = marker.args[0]
    if rep.skipped:
        ACCEPTANCE_RESULTS[name] = "SKIP"
    elif rep.failed:
        ACCEPTANCE_RESULTS[name] = "FAIL"
    elif rep.when == "call":
        ACCEPTANCE_RESULTS.setdefault(name, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in ACCEPTANCE_RESULTS.items():
        terminalreporter.write_line(f"{status:<4}  {name}")
