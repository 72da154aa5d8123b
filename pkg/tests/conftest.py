import json

import pytest

from affectrl.emotion_wheel import default_wheel, load_wheel

SMALL_WHEEL = {
    "clusters": [
        {"id": "joy", "labels": ["happy", "joyful"], "parent": None},
        {"id": "anger", "labels": ["angry"], "parent": None},
    ],
    "synonyms": {"glad": "happy"},
}

# 3 clusters x 2 labels, for exhaustive enumeration.
TRI_WHEEL = {
    "clusters": [
        {"id": "joy", "labels": ["happy", "joyful"], "parent": None},
        {"id": "anger", "labels": ["angry", "furious"], "parent": None},
        {"id": "sadness", "labels": ["sad", "lonely"], "parent": None},
    ],
    "synonyms": {"glad": "happy"},
}


@pytest.fixture(scope="session")
def wheel():
    return default_wheel()


@pytest.fixture
def small_wheel():
    return load_wheel(json.dumps(SMALL_WHEEL))


@pytest.fixture
def tri_wheel():
    return load_wheel(json.dumps(TRI_WHEEL))


_ACCEPTANCE = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(tag, text): acceptance criterion")


def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("acceptance")
    if marker is None or call.when != "call":
        return
    tag, text = marker.args
    _ACCEPTANCE.append((tag, text, call.excinfo is None))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for tag, text, ok in sorted(_ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {tag}: {text}")
