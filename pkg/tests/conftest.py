import json
import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from xstance.corpus import Dataset, Origin, StanceLabel, TweetRecord  # noqa: E402

torch.set_num_threads(1)


def rec(id, text, label=StanceLabel.POSITIVE, lang="en", **kw):
    return TweetRecord(id=id, raw_text=text, lang=lang, label=label, **kw)


def write_jsonl(path: Path, rows) -> Path:
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


@pytest.fixture
def tiny_dataset():
    return Dataset("tiny", (
        rec("a", "vaccines work", StanceLabel.POSITIVE),
        rec("b", "vaccines are dangerous", StanceLabel.NEGATIVE),
        rec("c", "the clinic opens today", StanceLabel.NEUTRAL),
    ))


_CRITERIA = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_CRITERIA] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """Record one pass/fail line for an acceptance criterion, then assert it."""
    def record(number: int, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        request.config.stash[_CRITERIA].append(line)
        print(line)
        assert ok, line
    return record
