"""Shipped labeler suites and synthetic evaluation fixtures."""

from importlib import resources
from pathlib import Path

from ..data import ClassSpace, load_dataset
from ..prompts import LabelerSuite, load_suite

CLASS_SPACES = {
    "youtube": ClassSpace(("HAM", "SPAM"), positive_index=1),
    "sms": ClassSpace(("HAM", "SPAM"), positive_index=1),
    "spouse": ClassSpace(("NOT_SPOUSE", "SPOUSE"), positive_index=1),
}


def fixture_path(name: str) -> Path:
    path = resources.files(__package__) / name
    return Path(str(path))


def load_fixture_suite(task: str, zero_shot: bool = False) -> LabelerSuite:
    """Load a shipped suite: youtube, sms, or spouse, optionally zero-shot."""
    suffix = ".zeroshot.labelers.json" if zero_shot else ".labelers.json"
    return load_suite(fixture_path(task + suffix), CLASS_SPACES[task])


__all__ = ["CLASS_SPACES", "fixture_path", "load_fixture_suite", "load_dataset"]
