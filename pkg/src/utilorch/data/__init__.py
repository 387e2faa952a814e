"""Bundled offline data: a 10-question HotpotQA-format fixture and a demo script."""

from __future__ import annotations

from importlib import resources
from pathlib import Path


def fixture_path() -> Path:
    return Path(str(resources.files(__name__) / "hotpot_fixture.json"))


def demo_script_path() -> Path:
    return Path(str(resources.files(__name__) / "demo_script.yaml"))
