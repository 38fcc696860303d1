import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

SRC = str(Path(__file__).resolve().parents[1] / "src")
if SRC not in sys.path:
    sys.path.insert(0, SRC)

from splamp.zoo import chain_spec, random_store  # noqa: E402


def run_cli(*args: str, cwd: str | None = None) -> subprocess.CompletedProcess:
    env = dict(os.environ)
    env["PYTHONPATH"] = SRC + os.pathsep + env.get("PYTHONPATH", "")
    return subprocess.run(
        [sys.executable, "-m", "splamp", *args],
        capture_output=True,
        text=True,
        env=env,
        cwd=cwd,
    )


@pytest.fixture
def tiny_chain():
    """conv(3->4) -> conv(4->2), 1x1 kernels, 1x1 spatial."""
    return chain_spec([4, 2], input_channels=3)


@pytest.fixture
def tiny_store(tiny_chain):
    return random_store(tiny_chain, seed=11)


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2) + "\n")
    return path
