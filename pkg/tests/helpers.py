"""
Constants and helpers shared by the test suites.
"""

import json
from pathlib import Path
from typing import Dict, List

from showcaseflow.main import main

SMALL_FIXTURE = dict(users=12, businesses=6, reviews_per_user=3, pool_size=6, topics=4, dim=8)

PIPELINE = [
    ["distill"],
    ["select-train", "--epochs", "10"],
    ["select"],
    ["train", "--epochs", "2"],
    ["generate"],
    ["evaluate"],
]


def fixture_args(directory: Path, seed: int = 7, **sizes) -> List[str]:
    sizes = {**SMALL_FIXTURE, **sizes}
    args = ["fixture", "--out", str(directory), "--seed", str(seed)]
    for name, value in sizes.items():
        args += [f"--{name.replace('_', '-')}", str(value)]
    return args


def run_pipeline(directory: Path, seed: int = 7) -> Dict[str, int]:
    """Fabricate a fixture in `directory` and run every stage on it; returns exit codes."""
    codes = {"fixture": main(fixture_args(directory, seed))}
    config = str(directory / "config.toml")
    for command in PIPELINE:
        codes[command[0]] = main(command + ["--config", config])
    return codes


def read_json(path: Path):
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def read_json_lines(path: Path) -> List[dict]:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
