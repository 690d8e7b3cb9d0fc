"""Subprocess wrapper around the capeval CLI."""

from __future__ import annotations

import csv
import subprocess
from dataclasses import dataclass, field
from typing import Sequence


class EngineError(RuntimeError):
    """Nonzero engine exit; carries the CLI's one-line diagnostic."""

    def __init__(self, argv: Sequence[str], exit_code: int, diagnostic: str) -> None:
        super().__init__(f"{' '.join(argv)} exited {exit_code}: {diagnostic}")
        self.exit_code = exit_code
        self.diagnostic = diagnostic


@dataclass
class EngineResult:
    stdout: str
    outputs: dict[str, list[dict[str, str]]] = field(default_factory=dict)


def read_csv(path: str) -> list[dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as handle:
        return list(csv.DictReader(handle))


def run_engine(
    subcommand: str,
    flags: Sequence[str] = (),
    csv_outputs: Sequence[str] = (),
    binary: str = "capeval",
) -> EngineResult:
    """Invoke the engine CLI and parse the named CSV outputs.

    ``subcommand`` may contain spaces (e.g. ``"toy gen"``). The engine
    binary must be on PATH. Raises :class:`EngineError` on nonzero exit.
    """
    argv = [binary, *subcommand.split(), *flags]
    try:
        process = subprocess.run(argv, capture_output=True, text=True)
    except FileNotFoundError as exc:
        raise EngineError(argv, 127, f"engine binary not found: {binary}") from exc
    if process.returncode != 0:
        lines = [line for line in process.stderr.strip().splitlines() if line]
        diagnostic = lines[-1] if lines else "engine reported no diagnostic"
        raise EngineError(argv, process.returncode, diagnostic)
    return EngineResult(
        stdout=process.stdout,
        outputs={path: read_csv(path) for path in csv_outputs},
    )
