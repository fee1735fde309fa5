import sys
import time
from dataclasses import dataclass
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from wordrank.data import Dataset, generate_dataset  # noqa: E402
from wordrank.retrieval import EvalReport, evaluate  # noqa: E402
from wordrank.training import TrainConfig, TrainResult, train  # noqa: E402

DESK_SEEDS = (0, 1, 2)
DESK_MODES = ("join", "ap", "ndcg")


@dataclass
class DeskRun:
    result: TrainResult
    report: EvalReport
    seconds: float


class DeskRuns:
    """Trains desk-scale runs on first request and keeps them for the session."""

    def __init__(self):
        self.dataset: Dataset = generate_dataset(100, 20, (3, 8), 0.3, 7)
        self._runs: dict[tuple[str, int], DeskRun] = {}

    def get(self, mode: str, seed: int) -> DeskRun:
        key = (mode, seed)
        if key not in self._runs:
            t0 = time.perf_counter()
            # one evaluation at the end keeps the timing honest to training
            result = train(self.dataset, TrainConfig(mode=mode, seed=seed), evaluate_every=10**6)
            seconds = time.perf_counter() - t0
            self._runs[key] = DeskRun(result, evaluate(result.model, self.dataset), seconds)
        return self._runs[key]


@pytest.fixture(scope="session")
def desk():
    return DeskRuns()


_VERDICTS: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def check(label: str, ok: bool, detail: str = "") -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {label}" + (f"  [{detail}]" if detail else "")
        _VERDICTS.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
