from __future__ import annotations

from pathlib import Path

import pytest

from umr.datamodel import load_benchmark
from umr.synth import MockVlm, SynthConfig, emit_benchmark, generate_world

PROMPT_DIR = Path(__file__).resolve().parents[1] / "docs" / "prompts"


@pytest.fixture(scope="session")
def prompt_dir() -> Path:
    return PROMPT_DIR


@pytest.fixture(scope="session")
def small_bench_dir(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("bench")
    emit_benchmark(generate_world(SynthConfig(n_entities=30, seed=11)), out)
    return out


@pytest.fixture(scope="session")
def small_bench(small_bench_dir):
    return load_benchmark(small_bench_dir)


@pytest.fixture
def small_mock(small_bench_dir) -> MockVlm:
    return MockVlm.from_benchmark(small_bench_dir)


# acceptance criteria report one line each at the end of the run
ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance_line():
    def record(number: int, name: str, passed: bool, detail: str = "") -> None:
        status = "PASS" if passed else "FAIL"
        ACCEPTANCE[number] = f"[{status}] criterion {number}: {name}" + (f" ({detail})" if detail else "")
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
