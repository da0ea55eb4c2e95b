import pytest

from xbarlife import AcceleratorConfig, ToyEvaluator, build_encoder_stack

ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, ok: bool, detail: str) -> None:
    line = f"{criterion} {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def toy_evaluator():
    return ToyEvaluator(seed=0)


@pytest.fixture(scope="session")
def scaled_config():
    return AcceleratorConfig.scaled()


@pytest.fixture(scope="session")
def scaled_workload():
    return build_encoder_stack(2, d_model=32, d_ff=64, heads=2, seq_len=16)
