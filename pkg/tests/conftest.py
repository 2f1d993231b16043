import pytest

from catwig import render


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Full 400-image corpus rendered at 32x32 (fast stand-in for the 512 one)."""
    out = tmp_path_factory.mktemp("corpus32")
    return render.generate_corpus(out, resolution=32, seed=7, workers=1)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """40 images (n = 1..10 per class) at 16x16 for quick training runs."""
    out = tmp_path_factory.mktemp("corpus16")
    return render.generate_corpus(out, resolution=16, n_range=range(1, 11), seed=3, workers=1)


_VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion and assert on it."""

    def record(label: str, ok: bool, detail: str = "") -> None:
        line = f"[{'PASS' if ok else 'FAIL'}] {label}" + (f": {detail}" if detail else "")
        _VERDICTS.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
