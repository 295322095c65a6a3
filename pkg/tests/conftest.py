import numpy as np
import pytest

from kgalign.graph import KnowledgeGraphPair


def random_pair(rng, n1, n2, m1, m2, nrel=2):
    """Random pair with string names; entities only exist if they occur in a triple."""
    sides = []
    for tag, n, m in (("a", n1, m1), ("b", n2, m2)):
        triples = []
        for _ in range(m):
            h, t = rng.integers(0, n, size=2)
            triples.append((f"{tag}{h}", f"{tag}r{rng.integers(nrel)}", f"{tag}{t}"))
        sides.append(triples)
    return KnowledgeGraphPair.from_named_triples(*sides)


def write_tsv(path, rows):
    path.write_text("".join("\t".join(r) + "\n" for r in rows), encoding="utf-8")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    """Store a criterion verdict for the terminal summary and echo it."""
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def record_note(text):
    """Informational line in the acceptance summary; never gates anything."""
    line = f"[INFO] {text}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
