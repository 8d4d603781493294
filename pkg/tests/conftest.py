import pytest

from anamnesis.corpus import AnnotatedPost, AttributeAnnotation, AttributeType, CharSpan, Post, SymptomAnnotation
from anamnesis.ontology import default_ontology


@pytest.fixture(scope="session")
def ontology():
    return default_ontology()


def make_post(post_id, text, symptoms=(), attributes=(), correct=False):
    """``symptoms``: ids or (id, [(start, end), ...]); ``attributes``: (symptom, type, start, end)."""
    syms = []
    for s in symptoms:
        sid, spans = (s, ()) if isinstance(s, str) else s
        syms.append(SymptomAnnotation(sid, tuple(CharSpan(a, b) for a, b in spans)))
    attrs = tuple(AttributeAnnotation(sid, AttributeType(t), CharSpan(a, b)) for sid, t, a, b in attributes)
    return AnnotatedPost(Post(post_id, text), tuple(syms), attrs, correct)


def find(text, needle):
    start = text.index(needle)
    return start, start + len(needle)


ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""

    def record(number: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
