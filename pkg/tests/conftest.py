import numpy as np
import pytest

from parslda import corpus as C
from parslda import synthgen

_CRITERIA: list[tuple[str, str, str]] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the outcome is read back from the test report."""
    record = {}

    def _set(label, detail=""):
        record["label"] = label
        record["detail"] = detail

    yield _set
    if "label" in record:
        rep = getattr(request.node, "rep_call", None)
        outcome = "SKIP"
        if rep is not None:
            outcome = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        _CRITERIA.append((outcome, record["label"], record["detail"]))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call" or (rep.when == "setup" and rep.skipped):
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for outcome, label, detail in _CRITERIA:
        terminalreporter.write_line(f"[{outcome}] {label}" + (f" -- {detail}" if detail else ""))


@pytest.fixture(scope="session")
def default_instance():
    return synthgen.default_instance(seed=0)


@pytest.fixture(scope="session")
def default_split(default_instance):
    corpus, truth = default_instance
    train, test = C.train_test_split(corpus, 400, seed=0)
    return train, test, truth


@pytest.fixture
def tiny_corpus():
    # w0 w1 | w1 w2 w2 | w0
    vocab = C.Vocabulary(["a", "b", "c"])
    docs = (
        C.Document("doc0", np.array([0, 1]), 1.0),
        C.Document("doc1", np.array([1, 2, 2]), -1.0),
        C.Document("doc2", np.array([0]), 0.5),
    )
    return C.Corpus(vocab, docs)
