from importlib import resources

import pytest
from hypothesis import HealthCheck, settings

from medner.corpus import LabelScheme, read_pubtator, resolve_labels, to_sentences

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def toy_path():
    return resources.files("medner") / "data" / "toy_corpus.pubtator"


@pytest.fixture(scope="session")
def toy_docs(toy_path):
    return read_pubtator(toy_path)


@pytest.fixture(scope="session")
def toy_scheme(toy_docs):
    return LabelScheme.from_documents(toy_docs)


@pytest.fixture(scope="session")
def toy_sentences(toy_docs, toy_scheme):
    return [s for d in toy_docs for s in to_sentences(resolve_labels(d, toy_scheme))]


_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    number, title = marker
    if report.when == "call" or report.outcome != "passed":
        outcome = "SKIP" if report.skipped else "PASS" if report.passed else "FAIL"
        _criteria[number] = (title, outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        outcome.get_result().criterion = marker.args


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, outcome = _criteria[number]
        terminalreporter.write_line(f"criterion {number}: {outcome:4}  {title}")
