import sys

import pytest

from tokencurve.features import FeatureSpace
from tokencurve.models.data import build_examples
from tokencurve.workload import GeneratorConfig, generate


@pytest.fixture(scope="session")
def corpus():
    """Small seeded workload shared by model, eval and CLI tests."""
    return generate(GeneratorConfig(n_jobs=120, n_templates=40), seed=21)


@pytest.fixture(scope="session")
def space(corpus):
    return FeatureSpace.fit(corpus.jobs[:90])


@pytest.fixture(scope="session")
def examples(corpus, space):
    return build_examples(corpus.jobs[:90], space)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, text = results[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {text}")
