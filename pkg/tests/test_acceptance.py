"""The twelve acceptance criteria at their stated tolerances, on the default config.

Each criterion is one test; its PASS/FAIL line is printed straight to the
terminal. Run alone with ``pytest tests/test_acceptance.py -s``.
"""

import json

import pytest

from spide.cli import _line
from spide.filterlab import CRITERIA, ExperimentConfig, emit_results, run_suite


@pytest.fixture(scope="module")
def report(tmp_path_factory):
    cfg = ExperimentConfig(out=str(tmp_path_factory.mktemp("suite")))
    rep = run_suite(cfg)
    emit_results(rep, cfg.out)
    return rep


def test_every_criterion_reported(report):
    assert [c.name for c in report.criteria] == list(CRITERIA)
    data = json.loads(report.to_json())
    assert {"name", "anchor", "value", "tol", "pass", "detail"} <= set(data["criteria"][0])


@pytest.mark.parametrize("name", list(CRITERIA))
def test_criterion(report, name, capsys):
    c = next(c for c in report.criteria if c.name == name)
    with capsys.disabled():
        print("\n" + _line(c))
    assert c.passed, _line(c)
