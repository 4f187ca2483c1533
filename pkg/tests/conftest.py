import re
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from homogenize_lab.cli import shipped_config  # noqa: E402
from homogenize_lab.config import load_config  # noqa: E402
from homogenize_lab.pipeline import STAGES, Runner  # noqa: E402

_CRITERIA = {}


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    """Run a shipped config once per (name, workers) and hand back its output dir."""
    cache = {}

    def get(name, workers=1):
        key = (name, workers)
        if key not in cache:
            out = tmp_path_factory.mktemp(f"{name}_w{workers}")
            cfg = load_config(shipped_config(f"{name}.toml"))
            Runner(cfg, out, workers).run(STAGES)
            cache[key] = out
        return cache[key]

    return get


def pytest_runtest_logreport(report):
    m = re.search(r"test_criterion_(\d+)", report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.when == "call" or report.failed or (report.skipped and report.when == "setup"):
        prev = _CRITERIA.get(n, "PASS")
        _CRITERIA[n] = "FAIL" if (report.failed or prev == "FAIL") else ("SKIP" if report.skipped else prev)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        terminalreporter.write_line(f"CRITERION {n}: {_CRITERIA[n]}")
