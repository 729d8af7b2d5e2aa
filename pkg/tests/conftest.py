"""Shared fixtures."""

from __future__ import annotations

import pytest

from instances import path_instance, small_config
from jointcache.harness import build
from jointcache.utility import UtilityProfile


@pytest.fixture
def path_inst():
    return path_instance()


@pytest.fixture
def small_inst():
    return build(small_config())


@pytest.fixture
def log_profile():
    return lambda inst: UtilityProfile.uniform(inst.demands)


# -- acceptance summary --------------------------------------------------------

ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Return ``record(label, ok, detail)``; ``ok=None`` marks an informational line."""
    log = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(label, ok, detail=""):
        log.append((request.node.nodeid, label, ok, detail))
        return ok is None or bool(ok)
    return record


def pytest_terminal_summary(terminalreporter, config):
    log = config.stash.get(ACCEPTANCE, [])
    seen = {nodeid for nodeid, *_ in log}
    crashed = [r.nodeid for r in terminalreporter.stats.get("failed", [])
               if "test_acceptance" in r.nodeid and r.nodeid not in seen]
    if not log and not crashed:
        return
    terminalreporter.section("acceptance criteria")
    for _, label, ok, detail in log:
        tag = "INFO" if ok is None else "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"{tag}  {label}: {detail}")
    for nodeid in crashed:
        terminalreporter.write_line(f"FAIL  {nodeid}: raised before recording a result")
