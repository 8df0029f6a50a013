from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pgot.codec import to_fixed
from pgot.crypto import SigningKey
from pgot.policy import PolicyLog, default_bundle
from pgot.round import Participant, Protocol, RoundInputs

settings.register_profile(
    "pgot",
    deadline=None,
    max_examples=50,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("pgot")

PASSING = {"toxicity": 0.10, "bias": 0.10, "refusal": 0.10}


def people(tag: str, n: int, stake: str = "20.0") -> list[Participant]:
    return [Participant(SigningKey.from_seed(f"{tag}{i}".encode()), to_fixed(stake)) for i in range(n)]


def make_protocol(n: int = 20, dim: int = 32, seed: int = 0, bundle=None, validators: int = 9, **kw) -> Protocol:
    log = PolicyLog()
    log.install_genesis(bundle or default_bundle())
    return Protocol(people("c", n), people("v", validators, "100.0"), log, dim, seed=seed, **kw)


def honest_inputs(proto: Protocol, round_id: int, **kw) -> RoundInputs:
    rng = np.random.default_rng(1000 + round_id)
    base = dict(
        updates={pid: rng.normal(size=proto.dim) * 0.1 for pid in proto.contributors},
        candidate_scores=dict(PASSING),
        baseline_scores=dict(PASSING),
        escrows=[(bytes([i]) * 16, to_fixed("10.5")) for i in range(3)],
    )
    base.update(kw)
    return RoundInputs(**base)


@pytest.fixture
def protocol() -> Protocol:
    return make_protocol()


# -- acceptance criterion summary ---------------------------------------------

_CRITERIA: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and report.passed):
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, [title, True])
    entry[1] = entry[1] and report.passed


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {title}")
