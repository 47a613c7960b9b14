import math

import numpy as np
import pytest

from srcvqkd.gaussian import ChannelParams, ProtocolParams

# table-top demonstration point: V_A=34, V_R=900, twin reference pulses
TABLETOP = dict(T=1.0, eta=0.8, epsilon=0.01, V_el=0.01)


@pytest.fixture
def tabletop_channel():
    return ChannelParams(**TABLETOP)


@pytest.fixture
def tabletop_protocol():
    return ProtocolParams(V_A=34.0, V_R=900.0, delta_R=0, beta=0.95, pulse_rate=250e3)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def rel(a, b):
    return abs(a - b) / abs(b)


def drift_f_theta(f_dt: float, protocol: ProtocolParams) -> float:
    """Bandwidth giving the requested ``f_theta * dt_round``."""
    return f_dt / protocol.dt_round


__all__ = ["TABLETOP", "rel", "drift_f_theta", "math"]


# --- acceptance reporting ------------------------------------------------------

_ACCEPTANCE_KEY = pytest.StashKey[list]()


class AcceptanceRecorder:
    def __init__(self, sink: list):
        self._sink = sink

    def record(self, number: int, ok: bool, detail: str) -> None:
        line = f"ACCEPTANCE {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        self._sink.append(line)
        print(line)


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance(request):
    return AcceptanceRecorder(request.config.stash[_ACCEPTANCE_KEY])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
