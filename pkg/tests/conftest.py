import struct

import numpy as np
import pytest


def riff_bytes(samples, sample_rate=16000, channels=1, bits=16, fmt_tag=1):
    """Hand-assemble a RIFF/WAVE file byte by byte."""
    data = struct.pack(f"<{len(samples)}h", *samples) if bits == 16 else bytes(samples)
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", fmt_tag, channels, sample_rate, sample_rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(data)) + data
    return b"RIFF" + struct.pack("<I", len(body)) + body


@pytest.fixture
def wav_file(tmp_path):
    def make(samples, name="x.wav", **kw):
        path = tmp_path / name
        path.write_bytes(riff_bytes(samples, **kw))
        return path
    return make


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting -------------------------------------------------------

_CRITERIA = {}


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
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "notes": []})
    if report.failed or report.skipped:
        entry["ok"] = False
        entry["notes"].append(item.name)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        line = f"criterion {number:>2}: {'PASS' if e['ok'] else 'FAIL'}  {e['title']}"
        if e["notes"]:
            line += f"  (failed: {', '.join(e['notes'])})"
        terminalreporter.write_line(line)
