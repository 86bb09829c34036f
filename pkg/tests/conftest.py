"""Shared pytest plumbing.

The acceptance tests register one line per criterion in _ACCEPTANCE;
the terminal summary prints them as a block so a plain `pytest -v` run
ends with an explicit pass/fail line for every criterion.
"""

_ACCEPTANCE = []


def record_acceptance(num: int, description: str, ok: bool, detail: str = ""):
    tail = f" ({detail})" if detail else ""
    _ACCEPTANCE.append(
        f"ACCEPTANCE {num:2d} {'PASS' if ok else 'FAIL'}: {description}{tail}")
    assert ok, f"acceptance criterion {num} failed: {description}{tail}"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(_ACCEPTANCE):
        terminalreporter.write_line(line)
