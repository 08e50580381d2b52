import pytest

from hwgen.glyphs import bundled_font_path, load_hex_font

# (number, passed, text) rows filled in by test_acceptance.py
ACCEPTANCE: list[tuple[int, bool, str]] = []


@pytest.fixture(scope="session")
def table():
    return load_hex_font(bundled_font_path())


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number, passed, text in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d}: {text}")
