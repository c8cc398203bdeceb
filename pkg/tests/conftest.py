import sys


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion that ran in this session."""
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(results, key=lambda s: int(s[2:])):
        ok, detail = results[name]
        terminalreporter.write_line(f"{name}: {'PASS' if ok else 'FAIL'}  {detail}")
