"""Shared pytest plumbing.

test_acceptance.py appends every CheckResult it produces to
ACCEPTANCE_RESULTS; the summary hook below turns that into one pass/fail
line per criterion at the very end of the run, after the usual pytest
tally.
"""

ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for r in sorted(ACCEPTANCE_RESULTS, key=lambda r: r.cid):
        terminalreporter.write_line(
            f"[c{r.cid:02d}] {r.label:<5} {r.name}: {r.detail} "
            f"({r.seconds:.1f}s)")
