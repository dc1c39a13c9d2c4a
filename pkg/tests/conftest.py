import re


def pytest_terminal_summary(terminalreporter):
    try:
        import test_acceptance
    except ImportError:
        return
    lines = list(test_acceptance.VERDICTS)
    seen = {int(re.search(r"criterion (\d+)", ln).group(1)) for ln in lines}
    # criteria whose test errored before reaching a verdict
    for rep in terminalreporter.stats.get("failed", []) + terminalreporter.stats.get("error", []):
        m = re.search(r"test_criterion_(\d+)_(\w+)", rep.nodeid)
        if m and int(m.group(1)) not in seen:
            msg = str(rep.longrepr).strip().splitlines()[-1]
            lines.append(f"FAIL criterion {m.group(1)} {m.group(2)} :: {msg}")
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(re.search(r"criterion (\d+)", s).group(1))):
            terminalreporter.write_line(line)
