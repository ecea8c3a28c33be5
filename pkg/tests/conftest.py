import pytest

from peekpop.corpus import SocialGraph


@pytest.fixture
def follow_graph():
    """u_i is node i: u2->u1, u3->u1, u3->u2, u4->u3, u5->u1, u5->u4, u6->u5."""
    edges = [(2, 1), (3, 1), (3, 2), (4, 3), (5, 1), (5, 4), (6, 5)]
    src, dst = zip(*edges)
    return SocialGraph.from_edges(src, dst, 7)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
