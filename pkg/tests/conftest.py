import pytest
from hypothesis import settings

from ictoken.tracker import Tracker
from ictoken.wallet import Wallet

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


@pytest.fixture
def tracker():
    return Tracker(capacity=8)


@pytest.fixture
def make_wallet(tracker):
    """Factory: seeded, enrolled wallets attached to the fixture tracker."""
    def make(label, role="fab", enroll=True, backend=None):
        w = Wallet.create(role, seed=f"test:{label}", tracker=backend or tracker)
        if enroll:
            w.enroll()
        return w
    return make


@pytest.fixture(scope="session")
def fuzz_world():
    from fuzz_world import build_world
    return build_world()


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import VERDICTS
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[number])
