import pytest

from neutralhost import contracts as C
from neutralhost.ledger import Ledger

_acceptance = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        number, title = marker.args
        _acceptance.append((number, title, report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, outcome in sorted(_acceptance):
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"AC{number:<2} {verdict}  {title}")


class Cell:
    """A deployed master + cell contract with the usual cast of accounts."""

    def __init__(self, fee=0, mno_balance=100_000, price=2, threshold=3,
                 billing_mode=C.PER_BYTE):
        self.ledger = L = Ledger(fee=fee)
        self.mno = L.create_account(mno_balance)
        self.scp = L.create_account(1_000)
        self.oracle = L.create_account(1_000)
        self.stranger = L.create_account(1_000)
        self.token = "oracle-token"
        self.ecgi = C.Ecgi("27201", 0x1A2B)
        self.master = C.deploy_master(L, self.mno)
        self.cell = C.register_provider(L, self.master, self.mno, self.scp, self.ecgi, price,
                                        "GAA", billing_mode=billing_mode,
                                        termination_threshold=threshold)
        C.authorize_oracle(L, self.cell, self.mno, self.token)

    @property
    def contract(self):
        return self.ledger.contract(self.cell)

    def report(self, n_bytes, ue="ue-1", start=0, end=10):
        r = C.TrafficReport(self.ecgi, ue, start, end, n_bytes)
        return C.report_traffic(self.ledger, self.cell, self.oracle, self.token, r)

    def state(self):
        """Everything except chain height/digest, for bit-identical comparisons."""
        snap = self.ledger.snapshot()
        return {k: snap[k] for k in ("accounts", "contracts", "fee_sink", "minted")}


@pytest.fixture
def cell():
    return Cell()
