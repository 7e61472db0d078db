import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neutralhost import contracts as C
from neutralhost.errors import (
    AccessDenied,
    AlreadyRegistered,
    BadArguments,
    ContractTerminated,
    EcgiMismatch,
    InsufficientFunds,
    NotTerminated,
    WrongBillingMode,
    ZeroCredit,
)

from conftest import Cell
from oracles import billing_oracle, kb_count_brute_force


# -- identifiers -------------------------------------------------------------

def test_ecgi_round_trip():
    e = C.Ecgi("27201", 2**28 - 1)
    assert C.Ecgi.parse(str(e)) == e


@pytest.mark.parametrize("plmn, cell", [("2720", 1), ("27201x", 1), ("27201", 2**28), ("27201", -1)])
def test_ecgi_rejects_bad_parts(plmn, cell):
    with pytest.raises(ValueError):
        C.Ecgi(plmn, cell)


def test_traffic_report_invariants():
    e = C.Ecgi("27201", 1)
    with pytest.raises(ValueError):
        C.TrafficReport(e, "u", 5, 4, 0)
    with pytest.raises(ValueError):
        C.TrafficReport(e, "u", 0, 4, -1)


@pytest.mark.parametrize("n", [0, 1, 1023, 1024, 1025, 2048, 1_536_000, 10**6 + 7])
def test_kb_rounding_matches_brute_force(n):
    assert C.kb_charge(n, 1) == kb_count_brute_force(n)


# -- registry -----------------------------------------------------------------

def test_register_fresh_ecgi(cell):
    master = cell.ledger.contract(cell.master)
    before = len(master.registry)
    cid = C.register_provider(cell.ledger, cell.master, cell.mno, cell.scp, C.Ecgi("27201", 9), 1)
    assert len(master.registry) == before + 1
    assert C.lookup_cell(cell.ledger, cell.master, C.Ecgi("27201", 9)) == cid
    (ev,) = cell.ledger.events_for(cell.master, "ContractSpawned")[-1:]
    assert ev.payload["cell_contract"] == cid


def test_register_duplicate_ecgi(cell):
    with pytest.raises(AlreadyRegistered):
        C.register_provider(cell.ledger, cell.master, cell.mno, cell.scp, cell.ecgi, 1)


def test_register_by_non_owner(cell):
    before = cell.state()
    with pytest.raises(AccessDenied):
        C.register_provider(cell.ledger, cell.master, cell.scp, cell.scp, C.Ecgi("27201", 77), 1)
    assert cell.state() == before


def test_register_validates_arguments(cell):
    with pytest.raises(BadArguments):
        C.register_provider(cell.ledger, cell.master, cell.mno, "acct-4242", C.Ecgi("27201", 5), 1)
    with pytest.raises(BadArguments):
        C.register_provider(cell.ledger, cell.master, cell.mno, cell.scp, C.Ecgi("27201", 5), 1,
                            billing_mode="flat")


def test_lookup_unregistered(cell):
    assert C.lookup_cell(cell.ledger, cell.master, C.Ecgi("27201", 4242)) is None


def test_lookup_registered(cell):
    assert C.lookup_cell(cell.ledger, cell.master, cell.ecgi) == cell.cell


def test_lookup_after_terminate_still_resolves(cell):
    C.terminate(cell.ledger, cell.cell, cell.mno)
    cid = C.lookup_cell(cell.ledger, cell.master, cell.ecgi)
    assert cid == cell.cell
    assert cell.ledger.contract(cid).status == C.TERMINATED


# -- deposits -------------------------------------------------------------------

def test_deposit_fresh_contract(cell):
    assert C.deposit_funds(cell.ledger, cell.cell, cell.mno, 5_000) == 5_000
    assert cell.ledger.get_balance(cell.mno) == 95_000
    assert cell.ledger.contract_balance(cell.cell) == 5_000


def test_deposit_by_scp_denied(cell):
    with pytest.raises(AccessDenied):
        C.deposit_funds(cell.ledger, cell.cell, cell.scp, 10)


def test_deposit_exceeding_balance(cell):
    before = cell.state()
    with pytest.raises(InsufficientFunds):
        C.deposit_funds(cell.ledger, cell.cell, cell.mno, 100_001)
    assert cell.state() == before


def test_deposit_after_terminate(cell):
    C.terminate(cell.ledger, cell.cell, cell.mno)
    with pytest.raises(ContractTerminated):
        C.deposit_funds(cell.ledger, cell.cell, cell.mno, 1)


# -- oracle authorisation ----------------------------------------------------------

def test_authorized_token_accepted(cell):
    C.deposit_funds(cell.ledger, cell.cell, cell.mno, 100)
    C.authorize_oracle(cell.ledger, cell.cell, cell.mno, "fresh")
    r = C.TrafficReport(cell.ecgi, "u", 0, 1, 1)
    assert C.report_traffic(cell.ledger, cell.cell, cell.stranger, "fresh", r) == 2


def test_scp_cannot_authorize(cell):
    with pytest.raises(AccessDenied):
        C.authorize_oracle(cell.ledger, cell.cell, cell.scp, "mine")


def test_duplicate_authorize_idempotent(cell):
    before = cell.contract.snapshot()
    C.authorize_oracle(cell.ledger, cell.cell, cell.mno, cell.token)
    assert cell.contract.snapshot() == before


# -- traffic reports --------------------------------------------------------------------

def test_report_credits_ceil_kb_times_price(cell):
    C.deposit_funds(cell.ledger, cell.cell, cell.mno, 5_000)
    expected = kb_count_brute_force(1_536_000) * 2
    assert expected == 3_000
    assert cell.report(1_536_000) == expected
    assert cell.contract.accrued_credit == 3_000


def test_zero_byte_report_still_fires_event(cell):
    assert cell.report(0) == 0
    (ev,) = cell.ledger.events_for(cell.cell, "TrafficCredited")
    assert (ev.payload["requested"], ev.payload["credited"]) == (0, 0)


def test_report_clamped_to_escrow(cell):
    C.deposit_funds(cell.ledger, cell.cell, cell.mno, 1_000)
    _, credits = billing_oracle([("deposit", 1_000), ("report", 1_536_000)], 2)
    assert cell.report(1_536_000) == credits[0] == 1_000
    (ev,) = cell.ledger.events_for(cell.cell, "TrafficCredited")
    assert (ev.payload["requested"], ev.payload["credited"], ev.payload["unfunded"]) == (3_000, 1_000, 2_000)


def test_unfunded_credit_is_not_paid_after_later_deposit(cell):
    C.deposit_funds(cell.ledger, cell.cell, cell.mno, 1_000)
    cell.report(1_536_000)
    C.deposit_funds(cell.ledger, cell.cell, cell.mno, 10_000)
    assert cell.contract.accrued_credit == 1_000


def test_report_with_unknown_credential(cell):
    r = C.TrafficReport(cell.ecgi, "u", 0, 1, 1)
    with pytest.raises(AccessDenied):
        C.report_traffic(cell.ledger, cell.cell, cell.oracle, "forged", r)


def test_report_for_other_cell(cell):
    r = C.TrafficReport(C.Ecgi("27201", 1), "u", 0, 1, 1)
    with pytest.raises(EcgiMismatch):
        C.report_traffic(cell.ledger, cell.cell, cell.oracle, cell.token, r)


def test_report_after_terminate(cell):
    C.terminate(cell.ledger, cell.cell, cell.mno)
    with pytest.raises(ContractTerminated):
        cell.report(10)


def test_malformed_report_payload(cell):
    with pytest.raises(BadArguments):
        cell.ledger.transact(cell.oracle, cell.cell, "report_traffic",
                             {"credential": cell.token, "report": {"ecgi": str(cell.ecgi)}})


def test_attachment_report_on_per_byte_contract(cell):
    with pytest.raises(WrongBillingMode):
        C.report_attachment(cell.ledger, cell.cell, cell.oracle, cell.token, "u", 10, 5)


# -- withdrawals ---------------------------------------------------------------------------

def test_withdraw_accrued(cell):
    C.deposit_funds(cell.ledger, cell.cell, cell.mno, 5_000)
    cell.report(1_536_000)
    before = cell.ledger.get_balance(cell.scp)
    assert C.withdraw(cell.ledger, cell.cell, cell.scp) == 3_000
    assert cell.ledger.get_balance(cell.scp) == before + 3_000
    assert cell.contract.accrued_credit == 0
    assert cell.contract.escrow == 2_000


def test_withdraw_fresh_contract(cell):
    with pytest.raises(ZeroCredit):
        C.withdraw(cell.ledger, cell.cell, cell.scp)


def test_withdraw_by_mno(cell):
    with pytest.raises(AccessDenied):
        C.withdraw(cell.ledger, cell.cell, cell.mno)


# -- penalties -------------------------------------------------------------------------------

def test_penalty_deducted_from_credit(cell):
    C.deposit_funds(cell.ledger, cell.cell, cell.mno, 5_000)
    cell.report(1_536_000)
    mno_before = cell.ledger.get_balance(cell.mno)
    assert C.record_infraction(cell.ledger, cell.cell, cell.mno, 500) == C.ACTIVE
    assert cell.contract.accrued_credit == 3_000 - 500
    assert cell.contract.infractions == 1
    assert cell.ledger.get_balance(cell.mno) == mno_before + 500


def test_penalty_never_drives_credit_negative(cell):
    C.deposit_funds(cell.ledger, cell.cell, cell.mno, 5_000)
    cell.report(100 * 1024 // 2)   # 50 KB at 2/KB = 100
    C.record_infraction(cell.ledger, cell.cell, cell.mno, 500)
    assert cell.contract.accrued_credit == 0


def test_third_infraction_terminates():
    c = Cell(threshold=3)
    statuses = [C.record_infraction(c.ledger, c.cell, c.mno, 0) for _ in range(3)]
    assert statuses == [C.ACTIVE, C.ACTIVE, C.TERMINATED]


def test_infraction_by_scp(cell):
    with pytest.raises(AccessDenied):
        C.record_infraction(cell.ledger, cell.cell, cell.scp, 1)


# -- termination and recovery ------------------------------------------------------------------

def test_terminate_refunds_uncommitted_escrow(cell):
    C.deposit_funds(cell.ledger, cell.cell, cell.mno, 5_000)
    cell.report(1_536_000)
    mno_before = cell.ledger.get_balance(cell.mno)
    assert C.terminate(cell.ledger, cell.cell, cell.mno) == 5_000 - 3_000
    assert cell.ledger.get_balance(cell.mno) == mno_before + 2_000
    assert C.withdraw(cell.ledger, cell.cell, cell.scp) == 3_000
    assert cell.contract.escrow == 0


def test_terminate_twice_is_noop(cell):
    C.deposit_funds(cell.ledger, cell.cell, cell.mno, 10)
    C.terminate(cell.ledger, cell.cell, cell.mno)
    before = cell.state()
    assert C.terminate(cell.ledger, cell.cell, cell.mno) == 0
    assert cell.state() == before
    assert len(cell.ledger.events_for(cell.cell, "Terminated")) == 1


def test_recover_with_nothing_left(cell):
    C.terminate(cell.ledger, cell.cell, cell.mno)
    before = cell.state()
    assert C.recover_funds(cell.ledger, cell.cell, cell.mno) == 0
    assert cell.state() == before


def test_recover_residual_after_automatic_termination():
    c = Cell(threshold=1)
    C.deposit_funds(c.ledger, c.cell, c.mno, 5_000)
    c.report(1_536_000)                                # credit 3_000
    C.record_infraction(c.ledger, c.cell, c.mno, 1_000)  # credit 2_000, escrow 4_000, terminated
    assert c.contract.status == C.TERMINATED
    mno_before = c.ledger.get_balance(c.mno)
    # residual is escrow minus surviving credit
    assert C.recover_funds(c.ledger, c.cell, c.mno) == 4_000 - 2_000
    assert c.ledger.get_balance(c.mno) == mno_before + 2_000
    assert c.contract.frozen
    assert C.withdraw(c.ledger, c.cell, c.scp) == 2_000


def test_forced_recovery_takes_stranded_credit():
    c = Cell()
    C.deposit_funds(c.ledger, c.cell, c.mno, 5_000)
    c.report(1_536_000)
    C.terminate(c.ledger, c.cell, c.mno)
    assert C.recover_funds(c.ledger, c.cell, c.mno, force=True) == 3_000
    assert c.contract.escrow == 0
    with pytest.raises(ZeroCredit):
        C.withdraw(c.ledger, c.cell, c.scp)


def test_recover_on_active_contract(cell):
    with pytest.raises(NotTerminated):
        C.recover_funds(cell.ledger, cell.cell, cell.mno)


def test_snapshot_export_is_stable_json(cell):
    text = json.dumps(cell.contract.snapshot())
    assert list(json.loads(text)) == [
        "kind", "master", "mno", "scp", "ecgi", "price_per_kb", "spectrum_tag", "billing_mode",
        "status", "frozen", "escrow", "accrued_credit", "infractions", "termination_threshold",
        "oracle_credentials", "totals"]
    assert text == json.dumps(cell.contract.snapshot())


# -- attachment-time billing ---------------------------------------------------------------------

def test_attachment_billing_contract():
    c = Cell(billing_mode=C.PER_ATTACHMENT_TIME)
    C.deposit_funds(c.ledger, c.cell, c.mno, 1_000)
    assert C.report_attachment(c.ledger, c.cell, c.oracle, c.token, "u", 100, 5) == 500
    with pytest.raises(WrongBillingMode):
        c.report(1024)


# -- properties -------------------------------------------------------------------------------------

_ops = st.lists(st.one_of(
    st.tuples(st.just("deposit"), st.integers(0, 4_000)),
    st.tuples(st.just("report"), st.integers(0, 3_000_000)),
    st.tuples(st.just("withdraw")),
    st.tuples(st.just("infraction"), st.integers(0, 2_000)),
    st.tuples(st.just("terminate")),
    st.tuples(st.just("recover"), st.booleans()),
), max_size=25)


def _apply(c, op):
    L = c.ledger
    kind = op[0]
    if kind == "deposit":
        L.submit(c.mno, c.cell, "deposit_funds", {"amount": op[1]})
    elif kind == "report":
        r = C.TrafficReport(c.ecgi, "u", 0, 1, op[1])
        L.submit(c.oracle, c.cell, "report_traffic", {"credential": c.token, "report": r.to_dict()})
    elif kind == "withdraw":
        L.submit(c.scp, c.cell, "withdraw")
    elif kind == "infraction":
        L.submit(c.mno, c.cell, "record_infraction", {"penalty": op[1]})
    elif kind == "terminate":
        L.submit(c.mno, c.cell, "terminate")
    else:
        L.submit(c.mno, c.cell, "recover_funds", {"force": op[1]})
    return L.seal_block(L.chain[-1].timestamp)


@settings(max_examples=150, deadline=None)
@given(_ops, st.integers(1, 4))
def test_per_contract_conservation_and_solvency(ops, threshold):
    c = Cell(mno_balance=20_000, threshold=threshold)
    for op in ops:
        terminated_before = c.contract.status == C.TERMINATED
        block = _apply(c, op)
        k = c.contract
        assert k.conservation_holds()
        assert 0 <= k.accrued_credit <= k.escrow
        assert k.escrow == c.ledger.contract_balance(c.cell)
        assert c.ledger.supply_holds()
        if terminated_before:
            assert k.status == C.TERMINATED
            if block.receipts[0].ok and op[0] not in ("withdraw", "recover", "terminate"):
                pytest.fail(f"{op[0]} succeeded on a terminated contract")


@settings(max_examples=150, deadline=None)
@given(st.lists(st.one_of(
    st.tuples(st.just("deposit"), st.integers(0, 5_000)),
    st.tuples(st.just("report"), st.integers(0, 2_000_000)),
    st.tuples(st.just("withdraw")),
), max_size=30), st.integers(0, 7))
def test_billing_matches_sequential_oracle(events, price):
    c = Cell(price=price, mno_balance=10**9)
    credited = 0
    for ev in events:
        _apply(c, ev)
        receipt = c.ledger.chain[-1].receipts[0]
        if ev[0] == "report":
            credited += receipt.result
    oracle_total, _ = billing_oracle(events, price)
    assert credited == oracle_total == c.contract.total_credited
