"""One small cell, one operator, one provider: from registration to recovery.

Run:  python demos/02_cell_contract_lifecycle.py
"""

from neutralhost import contracts as C
from neutralhost.errors import AccessDenied
from neutralhost.ledger import Ledger

ledger = Ledger()
mno = ledger.create_account(100_000)
scp = ledger.create_account(0)
oracle = ledger.create_account(0)

master = C.deploy_master(ledger, mno)
ecgi = C.Ecgi("27201", 0x1A2B)
cell = C.register_provider(ledger, master, mno, scp, ecgi, price_per_kb=2,
                           spectrum_tag="unlicensed", termination_threshold=2)
print(f"{ecgi} -> {C.lookup_cell(ledger, master, ecgi)}")

C.deposit_funds(ledger, cell, mno, 5_000)
C.authorize_oracle(ledger, cell, mno, "ue-app-token")

# The monitoring app reports when the UE leaves the cell: 1.5 MB served.
report = C.TrafficReport(ecgi, "ue-1", 0, 120, 1_536_000)
print("credited", C.report_traffic(ledger, cell, oracle, "ue-app-token", report))

try:
    C.withdraw(ledger, cell, mno)
except AccessDenied as exc:
    print("MNO cannot withdraw:", exc)
print("SCP withdrew", C.withdraw(ledger, cell, scp))

# A large session exceeds what is left in escrow; only the funded part is credited.
big = C.TrafficReport(ecgi, "ue-2", 130, 400, 3_000_000)
C.report_traffic(ledger, cell, oracle, "ue-app-token", big)
last = ledger.events_for(cell, "TrafficCredited")[-1].payload
print(f"requested {last['requested']} credited {last['credited']} unfunded {last['unfunded']}")

# Topping up later does not retroactively pay the unfunded part.
C.deposit_funds(ledger, cell, mno, 4_000)
print("accrued after top-up:", ledger.contract(cell).accrued_credit)

# Two infractions hit the threshold and terminate the contract.
C.record_infraction(ledger, cell, mno, 500)
print("status after 2nd infraction:", C.record_infraction(ledger, cell, mno, 0))
print("MNO recovers residual escrow:", C.recover_funds(ledger, cell, mno))
print("SCP can still collect surviving credit:", C.withdraw(ledger, cell, scp))

contract = ledger.contract(cell)
print("totals", contract.snapshot()["totals"], "escrow", contract.escrow)
assert contract.conservation_holds() and ledger.supply_holds()
