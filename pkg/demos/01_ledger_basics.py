"""Accounts, transfers, fees and blocks on the simulated ledger.

Run:  python demos/01_ledger_basics.py
"""

from neutralhost.errors import InsufficientFunds
from neutralhost.ledger import Ledger

ledger = Ledger(fee=1)
alice = ledger.create_account(1_000)
bob = ledger.create_account(0)
print(f"minted {ledger.minted} units into {alice} and {bob}")

# Transactions queue up; nothing happens until a block is sealed.
ledger.submit(alice, bob, value=250)
ledger.submit(alice, bob, value=100)
print("before sealing:", ledger.get_balance(alice), ledger.get_balance(bob))

block = ledger.seal_block(now=10)
print(f"block {block.height} digest {block.digest[:16]}... holds {len(block.transactions)} txs")
print("after sealing: ", ledger.get_balance(alice), ledger.get_balance(bob),
      "fee sink", ledger.fee_sink)

# transact() submits, seals and raises on failure.
try:
    ledger.transact(bob, alice, value=10_000)
except InsufficientFunds as exc:
    print("overspend rejected:", exc)
print("bob still paid the fee:", ledger.get_balance(bob))

for ev in ledger.subscribe_events():
    print("event", ev.block_height, ev.index_in_block, ev.name, ev.payload.get("code", ""))

assert ledger.supply_holds() and ledger.verify_chain()
print("supply invariant and chain links verified")
