"""Two operators sharing two providers' small cells, driven by UE schedules.

Run:  python demos/03_multi_operator_sim.py
The same scenario ships as demos/data/two_operators.json for the CLI.
"""

from neutralhost.agents import run_scenario, two_operator_scenario

trace = run_scenario(two_operator_scenario(seed=7))

print("master contracts:", trace.masters)
for (cell, mno), cid in sorted(trace.cell_contracts.items()):
    k = trace.ledger.contract(cid)
    print(f"  {cell:9s} hosting {mno:5s} -> {cid}  ecgi {k.ecgi}  price {k.price_per_kb}/KB")

print("\nsessions:")
for s in trace.sessions:
    tag = "metered" if s.metered else "unmetered"
    print(f"  {s.ue:8s} {s.cell:9s} ticks {s.start_tick:3d}-{s.end_tick:3d} {s.bytes:>8d} B  {tag}")

print("\naccounting:")
print(trace.accounting_csv(), end="")

print("\nverification by each provider:")
for cid, result in trace.reconciliation.items():
    print(f"  {cid}: {result.counts()} discrepancy {result.discrepancy_bytes} B")

print(f"\n{len(trace.entries)} trace entries, digest {trace.digest()[:16]}...")
