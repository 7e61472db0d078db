"""A monitoring app that inflates its byte counts, and how the provider notices.

Run:  python demos/05_dishonest_oracle.py
"""

from neutralhost import agents as A

mnos = [A.MnoSpec("op", "27201", 500_000, 200_000)]
scps = [A.ScpSpec("cafe", [A.CellSpec("cafe-cell", 42, 1, ["op"])])]
ues = [
    A.UeSpec("ue-honest", "op", 2_000, [(0, "cafe-cell"), (60, A.MACRO)]),
    A.UeSpec("ue-greedy", "op", 2_000, [(10, "cafe-cell"), (70, A.MACRO)], report_scale=1.05),
]
scenario = A.SimScenario(mnos, scps, ues, end_tick=100, reconciliation_tolerance_bytes=1024)
trace = A.run_scenario(scenario)

(cid,) = trace.cell_contracts.values()
result = trace.reconciliation[cid]
for check in result.checks:
    print(f"{check.ue:10s} measured {check.measured:>7d} reported {check.reported:>7d} -> {check.verdict}")

# The operator reacts to the flagged session with a penalty on the provider's credit.
sim = A.Simulator(A.SimScenario(mnos, scps, ues, end_tick=100,
                                infractions=[A.InfractionSpec(99, "op", "cafe-cell", 100)]))
penalised = sim.run()
row = penalised.accounting[0]
print(f"after a 100-unit penalty: credited {row['credited']}, penalties {row['penalties']}, "
      f"withdrawn {row['withdrawn']}")
