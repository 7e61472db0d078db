"""How much do small cells lift received signal strength over a macro layer?

Run:  python demos/04_coverage_experiment.py [seed]
Compares macro only, macro plus the chain-tagged small cells, and macro plus
every small cell on a 1 x 1 km synthetic deployment at 5 m resolution.
"""

import sys

from neutralhost import coverage as cov

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
deployment = cov.generate_synthetic_deployment(5, 40, 0.3, seed=seed)
model = cov.ChannelModel(seed=seed)
grids = {name: cov.rss_map(d, model, 5.0)
         for name, d in cov.scenario_deployments(deployment).items()}

threshold = cov.CLOSEST_POINT_RSS_DBM
print(f"min distance clamp {model.min_distance_m:.2f} m, threshold {threshold} dBm")
for name, grid in grids.items():
    cdf = cov.restricted_cdf(grid, threshold)
    median = cdf.rss_dbm[cdf.cum_fraction.searchsorted(0.5)] if cdf.count else float("nan")
    print(f"{name:9s} {100 * cdf.fraction_below:5.1f}% of points below threshold, "
          f"median of those {median:7.2f} dBm")

chain = cov.compare_scenarios(grids["baseline"], grids["subset"], threshold)
every = cov.compare_scenarios(grids["baseline"], grids["all"], threshold)
for label, c in (("chain only", chain), ("all small", every)):
    print(f"{label:10s} mean gain {c.mean_gain_db:5.2f} dB, "
          f"{c.improved_point_count} points improved ({100 * c.improved_fraction:.1f}%)")
print(f"improved-point ratio all/chain: {every.improved_point_count / chain.improved_point_count:.2f}")
