"""Neutral-host small cells billed through smart contracts on a simulated ledger,
plus the RSS coverage engine used to size the benefit of small SCPs."""

__version__ = "0.1.0"

from .contracts import CellContract, Ecgi, MasterContract, TrafficReport
from .coverage import ChannelModel, Deployment, RSSGrid, Site, compare_scenarios, restricted_cdf, rss_map
from .ledger import Block, Call, EventRecord, Ledger, Transaction
from .agents import SimScenario, SimTrace, run_scenario, scp_verify

__all__ = [
    "Block", "Call", "CellContract", "ChannelModel", "Deployment", "Ecgi", "EventRecord",
    "Ledger", "MasterContract", "RSSGrid", "SimScenario", "SimTrace", "Site",
    "TrafficReport", "Transaction", "compare_scenarios", "restricted_cdf", "rss_map",
    "run_scenario", "scp_verify",
]
