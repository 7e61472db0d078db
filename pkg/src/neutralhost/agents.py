"""
Discrete-event simulation of MNOs, SCPs and UEs driving the contracts.

The simulator is schedule driven: every UE carries an explicit list of
``(tick, target)`` attachments where ``target`` is a small-cell id, ``"macro"``
or ``"off"``.  A UE's monitoring service looks the serving cell up in its home
operator's master contract on attach and, on leaving a metered cell, sends a
single traffic report signed with the credential its MNO issued.

Actions scheduled for the same tick run in the order MNO < SCP < UE, then by
actor id.  Blocks are sealed every ``block_interval`` ticks after that tick's
actions.  Setup (master deployment, registrations, deposits, oracle
authorisation) happens in three blocks sealed at tick 0 before the main loop;
SCPs settle by withdrawing every contract with credit after the final block.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import random
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import jsonschema

from . import contracts as C
from .contracts import Ecgi, TrafficReport
from .errors import ScenarioError, SessionError
from .ledger import Ledger, Transaction, canonical_json, sha256_hex

SCHEMA_VERSION = 1
MACRO = "macro"
OFF = "off"
PRIORITY = {"mno": 0, "scp": 1, "ue": 2}
BILLING_MODE_ALIASES = {
    "per_byte": C.PER_BYTE, "per-byte": C.PER_BYTE, "PerByte": C.PER_BYTE,
    "per_attachment_time": C.PER_ATTACHMENT_TIME,
    "per-attachment-time": C.PER_ATTACHMENT_TIME,
    "PerAttachmentTime": C.PER_ATTACHMENT_TIME,
}


# -- scenario -----------------------------------------------------------------

@dataclass
class MnoSpec:
    id: str
    plmn_id: str
    endowment: int
    deposit_per_contract: int = 0


@dataclass
class CellSpec:
    id: str
    cell_id: int
    price_per_kb: int
    hosts: list[str]
    rate_per_tick: int = 0
    spectrum_tag: str = "unlicensed"
    termination_threshold: int = C.DEFAULT_TERMINATION_THRESHOLD


@dataclass
class ScpSpec:
    id: str
    cells: list[CellSpec]
    endowment: int = 0


@dataclass
class UeSpec:
    id: str
    home_mno: str
    rate_bytes_per_tick: int
    schedule: list[tuple[int, str]]
    report_scale: float = 1.0   # >1 models an oracle inflating its readings
    endowment: int = 0


@dataclass
class InfractionSpec:
    tick: int
    mno: str
    cell: str
    penalty: int


@dataclass
class SimScenario:
    mnos: list[MnoSpec]
    scps: list[ScpSpec]
    ues: list[UeSpec]
    end_tick: int
    billing_mode: str = C.PER_BYTE
    block_interval: int = 10
    seed: int = 0
    reconciliation_tolerance_bytes: int = 1024
    fee: int = 0
    jitter: float = 0.0
    withdraw_every: int = 0
    infractions: list[InfractionSpec] = field(default_factory=list)

    def cells(self) -> dict[str, CellSpec]:
        return {cell.id: cell for scp in self.scps for cell in scp.cells}

    def cell_owner(self) -> dict[str, str]:
        return {cell.id: scp.id for scp in self.scps for cell in scp.cells}

    def to_dict(self) -> dict:
        d = asdict(self)
        for ue in d["ues"]:
            ue["schedule"] = [list(entry) for entry in ue["schedule"]]
        return {"schema_version": SCHEMA_VERSION, **d}


_INT = {"type": "integer", "minimum": 0}
_ID = {"type": "string", "minLength": 1}

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "mnos", "scps", "ues", "end_tick"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "seed": _INT,
        "end_tick": {"type": "integer", "minimum": 1},
        "billing_mode": {"enum": sorted(BILLING_MODE_ALIASES)},
        "block_interval": {"type": "integer", "minimum": 1},
        "reconciliation_tolerance_bytes": _INT,
        "fee": _INT,
        "jitter": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "withdraw_every": _INT,
        "mnos": {"type": "array", "items": {
            "type": "object", "additionalProperties": False,
            "required": ["id", "plmn_id", "endowment"],
            "properties": {
                "id": _ID,
                "plmn_id": {"type": "string", "pattern": r"^\d{5,6}$"},
                "endowment": _INT,
                "deposit_per_contract": _INT,
            }}},
        "scps": {"type": "array", "items": {
            "type": "object", "additionalProperties": False,
            "required": ["id", "cells"],
            "properties": {
                "id": _ID,
                "endowment": _INT,
                "cells": {"type": "array", "items": {
                    "type": "object", "additionalProperties": False,
                    "required": ["id", "cell_id", "price_per_kb", "hosts"],
                    "properties": {
                        "id": _ID,
                        "cell_id": {"type": "integer", "minimum": 0,
                                    "maximum": 2**C.CELL_ID_BITS - 1},
                        "price_per_kb": _INT,
                        "rate_per_tick": _INT,
                        "hosts": {"type": "array", "items": _ID},
                        "spectrum_tag": {"type": "string"},
                        "termination_threshold": {"type": "integer", "minimum": 1},
                    }}},
            }}},
        "ues": {"type": "array", "items": {
            "type": "object", "additionalProperties": False,
            "required": ["id", "home_mno", "rate_bytes_per_tick", "schedule"],
            "properties": {
                "id": _ID,
                "home_mno": _ID,
                "rate_bytes_per_tick": _INT,
                "report_scale": {"type": "number", "minimum": 0},
                "endowment": _INT,
                "schedule": {"type": "array", "items": {
                    "type": "array", "minItems": 2, "maxItems": 2,
                    "prefixItems": [_INT, _ID]}},
            }}},
        "infractions": {"type": "array", "items": {
            "type": "object", "additionalProperties": False,
            "required": ["tick", "mno", "cell", "penalty"],
            "properties": {"tick": _INT, "mno": _ID, "cell": _ID, "penalty": _INT}}},
    },
}


def _path(error_path) -> str:
    out = ""
    for part in error_path:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out or "<root>"


def validate_scenario(data) -> list[str]:
    """Every problem found in a scenario mapping; empty list when valid."""
    validator = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)
    problems = [f"{_path(e.absolute_path)}: {e.message}"
                for e in sorted(validator.iter_errors(data), key=lambda e: list(map(str, e.path)))]
    if problems:
        return problems

    def dupes(items, where):
        seen = set()
        for i, item in enumerate(items):
            if item["id"] in seen:
                problems.append(f"{where}[{i}].id: duplicate id {item['id']!r}")
            seen.add(item["id"])

    dupes(data["mnos"], "mnos")
    dupes(data["scps"], "scps")
    dupes(data["ues"], "ues")
    mnos = {m["id"] for m in data["mnos"]}
    plmns = defaultdict(list)
    for m in data["mnos"]:
        plmns[m["plmn_id"]].append(m["id"])
    for plmn, ids in plmns.items():
        if len(ids) > 1:
            problems.append(f"mnos: PLMN id {plmn} shared by {', '.join(ids)}")

    cells = {}
    cell_ids_per_mno = defaultdict(dict)
    for i, scp in enumerate(data["scps"]):
        for j, cell in enumerate(scp["cells"]):
            where = f"scps[{i}].cells[{j}]"
            if cell["id"] in cells or cell["id"] in (MACRO, OFF):
                problems.append(f"{where}.id: duplicate or reserved cell id {cell['id']!r}")
            cells[cell["id"]] = cell
            for host in cell["hosts"]:
                if host not in mnos:
                    problems.append(f"{where}.hosts: unknown MNO {host!r}")
                elif cell["cell_id"] in cell_ids_per_mno[host]:
                    problems.append(
                        f"{where}.cell_id: {cell['cell_id']} already used for MNO {host!r} "
                        f"by cell {cell_ids_per_mno[host][cell['cell_id']]!r}")
                else:
                    cell_ids_per_mno[host][cell["cell_id"]] = cell["id"]

    end = data["end_tick"]
    for i, ue in enumerate(data["ues"]):
        where = f"ues[{i}]"
        if ue["home_mno"] not in mnos:
            problems.append(f"{where}.home_mno: unknown MNO {ue['home_mno']!r}")
        last = None
        for k, (tick, target) in enumerate(ue["schedule"]):
            if target not in cells and target not in (MACRO, OFF):
                problems.append(f"{where}.schedule[{k}]: unknown cell {target!r}")
            if tick >= end:
                problems.append(f"{where}.schedule[{k}]: tick {tick} not before end_tick {end}")
            if last is not None and tick <= last:
                problems.append(f"{where}.schedule[{k}]: ticks must strictly increase")
            last = tick
    for i, inf in enumerate(data.get("infractions", [])):
        where = f"infractions[{i}]"
        if inf["mno"] not in mnos:
            problems.append(f"{where}.mno: unknown MNO {inf['mno']!r}")
        cell = cells.get(inf["cell"])
        if cell is None:
            problems.append(f"{where}.cell: unknown cell {inf['cell']!r}")
        elif inf["mno"] not in cell["hosts"]:
            problems.append(f"{where}: cell {inf['cell']!r} does not host {inf['mno']!r}")
        if inf["tick"] > end:
            problems.append(f"{where}.tick: after end_tick")
    return problems


def scenario_from_dict(data) -> SimScenario:
    problems = validate_scenario(data)
    if problems:
        raise ScenarioError(problems)
    return SimScenario(
        mnos=[MnoSpec(**m) for m in data["mnos"]],
        scps=[ScpSpec(id=s["id"], endowment=s.get("endowment", 0),
                      cells=[CellSpec(**{**c, "hosts": list(c["hosts"])}) for c in s["cells"]])
              for s in data["scps"]],
        ues=[UeSpec(**{**u, "schedule": [(int(t), str(x)) for t, x in u["schedule"]]})
             for u in data["ues"]],
        end_tick=data["end_tick"],
        billing_mode=BILLING_MODE_ALIASES[data.get("billing_mode", "per_byte")],
        block_interval=data.get("block_interval", 10),
        seed=data.get("seed", 0),
        reconciliation_tolerance_bytes=data.get("reconciliation_tolerance_bytes", 1024),
        fee=data.get("fee", 0),
        jitter=data.get("jitter", 0.0),
        withdraw_every=data.get("withdraw_every", 0),
        infractions=[InfractionSpec(**i) for i in data.get("infractions", [])],
    )


def read_scenario_file(path) -> dict:
    """Parse a JSON or YAML scenario file; raises ScenarioError with line info."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc.strerror or exc}") from None
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f"line {mark.line + 1}, column {mark.column + 1}: " if mark else ""
            raise ScenarioError(f"{path}: {where}{exc}") from None
    else:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ScenarioError(f"{path}: top level must be a mapping")
    return data


def load_scenario(path) -> SimScenario:
    return scenario_from_dict(read_scenario_file(path))


# -- trace --------------------------------------------------------------------

@dataclass(frozen=True)
class TraceEntry:
    tick: int
    actor: str
    action: str
    payload: dict

    def to_dict(self):
        return {"tick": self.tick, "actor": self.actor, "action": self.action,
                "payload": self.payload}


@dataclass
class UESession:
    ue: str
    cell: str                  # small-cell id, "macro"
    ecgi: Optional[Ecgi]
    contract: Optional[str]    # cell contract when metered
    start_tick: int
    end_tick: Optional[int] = None
    bytes: int = 0

    @property
    def metered(self) -> bool:
        return self.contract is not None


@dataclass
class SessionCheck:
    ue: str
    start_tick: int
    verdict: str
    measured: Optional[int]
    reported: Optional[int]

    @property
    def difference(self) -> int:
        return abs((self.measured or 0) - (self.reported or 0))


MATCH = "Match"
MISMATCH = "MismatchBeyondTolerance"
MISSING = "MissingReport"
UNEXPECTED = "UnexpectedReport"


@dataclass
class ReconciliationResult:
    cell: Optional[str]
    checks: list[SessionCheck]
    tolerance_bytes: int

    @property
    def discrepancy_bytes(self) -> int:
        return sum(c.difference for c in self.checks)

    @property
    def all_match(self) -> bool:
        return all(c.verdict == MATCH for c in self.checks)

    def flagged(self) -> list[SessionCheck]:
        return [c for c in self.checks if c.verdict != MATCH]

    def counts(self) -> dict[str, int]:
        out = {v: 0 for v in (MATCH, MISMATCH, MISSING, UNEXPECTED)}
        for c in self.checks:
            out[c.verdict] += 1
        return out


def scp_verify(cell, scp_measured, reported, tolerance_bytes: int) -> ReconciliationResult:
    """Compare the SCP's own session measurements against oracle reports.

    Both sides are keyed by ``(ue, start_tick)``.  ``scp_measured`` holds
    :class:`UESession` objects, ``reported`` holds :class:`TrafficReport`.
    """
    measured = {(s.ue, s.start_tick): s.bytes for s in scp_measured}
    claims = {(r.ue_id, r.session_start): r.bytes_served for r in reported}
    checks = []
    for key in sorted(set(measured) | set(claims)):
        m, r = measured.get(key), claims.get(key)
        if r is None:
            verdict = MISSING
        elif m is None:
            verdict = UNEXPECTED
        elif abs(m - r) <= tolerance_bytes:
            verdict = MATCH
        else:
            verdict = MISMATCH
        checks.append(SessionCheck(key[0], key[1], verdict, m, r))
    return ReconciliationResult(cell, checks, tolerance_bytes)


def reports_from_events(ledger: Ledger, cell) -> list[TrafficReport]:
    """Per-byte reports the chain actually credited for ``cell``."""
    out = []
    for ev in ledger.subscribe_events(cell, "TrafficCredited"):
        if ev.payload.get("mode") == C.PER_BYTE:
            out.append(TrafficReport.from_dict(ev.payload))
    return out


def attachment_time_billing(ledger: Ledger, cell, sender, credential, ue, duration, rate) -> int:
    """Credit ``duration * rate`` (escrow permitting) on an attachment-billed cell."""
    return C.report_attachment(ledger, cell, sender, credential, ue, duration, rate)


@dataclass
class SimTrace:
    entries: list[TraceEntry]
    snapshot: dict
    accounting: list[dict]
    accounts: dict[str, str]                  # actor id -> ledger account
    masters: dict[str, str]                   # MNO id -> master contract
    cell_contracts: dict[tuple[str, str], str]  # (cell id, MNO id) -> contract
    sessions: list[UESession]
    reconciliation: dict[str, ReconciliationResult]
    ledger: Ledger = field(repr=False, default=None)

    def jsonl_lines(self) -> list[str]:
        return [canonical_json(e.to_dict()) for e in self.entries]

    def digest(self) -> str:
        h = hashlib.sha256()
        for line in self.jsonl_lines():
            h.update(line.encode() + b"\n")
        h.update(canonical_json(self.snapshot).encode())
        return h.hexdigest()

    def accounting_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ACCOUNTING_COLUMNS)
        for row in self.accounting:
            w.writerow([row[c] for c in ACCOUNTING_COLUMNS])
        return buf.getvalue()


ACCOUNTING_COLUMNS = ("contract_id", "deposits", "credited", "withdrawn", "penalties", "refunds")


def credential_for(seed: int, mno: str, ue: str) -> str:
    return sha256_hex(f"oracle:{seed}:{mno}:{ue}")[:32]


class Simulator:
    """Runs one scenario against a fresh ledger."""

    def __init__(self, scenario: SimScenario):
        self.s = scenario
        self.ledger = Ledger(fee=scenario.fee)
        self.entries: list[TraceEntry] = []
        self.accounts: dict[str, str] = {}
        self.masters: dict[str, str] = {}
        self.cell_contracts: dict[tuple[str, str], str] = {}
        self.mnos = {m.id: m for m in scenario.mnos}
        self.ues = {u.id: u for u in scenario.ues}
        self.cells = scenario.cells()
        self.cell_owner = scenario.cell_owner()
        self.active: dict[str, UESession] = {}
        self.sessions: list[UESession] = []
        self.scp_measured: dict[str, list[UESession]] = defaultdict(list)
        self.now = 0

    # -- plumbing ---------------------------------------------------------

    def _log(self, actor, action, **payload):
        self.entries.append(TraceEntry(self.now, actor, action, payload))

    def _submit(self, actor, target, method, args=None):
        ledger = self.ledger
        tx_id = ledger.submit(self.accounts[actor], target, method, args)
        tx = ledger.pending[-1][1]
        self._log(actor, "submit", tx_id=tx_id, tx=tx.to_dict())
        return tx_id

    def _seal(self):
        block = self.ledger.seal_block(self.now)
        self._log("sequencer", "seal", height=block.height, digest=block.digest,
                  tx_count=len(block.transactions))
        return block

    def _result(self, tx_id):
        receipt = self.ledger.receipts[tx_id]
        return receipt.result if receipt.ok else None

    def ecgi_for(self, cell_id: str, mno_id: str) -> Ecgi:
        return Ecgi(self.mnos[mno_id].plmn_id, self.cells[cell_id].cell_id)

    # -- setup ------------------------------------------------------------

    def setup(self):
        s = self.s
        for m in sorted(s.mnos, key=lambda m: m.id):
            self._open_account(m.id, m.endowment)
        for scp in sorted(s.scps, key=lambda x: x.id):
            self._open_account(scp.id, scp.endowment)
        for ue in sorted(s.ues, key=lambda u: u.id):
            self._open_account(ue.id, ue.endowment)

        deploys = {m: self._submit(m, None, C.MasterContract.kind) for m in sorted(self.mnos)}
        self._seal()
        for m, tx_id in deploys.items():
            self.masters[m] = self._result(tx_id)

        regs = {}
        for m in sorted(self.mnos):
            if self.masters[m] is None:
                continue
            for scp in sorted(s.scps, key=lambda x: x.id):
                for cell in sorted(scp.cells, key=lambda c: c.id):
                    if m not in cell.hosts:
                        continue
                    regs[(cell.id, m)] = self._submit(m, self.masters[m], "register_provider", {
                        "scp": self.accounts[scp.id],
                        "ecgi": str(self.ecgi_for(cell.id, m)),
                        "price_per_kb": cell.price_per_kb,
                        "spectrum_tag": cell.spectrum_tag,
                        "billing_mode": s.billing_mode,
                        "termination_threshold": cell.termination_threshold,
                    })
        self._seal()
        for key, tx_id in regs.items():
            cid = self._result(tx_id)
            if cid is not None:
                self.cell_contracts[key] = cid

        home_ues = defaultdict(list)
        for ue in sorted(s.ues, key=lambda u: u.id):
            home_ues[ue.home_mno].append(ue.id)
        for (cell, m), cid in sorted(self.cell_contracts.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            if self.mnos[m].deposit_per_contract:
                self._submit(m, cid, "deposit_funds", {"amount": self.mnos[m].deposit_per_contract})
            for ue in home_ues[m]:
                self._submit(m, cid, "authorize_oracle", {"credential": credential_for(s.seed, m, ue)})
        self._seal()

    def _open_account(self, actor, balance):
        self.accounts[actor] = self.ledger.create_account(balance)
        self._log(actor, "create_account", account=self.accounts[actor], initial_balance=balance)

    # -- UE behaviour -----------------------------------------------------

    def ue_attach(self, ue_id: str, target, tick: int) -> UESession:
        """Attach ``ue_id`` to a small cell id, an :class:`Ecgi`, or ``"macro"``."""
        if ue_id in self.active:
            raise SessionError(f"{ue_id} is already attached to {self.active[ue_id].cell}")
        ue = self.ues[ue_id]
        self.now = tick
        ecgi, cell_name = None, MACRO
        if isinstance(target, Ecgi):
            ecgi = target
            cell_name = next((c for c in self.cells if ue.home_mno in self.cells[c].hosts
                              and self.ecgi_for(c, ue.home_mno) == ecgi), str(ecgi))
        elif target != MACRO:
            cell_name = target
            if ue.home_mno in self.cells[target].hosts:
                ecgi = self.ecgi_for(target, ue.home_mno)
        contract = None
        master = self.masters.get(ue.home_mno)
        if ecgi is not None and master is not None:
            contract = self.ledger.contract(master).lookup_cell(ecgi)
        session = UESession(ue_id, cell_name, ecgi, contract, tick)
        self.active[ue_id] = session
        self._log(ue_id, "attach", cell=cell_name, ecgi=str(ecgi) if ecgi else None,
                  contract=contract)
        return session

    def session_bytes(self, ue: UeSpec, start: int, end: int) -> int:
        base = ue.rate_bytes_per_tick * (end - start)
        if self.s.jitter:
            rng = random.Random(f"{self.s.seed}/{ue.id}/{start}")
            return int(round(base * rng.uniform(1 - self.s.jitter, 1 + self.s.jitter)))
        return base

    def ue_detach(self, ue_id: str, tick: int) -> Optional[TrafficReport]:
        if ue_id not in self.active:
            raise SessionError(f"{ue_id} has no open session")
        session = self.active.pop(ue_id)
        ue = self.ues[ue_id]
        self.now = tick
        session.end_tick = tick
        session.bytes = self.session_bytes(ue, session.start_tick, tick)
        self.sessions.append(session)
        self._log(ue_id, "detach", cell=session.cell, bytes=session.bytes,
                  start_tick=session.start_tick)
        if not session.metered:
            return None
        self.scp_measured[session.contract].append(session)
        credential = credential_for(self.s.seed, ue.home_mno, ue_id)
        if self.s.billing_mode == C.PER_ATTACHMENT_TIME:
            duration = self._scaled(tick - session.start_tick, ue.report_scale)
            self._submit(ue_id, session.contract, "report_attachment", {
                "credential": credential, "ue_id": ue_id, "duration": duration,
                "rate": self.cells[session.cell].rate_per_tick})
            return None
        report = TrafficReport(session.ecgi, ue_id, session.start_tick, tick,
                               self._scaled(session.bytes, ue.report_scale))
        self._submit(ue_id, session.contract, "report_traffic",
                     {"credential": credential, "report": report.to_dict()})
        return report

    @staticmethod
    def _scaled(amount: int, scale: float) -> int:
        return amount if scale == 1.0 else int(round(amount * scale))

    # -- SCP / MNO behaviour ----------------------------------------------

    def scp_withdraw_all(self, scp_id):
        for (cell, m), cid in sorted(self.cell_contracts.items()):
            if self.cell_owner[cell] == scp_id and self.ledger.contract(cid).accrued_credit > 0:
                self._submit(scp_id, cid, "withdraw")

    def verify_cell(self, cid) -> ReconciliationResult:
        return scp_verify(cid, self.scp_measured.get(cid, []),
                          reports_from_events(self.ledger, cid),
                          self.s.reconciliation_tolerance_bytes)

    # -- main loop --------------------------------------------------------

    def _agenda(self):
        agenda = defaultdict(list)
        for ue in self.s.ues:
            for tick, target in ue.schedule:
                agenda[tick].append((PRIORITY["ue"], ue.id, "move", target))
        for inf in self.s.infractions:
            agenda[inf.tick].append((PRIORITY["mno"], inf.mno, "infraction", inf))
        if self.s.withdraw_every:
            for tick in range(self.s.withdraw_every, self.s.end_tick, self.s.withdraw_every):
                for scp in self.s.scps:
                    agenda[tick].append((PRIORITY["scp"], scp.id, "withdraw", None))
        for tick in range(0, self.s.end_tick, self.s.block_interval):
            agenda.setdefault(tick, [])
        return agenda

    def _do(self, kind, actor, arg, tick):
        if kind == "move":
            if actor in self.active:
                self.ue_detach(actor, tick)
            if arg != OFF:
                self.ue_attach(actor, arg, tick)
        elif kind == "infraction":
            cid = self.cell_contracts.get((arg.cell, arg.mno))
            if cid is not None:
                self._submit(actor, cid, "record_infraction", {"penalty": arg.penalty})
        elif kind == "withdraw":
            self.scp_withdraw_all(actor)

    def run(self) -> SimTrace:
        self.setup()
        agenda = self._agenda()
        for tick in sorted(agenda):
            self.now = tick
            # stable sort keeps schedule order for identical (priority, actor)
            for priority, actor, kind, arg in sorted(agenda[tick], key=lambda a: (a[0], a[1])):
                self._do(kind, actor, arg, tick)
            if tick % self.s.block_interval == 0:
                self._seal()

        self.now = self.s.end_tick
        for ue_id in sorted(self.active):
            self.ue_detach(ue_id, self.s.end_tick)
        self._seal()
        for scp in sorted(self.s.scps, key=lambda x: x.id):
            self.scp_withdraw_all(scp.id)
        self._seal()

        reconciliation = {}
        for (cell, m), cid in sorted(self.cell_contracts.items()):
            result = self.verify_cell(cid)
            reconciliation[cid] = result
            self._log(self.cell_owner[cell], "verify", contract=cid, **result.counts(),
                      discrepancy_bytes=result.discrepancy_bytes)
        return SimTrace(
            entries=self.entries,
            snapshot=self.ledger.snapshot(),
            accounting=accounting_rows(self.ledger),
            accounts=dict(self.accounts),
            masters=dict(self.masters),
            cell_contracts=dict(self.cell_contracts),
            sessions=list(self.sessions),
            reconciliation=reconciliation,
            ledger=self.ledger,
        )


def run_scenario(scenario: SimScenario) -> SimTrace:
    return Simulator(scenario).run()


def accounting_rows(ledger: Ledger) -> list[dict]:
    rows = []
    for cid, contract in sorted(ledger.contracts.items()):
        if isinstance(contract, C.CellContract):
            rows.append({
                "contract_id": cid,
                "deposits": contract.total_deposits,
                "credited": contract.total_credited,
                "withdrawn": contract.total_withdrawn,
                "penalties": contract.total_penalties,
                "refunds": contract.total_refunds,
            })
    return rows


def replay_trace(entries, fee: int = 0) -> Ledger:
    """Rebuild a ledger from the account, submit and seal actions of a trace."""
    ledger = Ledger(fee=fee)
    for entry in entries:
        e = entry if isinstance(entry, dict) else entry.to_dict()
        p = e["payload"]
        if e["action"] == "create_account":
            got = ledger.create_account(p["initial_balance"])
            if got != p["account"]:
                raise ValueError(f"replay diverged: account {got} != {p['account']}")
        elif e["action"] == "submit":
            ledger.submit_transaction(Transaction.from_dict(p["tx"]))
        elif e["action"] == "seal":
            block = ledger.seal_block(e["tick"])
            if block.digest != p["digest"]:
                raise ValueError(f"replay diverged at height {block.height}")
    return ledger


# -- generators ----------------------------------------------------------------

def random_scenario(seed: int, max_mnos: int = 5, max_scps: int = 20, max_ues: int = 200,
                    end_tick: int = 500, fee: int = 0, billing_mode: str = C.PER_BYTE,
                    min_dwell: int = 1, dishonest_fraction: float = 0.0,
                    dishonest_scale: float = 1.05, infractions: int = 0,
                    min_rate: int = 0, max_rate: int = 5000) -> SimScenario:
    """A valid random scenario, reproducible from ``seed``."""
    rng = random.Random(seed)
    n_mno = rng.randint(1, max_mnos)
    mnos = [MnoSpec(f"mno-{i}", f"{27201 + i:05d}", rng.randint(0, 2_000_000),
                    rng.randint(0, 100_000)) for i in range(n_mno)]
    scps = []
    next_cell = 1
    for i in range(rng.randint(0, max_scps)):
        cells = []
        for j in range(rng.randint(1, 2)):
            hosts = sorted(rng.sample([m.id for m in mnos], rng.randint(1, n_mno)))
            cells.append(CellSpec(f"cell-{i}-{j}", next_cell, rng.randint(0, 5), hosts,
                                  rate_per_tick=rng.randint(0, 10),
                                  termination_threshold=rng.randint(1, 4)))
            next_cell += 1
        scps.append(ScpSpec(f"scp-{i}", cells, endowment=rng.randint(0, 1000) if fee else 0))
    targets = [c.id for s in scps for c in s.cells] + [MACRO, MACRO, OFF]
    ues = []
    for i in range(rng.randint(0, max_ues)):
        schedule, tick = [], rng.randint(0, 20)
        while tick < end_tick:
            schedule.append((tick, rng.choice(targets)))
            tick += rng.randint(min_dwell, max(min_dwell, end_tick // 4))
        scale = dishonest_scale if rng.random() < dishonest_fraction else 1.0
        ues.append(UeSpec(f"ue-{i:03d}", rng.choice(mnos).id, rng.randint(min_rate, max_rate),
                          schedule, report_scale=scale,
                          endowment=rng.randint(0, 1000) if fee else 0))
    cell_pairs = [(c.id, h) for s in scps for c in s.cells for h in c.hosts]
    infs = []
    for _ in range(infractions if cell_pairs else 0):
        cell, host = rng.choice(cell_pairs)
        infs.append(InfractionSpec(rng.randint(0, end_tick), host, cell, rng.randint(0, 5000)))
    return SimScenario(mnos, scps, ues, end_tick=end_tick, billing_mode=billing_mode,
                       block_interval=rng.randint(1, 20), seed=seed, fee=fee,
                       jitter=rng.choice([0.0, 0.1]), withdraw_every=rng.choice([0, 50]),
                       infractions=infs)


def two_operator_scenario(seed: int = 0) -> SimScenario:
    """Two SCPs (blue, red) each hosting two MNOs (lilac, green)."""
    mnos = [MnoSpec("green", "27202", 1_000_000, 100_000),
            MnoSpec("lilac", "27201", 1_000_000, 100_000)]
    scps = [ScpSpec("blue", [CellSpec("blue-cell", 101, 2, ["green", "lilac"])]),
            ScpSpec("red", [CellSpec("red-cell", 202, 3, ["green", "lilac"])])]
    ues = [
        UeSpec("ue-green", "green", 1000, [(0, "blue-cell"), (40, MACRO), (60, "red-cell")]),
        UeSpec("ue-lilac", "lilac", 2000, [(5, "red-cell"), (50, "blue-cell")]),
    ]
    return SimScenario(mnos, scps, ues, end_tick=100, seed=seed)


def schedule_from_grid(grid, track, cell_of_site: dict) -> list[tuple[int, str]]:
    """Strongest-cell association along a UE track.

    ``track`` is a sequence of ``(tick, x_m, y_m)``; ``cell_of_site`` maps
    coverage site ids to small-cell ids.  Sites not in the mapping (macros)
    become ``"macro"``.  Only changes of serving cell produce entries.
    """
    schedule = []
    for tick, x, y in track:
        site = grid.serving_at(x, y)
        target = cell_of_site.get(site, MACRO)
        if not schedule or schedule[-1][1] != target:
            schedule.append((int(tick), target))
    return schedule
