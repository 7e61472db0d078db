"""
Master registry and per-cell agreement contracts.

An MNO deploys one :class:`MasterContract`.  Registering a small cell under
it spawns a :class:`CellContract` holding the agreement with the SCP:
price, escrow funded by the MNO, credit accrued from oracle reports, and
the penalty / termination / recovery clauses.

All state changes go through ledger transactions.  The module-level helper
functions wrap :meth:`Ledger.transact` for scripts and tests that want a
call-and-return style.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from .errors import (
    AccessDenied,
    AlreadyRegistered,
    BadArguments,
    ContractTerminated,
    EcgiMismatch,
    NotTerminated,
    WrongBillingMode,
    ZeroCredit,
)
from .ledger import (
    MAX_CURRENCY,
    Contract,
    ExecutionContext,
    Ledger,
    register_contract,
)

KB = 1024
CELL_ID_BITS = 28
DEFAULT_TERMINATION_THRESHOLD = 3

ACTIVE = "Active"
TERMINATED = "Terminated"

PER_BYTE = "per_byte"
PER_ATTACHMENT_TIME = "per_attachment_time"
BILLING_MODES = (PER_BYTE, PER_ATTACHMENT_TIME)

_PLMN_RE = re.compile(r"^\d{5,6}$")


@dataclass(frozen=True, order=True)
class Ecgi:
    """E-UTRAN cell global identifier: PLMN id plus a 28-bit cell id."""

    plmn_id: str
    cell_id: int

    def __post_init__(self):
        if not isinstance(self.plmn_id, str) or not _PLMN_RE.match(self.plmn_id):
            raise ValueError(f"PLMN id must be 5 or 6 digits: {self.plmn_id!r}")
        if (not isinstance(self.cell_id, int) or isinstance(self.cell_id, bool)
                or not 0 <= self.cell_id < 2**CELL_ID_BITS):
            raise ValueError(f"cell id must fit in {CELL_ID_BITS} bits: {self.cell_id!r}")

    def __str__(self):
        return f"{self.plmn_id}-{self.cell_id:07x}"

    @classmethod
    def parse(cls, value) -> "Ecgi":
        if isinstance(value, Ecgi):
            return value
        if not isinstance(value, str) or "-" not in value:
            raise ValueError(f"not an ECGI string: {value!r}")
        plmn, cell = value.split("-", 1)
        return cls(plmn, int(cell, 16))


@dataclass(frozen=True)
class TrafficReport:
    ecgi: Ecgi
    ue_id: str
    session_start: int
    session_end: int
    bytes_served: int

    def __post_init__(self):
        if self.session_end < self.session_start:
            raise ValueError("session_end precedes session_start")
        if self.bytes_served < 0:
            raise ValueError("bytes_served must be non-negative")

    def to_dict(self) -> dict:
        return {"ecgi": str(self.ecgi), "ue_id": self.ue_id,
                "session_start": self.session_start, "session_end": self.session_end,
                "bytes_served": self.bytes_served}

    @classmethod
    def from_dict(cls, d) -> "TrafficReport":
        for key in ("session_start", "session_end", "bytes_served"):
            if not _is_int(d[key]):
                raise ValueError(f"{key} must be an integer")
        return cls(Ecgi.parse(d["ecgi"]), str(d["ue_id"]), d["session_start"],
                   d["session_end"], d["bytes_served"])


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _currency(name, x) -> int:
    if not _is_int(x) or not 0 <= x <= MAX_CURRENCY:
        raise BadArguments(f"{name} must be a non-negative integer amount: {x!r}")
    return x


def kb_charge(bytes_served: int, price_per_kb: int) -> int:
    """Charge for a report: started kilobytes times the per-KB price."""
    return -(-bytes_served // KB) * price_per_kb


@register_contract
class MasterContract(Contract):
    """Per-MNO registry mapping ECGIs to cell contract ids."""

    kind = "MasterContract"
    methods = frozenset({"register_provider"})

    def __init__(self, contract_id, creator):
        super().__init__(contract_id, creator)
        self.owner_mno = creator
        self.registry: dict[Ecgi, str] = {}

    def register_provider(self, ctx: ExecutionContext, scp, ecgi, price_per_kb,
                          spectrum_tag="", billing_mode=PER_BYTE,
                          termination_threshold=DEFAULT_TERMINATION_THRESHOLD):
        if ctx.sender != self.owner_mno:
            raise AccessDenied(f"{ctx.sender} does not own {self.contract_id}")
        ecgi = Ecgi.parse(ecgi)
        if ecgi in self.registry:
            raise AlreadyRegistered(f"{ecgi} already maps to {self.registry[ecgi]}")
        if scp not in ctx.ledger.accounts:
            raise BadArguments(f"SCP {scp!r} is not an account")
        _currency("price_per_kb", price_per_kb)
        if billing_mode not in BILLING_MODES:
            raise BadArguments(f"unknown billing mode {billing_mode!r}")
        if not _is_int(termination_threshold) or termination_threshold < 1:
            raise BadArguments("termination_threshold must be a positive integer")
        if not isinstance(spectrum_tag, str):
            raise BadArguments("spectrum_tag must be a string")
        cid = ctx.spawn(CellContract, mno=self.owner_mno, scp=scp, ecgi=str(ecgi),
                        price_per_kb=price_per_kb, spectrum_tag=spectrum_tag,
                        billing_mode=billing_mode,
                        termination_threshold=termination_threshold)
        self.registry[ecgi] = cid
        ctx.emit("ContractSpawned", ecgi=str(ecgi), cell_contract=cid, scp=scp,
                 price_per_kb=price_per_kb, billing_mode=billing_mode)
        return cid

    def lookup_cell(self, ecgi) -> Optional[str]:
        return self.registry.get(Ecgi.parse(ecgi))

    def snapshot(self) -> dict:
        return {
            "kind": self.kind,
            "owner_mno": self.owner_mno,
            "registry": {str(e): cid for e, cid in sorted(self.registry.items())},
        }


@register_contract
class CellContract(Contract):
    """One SCP/MNO agreement for a single cell."""

    kind = "CellContract"
    methods = frozenset({
        "deposit_funds", "authorize_oracle", "report_traffic", "report_attachment",
        "withdraw", "record_infraction", "terminate", "recover_funds",
    })

    def __init__(self, contract_id, creator, mno, scp, ecgi, price_per_kb, spectrum_tag="",
                 billing_mode=PER_BYTE, termination_threshold=DEFAULT_TERMINATION_THRESHOLD):
        super().__init__(contract_id, creator)
        self.master = creator
        self.mno = mno
        self.scp = scp
        self.ecgi = Ecgi.parse(ecgi)
        self.price_per_kb = price_per_kb
        self.spectrum_tag = spectrum_tag
        self.billing_mode = billing_mode
        self.termination_threshold = termination_threshold
        self.escrow = 0
        self.accrued_credit = 0
        self.oracle_credentials: set[str] = set()
        self.status = ACTIVE
        self.frozen = False
        self.infractions = 0
        # lifetime totals, for conservation checks and the accounting summary
        self.total_deposits = 0
        self.total_credited = 0
        self.total_unfunded = 0
        self.total_withdrawn = 0
        self.total_penalties = 0
        self.total_refunds = 0

    # -- guards -----------------------------------------------------------

    def _only(self, ctx, who, role):
        if ctx.sender != who:
            raise AccessDenied(f"{ctx.sender} is not the {role} of {self.contract_id}")

    def _only_oracle(self, credential):
        if not isinstance(credential, str) or credential not in self.oracle_credentials:
            raise AccessDenied(f"credential not authorized for {self.contract_id}")

    def _only_active(self):
        if self.status != ACTIVE:
            raise ContractTerminated(f"{self.contract_id} is terminated")

    def _credit(self, ctx, requested, **details):
        headroom = self.escrow - self.accrued_credit
        credited = min(requested, headroom)
        self.accrued_credit += credited
        self.total_credited += credited
        self.total_unfunded += requested - credited
        ctx.emit("TrafficCredited", **details, requested=requested, credited=credited,
                 unfunded=requested - credited, accrued_credit=self.accrued_credit)
        return credited

    # -- MNO methods ------------------------------------------------------

    def deposit_funds(self, ctx: ExecutionContext, amount):
        self._only(ctx, self.mno, "MNO")
        self._only_active()
        _currency("amount", amount)
        ctx.pay_in(ctx.sender, amount)
        self.escrow += amount
        self.total_deposits += amount
        ctx.emit("Deposited", amount=amount, escrow=self.escrow)
        return self.escrow

    def authorize_oracle(self, ctx: ExecutionContext, credential):
        self._only(ctx, self.mno, "MNO")
        if not isinstance(credential, str) or not credential:
            raise BadArguments("credential must be a non-empty string")
        if credential not in self.oracle_credentials:
            self.oracle_credentials.add(credential)
            ctx.emit("OracleAuthorized", credential=credential)
        return None

    def record_infraction(self, ctx: ExecutionContext, penalty):
        self._only(ctx, self.mno, "MNO")
        self._only_active()
        _currency("penalty", penalty)
        applied = min(penalty, self.accrued_credit)
        # the detracted credit leaves escrow and goes back to the MNO
        ctx.pay_out(self.mno, applied)
        self.accrued_credit -= applied
        self.escrow -= applied
        self.total_penalties += applied
        self.infractions += 1
        if self.infractions >= self.termination_threshold:
            self.status = TERMINATED
        ctx.emit("Infraction", penalty_requested=penalty, penalty_applied=applied,
                 infractions=self.infractions, status=self.status)
        return self.status

    def terminate(self, ctx: ExecutionContext):
        self._only(ctx, self.mno, "MNO")
        if self.status == TERMINATED:
            return 0
        refund = self.escrow - self.accrued_credit
        ctx.pay_out(self.mno, refund)
        self.escrow -= refund
        self.total_refunds += refund
        self.status = TERMINATED
        ctx.emit("Terminated", refunded=refund, accrued_credit=self.accrued_credit)
        return refund

    def recover_funds(self, ctx: ExecutionContext, force=False):
        """Return residual escrow to the MNO; ``force`` also takes stranded credit."""
        self._only(ctx, self.mno, "MNO")
        if self.status != TERMINATED:
            raise NotTerminated(f"{self.contract_id} is still active")
        if not isinstance(force, bool):
            raise BadArguments("force must be a boolean")
        amount = self.escrow if force else self.escrow - self.accrued_credit
        if amount == 0:
            return 0
        ctx.pay_out(self.mno, amount)
        self.escrow -= amount
        if force:
            self.accrued_credit = 0
        self.total_refunds += amount
        self.frozen = True
        ctx.emit("Recovered", amount=amount, forced=force)
        return amount

    # -- oracle methods ---------------------------------------------------

    def report_traffic(self, ctx: ExecutionContext, credential, report):
        self._only_oracle(credential)
        self._only_active()
        if self.billing_mode != PER_BYTE:
            raise WrongBillingMode(f"{self.contract_id} bills by attachment time")
        report = TrafficReport.from_dict(report)
        if report.ecgi != self.ecgi:
            raise EcgiMismatch(f"report for {report.ecgi}, contract is {self.ecgi}")
        requested = kb_charge(report.bytes_served, self.price_per_kb)
        return self._credit(ctx, requested, mode=PER_BYTE, **report.to_dict())

    def report_attachment(self, ctx: ExecutionContext, credential, ue_id, duration, rate):
        self._only_oracle(credential)
        self._only_active()
        if self.billing_mode != PER_ATTACHMENT_TIME:
            raise WrongBillingMode(f"{self.contract_id} bills per byte")
        _currency("duration", duration)
        _currency("rate", rate)
        return self._credit(ctx, duration * rate, mode=PER_ATTACHMENT_TIME,
                            ecgi=str(self.ecgi), ue_id=str(ue_id), duration=duration, rate=rate)

    # -- SCP methods ------------------------------------------------------

    def withdraw(self, ctx: ExecutionContext):
        self._only(ctx, self.scp, "SCP")
        amount = self.accrued_credit
        if amount == 0:
            raise ZeroCredit(f"nothing to withdraw from {self.contract_id}")
        ctx.pay_out(self.scp, amount)
        self.escrow -= amount
        self.accrued_credit = 0
        self.total_withdrawn += amount
        ctx.emit("Withdrawn", amount=amount, escrow=self.escrow)
        return amount

    # -- views ------------------------------------------------------------

    def conservation_holds(self) -> bool:
        return self.total_deposits == (self.total_withdrawn + self.total_penalties
                                       + self.total_refunds + self.escrow)

    def snapshot(self) -> dict:
        return {
            "kind": self.kind,
            "master": self.master,
            "mno": self.mno,
            "scp": self.scp,
            "ecgi": str(self.ecgi),
            "price_per_kb": self.price_per_kb,
            "spectrum_tag": self.spectrum_tag,
            "billing_mode": self.billing_mode,
            "status": self.status,
            "frozen": self.frozen,
            "escrow": self.escrow,
            "accrued_credit": self.accrued_credit,
            "infractions": self.infractions,
            "termination_threshold": self.termination_threshold,
            "oracle_credentials": sorted(self.oracle_credentials),
            "totals": {
                "deposits": self.total_deposits,
                "credited": self.total_credited,
                "unfunded": self.total_unfunded,
                "withdrawn": self.total_withdrawn,
                "penalties": self.total_penalties,
                "refunds": self.total_refunds,
            },
        }


# -- call-and-return helpers (each seals one block) ---------------------------

def deploy_master(ledger: Ledger, mno) -> str:
    return ledger.transact(mno, None, MasterContract.kind)


def register_provider(ledger: Ledger, master, caller, scp, ecgi, price_per_kb,
                      spectrum_tag="", billing_mode=PER_BYTE,
                      termination_threshold=DEFAULT_TERMINATION_THRESHOLD) -> str:
    return ledger.transact(caller, master, "register_provider", {
        "scp": scp, "ecgi": str(ecgi), "price_per_kb": price_per_kb,
        "spectrum_tag": spectrum_tag, "billing_mode": billing_mode,
        "termination_threshold": termination_threshold,
    })


def lookup_cell(ledger: Ledger, master, ecgi) -> Optional[str]:
    return ledger.contract(master).lookup_cell(ecgi)


def deposit_funds(ledger: Ledger, cell, caller, amount) -> int:
    return ledger.transact(caller, cell, "deposit_funds", {"amount": amount})


def authorize_oracle(ledger: Ledger, cell, caller, credential) -> None:
    return ledger.transact(caller, cell, "authorize_oracle", {"credential": credential})


def report_traffic(ledger: Ledger, cell, sender, credential, report: TrafficReport) -> int:
    return ledger.transact(sender, cell, "report_traffic",
                           {"credential": credential, "report": report.to_dict()})


def report_attachment(ledger: Ledger, cell, sender, credential, ue_id, duration, rate) -> int:
    return ledger.transact(sender, cell, "report_attachment", {
        "credential": credential, "ue_id": ue_id, "duration": duration, "rate": rate})


def withdraw(ledger: Ledger, cell, caller) -> int:
    return ledger.transact(caller, cell, "withdraw")


def record_infraction(ledger: Ledger, cell, caller, penalty) -> str:
    return ledger.transact(caller, cell, "record_infraction", {"penalty": penalty})


def terminate(ledger: Ledger, cell, caller) -> int:
    return ledger.transact(caller, cell, "terminate")


def recover_funds(ledger: Ledger, cell, caller, force=False) -> int:
    return ledger.transact(caller, cell, "recover_funds", {"force": force})
