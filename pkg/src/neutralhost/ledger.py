"""
Minimal deterministic blockchain: accounts, transfers, contract calls
executed in block order, a digest-linked chain and an event log.

A single sequencer produces blocks.  Nothing executes on submission; the
pending queue is drained in FIFO order by :meth:`Ledger.seal_block`.  Every
amount is an integer number of micro-units.

Example::

    ledger = Ledger()
    alice = ledger.create_account(10_000)
    bob = ledger.create_account(0)
    ledger.submit_transaction(Transaction(alice, bob, value=250, nonce=1))
    ledger.seal_block(now=10)
    assert ledger.get_balance(bob) == 250
"""

from __future__ import annotations

import copy
import functools
import hashlib
import inspect
import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable, ClassVar, Iterator, NewType, Optional

from .errors import (
    BadArguments,
    BadNonce,
    ExecutionError,
    FeeUnpaid,
    InsufficientFunds,
    MalformedTransaction,
    UnknownAccount,
    UnknownMethod,
)

AccountId = NewType("AccountId", str)
ContractId = NewType("ContractId", str)
TxId = NewType("TxId", str)

MAX_CURRENCY = 2**64 - 1
GENESIS_DIGEST = "0" * 64
LEDGER_ADDRESS = "ledger"   # contract field of events not tied to a contract

CONTRACT_TYPES: dict[str, type["Contract"]] = {}


def register_contract(cls):
    """Class decorator making a contract kind deployable by transactions."""
    CONTRACT_TYPES[cls.kind] = cls
    return cls


def _is_currency(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool) and 0 <= x <= MAX_CURRENCY


def canonical_json(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=True, allow_nan=False)


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass(frozen=True)
class Call:
    method: str
    args: dict = field(default_factory=dict)

    def to_dict(self):
        return {"method": self.method, "args": self.args}


@dataclass(frozen=True)
class Transaction:
    """A signed-by-assumption request from ``sender``.

    ``target`` is an account (plain transfer), a contract id (method call) or
    ``None`` (contract creation; ``call.method`` names the contract kind).
    """

    sender: str
    target: Optional[str]
    call: Optional[Call] = None
    value: int = 0
    nonce: int = 0
    fee: int = 0

    def to_dict(self):
        return {
            "sender": self.sender,
            "target": self.target,
            "call": self.call.to_dict() if self.call is not None else None,
            "value": self.value,
            "nonce": self.nonce,
            "fee": self.fee,
        }

    @classmethod
    def from_dict(cls, d):
        call = d.get("call")
        return cls(
            sender=d["sender"],
            target=d["target"],
            call=Call(call["method"], dict(call.get("args", {}))) if call else None,
            value=d.get("value", 0),
            nonce=d.get("nonce", 0),
            fee=d.get("fee", 0),
        )


@dataclass(frozen=True)
class Receipt:
    tx_id: str
    ok: bool
    error: Optional[str] = None
    message: Optional[str] = None
    result: Any = None

    def to_dict(self):
        return {"tx_id": self.tx_id, "ok": self.ok, "error": self.error,
                "message": self.message, "result": self.result}


@dataclass(frozen=True)
class EventRecord:
    contract: str
    name: str
    payload: dict
    block_height: int
    index_in_block: int

    def to_dict(self):
        return {"contract": self.contract, "name": self.name, "payload": self.payload,
                "block_height": self.block_height, "index_in_block": self.index_in_block}


@dataclass(frozen=True)
class Block:
    height: int
    parent_digest: str
    tx_ids: tuple
    transactions: tuple
    receipts: tuple
    timestamp: int
    digest: str

    def body(self) -> dict:
        return {
            "height": self.height,
            "parent_digest": self.parent_digest,
            "timestamp": self.timestamp,
            "transactions": [
                {"tx_id": i, **tx.to_dict()} for i, tx in zip(self.tx_ids, self.transactions)
            ],
            "receipts": [r.to_dict() for r in self.receipts],
        }

    def compute_digest(self) -> str:
        return sha256_hex(canonical_json(self.body()))

    def to_dict(self) -> dict:
        return {**self.body(), "digest": self.digest}


class Contract:
    """Base class for contracts hosted on a :class:`Ledger`.

    Subclasses list their transaction-callable methods in ``methods``.  Each
    such method receives an :class:`ExecutionContext` followed by keyword
    arguments from the call payload, and must finish all checks before it
    mutates anything: the ledger discards the context's transfers and events
    on failure but does not roll back the contract object itself.
    """

    kind: ClassVar[str] = "contract"
    methods: ClassVar[frozenset] = frozenset()

    def __init__(self, contract_id: str, creator: str):
        self.contract_id = contract_id
        self.creator = creator

    def snapshot(self) -> dict:
        raise NotImplementedError


class ExecutionContext:
    """Scratch space for one transaction; applied only if the call succeeds."""

    def __init__(self, ledger: "Ledger", sender: str, contract_id: Optional[str], now: int):
        self.ledger = ledger
        self.sender = sender
        self.contract_id = contract_id
        self.now = now
        self.block_height = len(ledger.chain)
        self.events: list[tuple[str, str, dict]] = []
        self._account_delta: dict[str, int] = defaultdict(int)
        self._contract_delta: dict[str, int] = defaultdict(int)
        self._spawned: list[Contract] = []
        self._next_contract = ledger._contract_seq

    def balance_of(self, account: str) -> int:
        return self.ledger.get_balance(account) + self._account_delta[account]

    def pay_in(self, account: str, amount: int) -> None:
        """Move ``amount`` from ``account`` into the executing contract."""
        if self.balance_of(account) < amount:
            raise InsufficientFunds(
                f"{account} holds {self.balance_of(account)}, needs {amount}")
        self._account_delta[account] -= amount
        self._contract_delta[self.contract_id] += amount

    def pay_out(self, account: str, amount: int) -> None:
        """Move ``amount`` from the executing contract to ``account``."""
        held = self.ledger.contract_balance(self.contract_id) + self._contract_delta[self.contract_id]
        if held < amount:
            raise InsufficientFunds(f"contract holds {held}, needs {amount}")
        if account not in self.ledger.accounts:
            raise UnknownAccount(account)
        self._contract_delta[self.contract_id] -= amount
        self._account_delta[account] += amount

    def emit(self, name: str, **payload) -> None:
        self.events.append((self.contract_id, name, payload))

    def spawn(self, cls: type[Contract], **kwargs) -> str:
        cid = ContractId(f"contract-{self._next_contract:04d}")
        self._next_contract += 1
        self._spawned.append(cls(cid, self.contract_id or self.sender, **kwargs))
        return cid


class Subscription:
    """Cursor over the sealed event log; each matching record is seen once."""

    def __init__(self, ledger: "Ledger", contract=None, name=None):
        self._ledger = ledger
        self._contract = contract
        self._name = name
        self._cursor = 0

    def matches(self, ev: EventRecord) -> bool:
        return ((self._contract is None or ev.contract == self._contract)
                and (self._name is None or ev.name == self._name))

    def poll(self) -> list[EventRecord]:
        log = self._ledger.events
        new = [ev for ev in log[self._cursor:] if self.matches(ev)]
        self._cursor = len(log)
        return new

    def __iter__(self) -> Iterator[EventRecord]:
        return iter(self.poll())


@functools.lru_cache(maxsize=None)
def _call_signature(fn, skip):
    return inspect.Signature(list(inspect.signature(fn).parameters.values())[skip:])


def _error_classes() -> dict[str, type[ExecutionError]]:
    out = {}
    stack = [ExecutionError]
    while stack:
        cls = stack.pop()
        out[cls.code] = cls
        stack.extend(cls.__subclasses__())
    return out


class Ledger:
    """Single-writer ledger state plus the sequencer that extends it.

    ``fee`` is the flat per-transaction fee used by the convenience helpers;
    transactions built by hand carry their own fee.
    """

    def __init__(self, fee: int = 0, contract_types: Optional[dict] = None):
        if not _is_currency(fee):
            raise ValueError("fee must be a non-negative 64-bit integer")
        self.fee = fee
        self.contract_types = CONTRACT_TYPES if contract_types is None else contract_types
        self.accounts: dict[str, int] = {}
        self.contracts: dict[str, Contract] = {}
        self._contract_balances: dict[str, int] = {}
        self.chain: list[Block] = []
        self.pending: list[tuple[str, Transaction]] = []
        self.events: list[EventRecord] = []
        self.receipts: dict[str, Receipt] = {}
        self.fee_sink = 0
        self.minted = 0
        self._nonces: dict[str, int] = {}
        self._queued: dict[str, int] = defaultdict(int)
        self._tx_seq = 0
        self._contract_seq = 1
        self._last_timestamp = 0

    # -- accounts ---------------------------------------------------------

    def create_account(self, initial_balance: int = 0) -> AccountId:
        if not _is_currency(initial_balance):
            raise ValueError(f"initial balance must be a 64-bit non-negative int: {initial_balance!r}")
        aid = AccountId(f"acct-{len(self.accounts) + 1:04d}")
        self.accounts[aid] = initial_balance
        self._nonces[aid] = 0
        self.minted += initial_balance
        return aid

    def get_balance(self, account: str) -> int:
        try:
            return self.accounts[account]
        except KeyError:
            raise UnknownAccount(f"unknown account {account!r}") from None

    def contract_balance(self, contract_id: str) -> int:
        return self._contract_balances.get(contract_id, 0)

    def contract(self, contract_id: str) -> Contract:
        try:
            return self.contracts[contract_id]
        except KeyError:
            raise UnknownAccount(f"unknown contract {contract_id!r}") from None

    def next_nonce(self, sender: str) -> int:
        return self._nonces.get(sender, 0) + 1 + self._queued[sender]

    # -- submission -------------------------------------------------------

    def _validate(self, tx: Transaction) -> None:
        if not isinstance(tx, Transaction):
            raise MalformedTransaction(f"expected Transaction, got {type(tx).__name__}")
        if tx.sender not in self.accounts:
            raise MalformedTransaction(f"sender {tx.sender!r} is not an account")
        for name in ("value", "fee"):
            if not _is_currency(getattr(tx, name)):
                raise MalformedTransaction(f"{name} must be an integer in [0, 2^64): {getattr(tx, name)!r}")
        if not isinstance(tx.nonce, int) or isinstance(tx.nonce, bool) or tx.nonce < 0:
            raise MalformedTransaction(f"nonce must be a non-negative integer: {tx.nonce!r}")
        if tx.call is not None:
            if not isinstance(tx.call, Call) or not isinstance(tx.call.method, str) or not tx.call.method:
                raise MalformedTransaction("call must carry a non-empty method name")
            if not isinstance(tx.call.args, dict) or not all(isinstance(k, str) for k in tx.call.args):
                raise MalformedTransaction("call args must be a mapping with string keys")
            try:
                canonical_json(tx.call.args)
            except (TypeError, ValueError) as exc:
                raise MalformedTransaction(f"call args are not serialisable: {exc}") from None
        if tx.target is None:
            if tx.call is None or tx.call.method not in self.contract_types:
                raise MalformedTransaction("contract creation needs a known contract kind")
            if tx.value:
                raise MalformedTransaction("contract creation cannot carry value")
        elif tx.target in self.accounts:
            if tx.call is not None:
                raise MalformedTransaction("plain accounts have no methods")
        elif tx.target in self.contracts:
            if tx.call is None:
                raise MalformedTransaction("contract target needs a call")
            if tx.value:
                raise MalformedTransaction("contract methods are not payable")
        else:
            raise MalformedTransaction(f"unknown target {tx.target!r}")

    def submit_transaction(self, tx: Transaction) -> TxId:
        """Queue ``tx`` for the next block; raises MalformedTransaction."""
        self._validate(tx)
        if tx.call is not None:
            # decouple from caller-owned dicts so sealed blocks cannot change
            tx = Transaction(tx.sender, tx.target,
                             Call(tx.call.method, json.loads(canonical_json(tx.call.args))),
                             tx.value, tx.nonce, tx.fee)
        self._tx_seq += 1
        tx_id = TxId(f"tx-{self._tx_seq:08d}")
        self.pending.append((tx_id, tx))
        self._queued[tx.sender] += 1
        return tx_id

    def submit(self, sender, target, method=None, args=None, value=0, fee=None) -> TxId:
        """Build a transaction with the next nonce and the ledger fee, then queue it."""
        call = Call(method, dict(args or {})) if method is not None else None
        tx = Transaction(sender, target, call, value, self.next_nonce(sender),
                         self.fee if fee is None else fee)
        return self.submit_transaction(tx)

    # -- execution --------------------------------------------------------

    def _execute(self, tx_id: str, tx: Transaction, now: int):
        """Run one transaction; returns (receipt, emitted events)."""
        sender = tx.sender
        if self.accounts[sender] < tx.fee:
            err = FeeUnpaid(f"balance {self.accounts[sender]} cannot cover fee {tx.fee}")
            return self._failed(tx_id, tx, err)
        self.accounts[sender] -= tx.fee
        self.fee_sink += tx.fee
        expected = self._nonces[sender] + 1
        if tx.nonce != expected:
            return self._failed(tx_id, tx, BadNonce(f"expected nonce {expected}, got {tx.nonce}"))
        self._nonces[sender] = expected

        if tx.target in self.accounts:
            if self.accounts[sender] < tx.value:
                return self._failed(tx_id, tx, InsufficientFunds(
                    f"{sender} holds {self.accounts[sender]}, needs {tx.value}"))
            self.accounts[sender] -= tx.value
            self.accounts[tx.target] += tx.value
            return Receipt(tx_id, True, result=tx.value), []

        ctx = ExecutionContext(self, sender, tx.target, now)
        try:
            if tx.target is None:
                cls = self.contract_types[tx.call.method]
                result = ctx.spawn(cls, **self._bind(cls.__init__, tx.call.args, skip=3))
            else:
                contract = self.contracts[tx.target]
                if tx.call.method not in contract.methods:
                    raise UnknownMethod(f"{contract.kind} has no method {tx.call.method!r}")
                fn = getattr(contract, tx.call.method)
                result = fn(ctx, **self._bind(fn, tx.call.args, skip=1))
        except ExecutionError as err:
            return self._failed(tx_id, tx, err)
        except (TypeError, ValueError, KeyError) as err:
            # malformed payload contents; contracts validate before mutating
            return self._failed(tx_id, tx, BadArguments(f"{type(err).__name__}: {err}"))

        for acct, delta in ctx._account_delta.items():
            self.accounts[acct] += delta
        for cid, delta in ctx._contract_delta.items():
            self._contract_balances[cid] = self._contract_balances.get(cid, 0) + delta
        for c in ctx._spawned:
            self.contracts[c.contract_id] = c
            self._contract_balances.setdefault(c.contract_id, 0)
        self._contract_seq = ctx._next_contract
        return Receipt(tx_id, True, result=result), ctx.events

    @staticmethod
    def _bind(fn: Callable, args: dict, skip: int) -> dict:
        sig = _call_signature(getattr(fn, "__func__", fn), skip + hasattr(fn, "__func__"))
        try:
            sig.bind(**args)
        except TypeError as exc:
            raise BadArguments(str(exc)) from None
        return args

    def _failed(self, tx_id, tx, err: ExecutionError):
        receipt = Receipt(tx_id, False, err.code, str(err))
        where = tx.target if tx.target in self.contracts else LEDGER_ADDRESS
        return receipt, [(where, "TxFailed", {"tx_id": tx_id, "sender": tx.sender,
                                              "error": err.code, "message": str(err)})]

    def seal_block(self, now: int) -> Block:
        """Execute the pending queue in FIFO order and append the block."""
        if now < self._last_timestamp:
            raise ValueError(f"block timestamp {now} precedes {self._last_timestamp}")
        height = len(self.chain)
        parent = self.chain[-1].digest if self.chain else GENESIS_DIGEST
        pending, self.pending = self.pending, []
        self._queued.clear()
        receipts = []
        index = 0
        for tx_id, tx in pending:
            receipt, events = self._execute(tx_id, tx, now)
            receipts.append(receipt)
            self.receipts[tx_id] = receipt
            for contract, name, payload in events:
                self.events.append(EventRecord(contract, name, copy.deepcopy(payload), height, index))
                index += 1
        block = Block(height, parent, tuple(i for i, _ in pending), tuple(t for _, t in pending),
                      tuple(receipts), now, "")
        block = Block(block.height, block.parent_digest, block.tx_ids, block.transactions,
                      block.receipts, now, block.compute_digest())
        self.chain.append(block)
        self._last_timestamp = now
        assert self.supply_holds(), "supply invariant broken"
        return block

    def transact(self, sender, target, method=None, args=None, value=0, now=None):
        """Submit, seal immediately and return the call result (automine).

        Raises the transaction's ExecutionError subclass on failure.
        """
        if self.pending:
            raise RuntimeError("transact() needs an empty pending queue")
        tx_id = self.submit(sender, target, method, args, value)
        self.seal_block(self._last_timestamp if now is None else now)
        receipt = self.receipts[tx_id]
        if not receipt.ok:
            raise _error_classes().get(receipt.error, ExecutionError)(receipt.message)
        return receipt.result

    # -- observation ------------------------------------------------------

    def subscribe_events(self, contract=None, name=None) -> Subscription:
        return Subscription(self, contract, name)

    def events_for(self, contract=None, name=None) -> list[EventRecord]:
        return Subscription(self, contract, name).poll()

    def total_held(self) -> int:
        return sum(self._contract_balances.values())

    def supply_holds(self) -> bool:
        return sum(self.accounts.values()) + self.total_held() + self.fee_sink == self.minted

    def verify_chain(self) -> bool:
        parent = GENESIS_DIGEST
        for h, block in enumerate(self.chain):
            if block.height != h or block.parent_digest != parent:
                return False
            if block.compute_digest() != block.digest:
                return False
            parent = block.digest
        return True

    @property
    def head_digest(self) -> str:
        return self.chain[-1].digest if self.chain else GENESIS_DIGEST

    def snapshot(self) -> dict:
        return {
            "height": len(self.chain),
            "head_digest": self.head_digest,
            "minted": self.minted,
            "fee_sink": self.fee_sink,
            "accounts": dict(sorted(self.accounts.items())),
            "contracts": {cid: {"balance": self.contract_balance(cid), **c.snapshot()}
                          for cid, c in sorted(self.contracts.items())},
        }

    def dump_chain(self, fh) -> None:
        """Write the chain as JSON lines, one block per line."""
        for block in self.chain:
            fh.write(canonical_json(block.to_dict()) + "\n")
