"""Canonical chain records, JSONL dump ingestion and the address/tx index.

A dump holds one block per line::

    {"height": 5, "time": 1231006505, "coinbase_hex": "04ff...",
     "txs": [{"txid": "<hex64>", "coinbase": true,
              "ins": [{"prev": "<hex64>", "vout": 0, "addr": null, "value": 0}],
              "outs": [{"addr": "1A1z...", "value": 5000000000}]}]}

All amounts are integer satoshi.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator

from .errors import (
    BadCoinbaseInput,
    ChainDataError,
    DuplicateTxid,
    MalformedRecord,
    MissingCoinbase,
    NegativeFee,
    NegativeValue,
    NonContiguousHeights,
)

log = logging.getLogger(__name__)

SATOSHI_PER_BTC = 100_000_000
ZERO_TXID = "0" * 64
COINBASE_VOUT = 0xFFFFFFFF

_HEX64 = re.compile(r"[0-9a-f]{64}\Z")


@dataclass(frozen=True, slots=True)
class TxIn:
    prev_txid: str
    prev_vout: int
    address: str | None
    value: int


@dataclass(frozen=True, slots=True)
class TxOut:
    address: str | None
    value: int


@dataclass(frozen=True, slots=True)
class Transaction:
    txid: str
    inputs: tuple[TxIn, ...]
    outputs: tuple[TxOut, ...]
    is_coinbase: bool = False

    @property
    def input_value(self) -> int:
        return sum(i.value for i in self.inputs)

    @property
    def output_value(self) -> int:
        return sum(o.value for o in self.outputs)

    @property
    def fee(self) -> int:
        if self.is_coinbase:
            return 0
        return self.input_value - self.output_value

    def input_addresses(self) -> list[str]:
        """Distinct non-null input addresses in first-seen order."""
        seen: dict[str, None] = {}
        for i in self.inputs:
            if i.address is not None:
                seen.setdefault(i.address)
        return list(seen)

    def output_addresses(self) -> list[str]:
        seen: dict[str, None] = {}
        for o in self.outputs:
            if o.address is not None:
                seen.setdefault(o.address)
        return list(seen)


@dataclass(frozen=True, slots=True)
class Block:
    height: int
    timestamp: int
    coinbase_bytes: bytes
    txs: tuple[Transaction, ...]

    @property
    def coinbase_tx(self) -> Transaction:
        return self.txs[0]

    @property
    def tx_count(self) -> int:
        return len(self.txs)

    @property
    def coinbase_value(self) -> int:
        return self.txs[0].output_value


@dataclass(frozen=True)
class ChainIndex:
    """Lookup tables over a loaded chain. Treat as read-only once built."""

    received_by: dict[str, list[tuple[str, int, int]]] = field(default_factory=dict)
    spent_by: dict[str, list[str]] = field(default_factory=dict)
    tx_by_id: dict[str, Transaction] = field(default_factory=dict)
    block_of_tx: dict[str, int] = field(default_factory=dict)
    # (txid, vout) -> spending txid
    spender: dict[tuple[str, int], str] = field(default_factory=dict)
    # txid -> global position in chain order
    tx_order: dict[str, int] = field(default_factory=dict)

    def height_of(self, txid: str) -> int:
        return self.block_of_tx[txid]

    def received_total(self, address: str) -> int:
        return sum(v for _, _, v in self.received_by.get(address, ()))


def build_index(blocks: Iterable[Block]) -> ChainIndex:
    received_by: dict[str, list[tuple[str, int, int]]] = {}
    spent_by: dict[str, list[str]] = {}
    tx_by_id: dict[str, Transaction] = {}
    block_of_tx: dict[str, int] = {}
    spender: dict[tuple[str, int], str] = {}
    tx_order: dict[str, int] = {}

    seq = 0
    for block in blocks:
        for tx in block.txs:
            txid = tx.txid
            if txid in tx_by_id:
                raise DuplicateTxid(txid)
            tx_by_id[txid] = tx
            block_of_tx[txid] = block.height
            tx_order[txid] = seq
            seq += 1
            for vout, out in enumerate(tx.outputs):
                if out.address is not None:
                    received_by.setdefault(out.address, []).append((txid, vout, out.value))
            if tx.is_coinbase:
                continue
            for addr in tx.input_addresses():
                spent_by.setdefault(addr, []).append(txid)
            for inp in tx.inputs:
                spender[(inp.prev_txid, inp.prev_vout)] = txid
    return ChainIndex(received_by, spent_by, tx_by_id, block_of_tx, spender, tx_order)


# -- validation -------------------------------------------------------------

def _int(value, what: str) -> int:
    if type(value) is not int:
        raise MalformedRecord(None, f"{what} must be an integer, got {value!r}")
    return value


def _addr(value, what: str) -> str | None:
    if value is not None and not isinstance(value, str):
        raise MalformedRecord(None, f"{what} must be a string or null")
    return value


def _txid(value, what: str) -> str:
    if not isinstance(value, str) or not _HEX64.match(value):
        raise MalformedRecord(None, f"{what} is not a 64-char lowercase hex id: {value!r}")
    return value


def _parse_tx(raw: dict, pos: int) -> Transaction:
    where = f"tx[{pos}]"
    txid = _txid(raw["txid"], f"{where}.txid")
    is_cb = raw.get("coinbase", False)
    if not isinstance(is_cb, bool):
        raise MalformedRecord(None, f"{where}.coinbase must be a boolean")
    ins = []
    for j, r in enumerate(raw["ins"]):
        value = _int(r["value"], f"{where}.ins[{j}].value")
        if value < 0:
            raise NegativeValue(f"{txid} input {j}: {value}")
        ins.append(TxIn(_txid(r["prev"], f"{where}.ins[{j}].prev"),
                        _int(r["vout"], f"{where}.ins[{j}].vout"),
                        _addr(r.get("addr"), f"{where}.ins[{j}].addr"),
                        value))
    outs = []
    for j, r in enumerate(raw["outs"]):
        value = _int(r["value"], f"{where}.outs[{j}].value")
        if value < 0:
            raise NegativeValue(f"{txid} output {j}: {value}")
        outs.append(TxOut(_addr(r.get("addr"), f"{where}.outs[{j}].addr"), value))
    return Transaction(txid, tuple(ins), tuple(outs), is_cb)


def validate_block(record: dict) -> Block:
    """Turn a parsed dump record into a Block, enforcing the type invariants."""
    try:
        height = _int(record["height"], "height")
        timestamp = _int(record["time"], "time")
        cb_hex = record["coinbase_hex"]
        if not isinstance(cb_hex, str):
            raise MalformedRecord(None, "coinbase_hex must be a string")
        try:
            coinbase_bytes = bytes.fromhex(cb_hex)
        except ValueError:
            raise MalformedRecord(None, "coinbase_hex is not valid hex") from None
        raw_txs = record["txs"]
        if not isinstance(raw_txs, list):
            raise MalformedRecord(None, "txs must be a list")
        txs = tuple(_parse_tx(t, pos) for pos, t in enumerate(raw_txs))
    except KeyError as e:
        raise MalformedRecord(None, f"missing field {e.args[0]!r}") from None
    except TypeError as e:
        raise MalformedRecord(None, f"bad structure: {e}") from None

    if height < 0:
        raise NegativeValue(f"height {height}")
    if not txs or not txs[0].is_coinbase:
        raise MissingCoinbase(f"block {height}: first transaction is not a coinbase")
    cb = txs[0]
    if len(cb.inputs) != 1 or cb.inputs[0].prev_txid != ZERO_TXID:
        raise BadCoinbaseInput(f"block {height}: coinbase must have one input spending the null txid")
    for tx in txs[1:]:
        if tx.is_coinbase:
            raise BadCoinbaseInput(f"block {height}: {tx.txid} flagged coinbase but not first")
        if not tx.inputs:
            raise MalformedRecord(None, f"{tx.txid} has no inputs")
        if any(i.prev_txid == ZERO_TXID for i in tx.inputs):
            raise BadCoinbaseInput(f"{tx.txid} spends the null txid outside the coinbase")
        if tx.fee < 0:
            raise NegativeFee(f"{tx.txid}: outputs exceed inputs by {-tx.fee}")
    return Block(height, timestamp, coinbase_bytes, txs)


# -- dump I/O ---------------------------------------------------------------

def block_to_record(block: Block) -> dict:
    return {
        "height": block.height,
        "time": block.timestamp,
        "coinbase_hex": block.coinbase_bytes.hex(),
        "txs": [
            {
                "txid": tx.txid,
                "coinbase": tx.is_coinbase,
                "ins": [{"prev": i.prev_txid, "vout": i.prev_vout, "addr": i.address, "value": i.value}
                        for i in tx.inputs],
                "outs": [{"addr": o.address, "value": o.value} for o in tx.outputs],
            }
            for tx in block.txs
        ],
    }


def dump_block(block: Block) -> str:
    return json.dumps(block_to_record(block), separators=(",", ":"))


def write_chain(blocks: Iterable[Block], dest: str | Path | IO[str]) -> None:
    if hasattr(dest, "write"):
        for b in blocks:
            dest.write(dump_block(b))
            dest.write("\n")
        return
    with open(dest, "w", encoding="utf-8", newline="\n") as fh:
        write_chain(blocks, fh)


def _in_range(height: int, height_range) -> bool:
    if height_range is None:
        return True
    start, end = height_range
    if start is not None and height < start:
        return False
    if end is not None and height >= end:
        return False
    return True


def iter_blocks(lines: Iterable[str], height_range=None) -> Iterator[Block]:
    """Parse and validate dump lines, yielding blocks inside ``height_range``.

    ``height_range`` is a half-open ``(start, end)`` pair; either side may be None.
    """
    prev = None
    for line_no, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise MalformedRecord(line_no, f"invalid JSON: {e.msg}") from None
        if not isinstance(record, dict):
            raise MalformedRecord(line_no, "record is not a JSON object")
        h = record.get("height")
        if type(h) is int and not _in_range(h, height_range):
            continue
        try:
            block = validate_block(record)
        except ChainDataError as e:
            if isinstance(e, MalformedRecord) and e.line_no is None:
                raise MalformedRecord(line_no, e.reason) from None
            e.line_no = line_no
            raise
        if prev is not None and block.height != prev + 1:
            raise NonContiguousHeights(prev + 1, block.height)
        prev = block.height
        yield block


def load_chain(path: str | Path, height_range=None) -> tuple[list[Block], ChainIndex]:
    with open(path, encoding="utf-8") as fh:
        blocks = list(iter_blocks(fh, height_range))
    index = build_index(blocks)
    log.info("loaded %d blocks (%d txs) from %s", len(blocks), len(index.tx_by_id), path)
    return blocks, index


def parse_range(text: str | None):
    """Parse ``start:end`` (either side optional) into a half-open range tuple."""
    if not text:
        return None
    if ":" not in text:
        raise ValueError(f"range must look like start:end, got {text!r}")
    a, b = text.split(":", 1)
    start = int(a) if a.strip() else None
    end = int(b) if b.strip() else None
    if start is not None and end is not None and end <= start:
        raise ValueError(f"empty range {text!r}")
    return (start, end)


def btc(satoshi: int) -> str:
    """Format satoshi as a BTC decimal string without float rounding."""
    sign = "-" if satoshi < 0 else ""
    q, r = divmod(abs(satoshi), SATOSHI_PER_BTC)
    return f"{sign}{q}.{r:08d}"
