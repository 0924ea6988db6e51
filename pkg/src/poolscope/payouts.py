"""Pool-to-member payout detection and per-pool payout statistics.

Three detector templates are supported:

``btccom``
    one collector address funds every payout and takes the change back.
``antpool``
    payouts with exactly ``exact_outputs`` outputs start at a collector and
    continue through single-use change addresses; the change output is the one
    spent into the next qualifying payout, with the largest value as
    tie-break and as the fallback at the end of a chain.
``viabtc``
    the reward address sends exactly ``fanout_amount`` to rotating
    intermediaries, each of which spends it in a payout.  The pool's change
    cannot be told apart from members, so every output is ``ambiguous``.

Outputs without an address are never counted as members or change.
"""

from __future__ import annotations

import csv
import json
import logging
import statistics
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Iterable, Mapping

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .attribution import AttributionLedger
from .chaindata import ChainIndex, Transaction, btc
from .clustering import ClusterPartition
from .errors import CollectorNotFound, InvalidParams, UnknownSchema, WindowMismatch

log = logging.getLogger(__name__)

DETECTORS = ("btccom", "antpool", "viabtc")
MEMBER, CHANGE, AMBIGUOUS = "member", "change", "ambiguous"


@dataclass(frozen=True)
class DetectorParams:
    pool: str
    detector: str
    window: tuple[int, int]
    reward_addresses: tuple[str, ...] = ()
    collector_address: str | None = None
    min_outputs: int = 100
    exact_outputs: int | None = None
    fanout_amount: int | None = None
    max_chain_length: int = 10_000
    relaxed: bool = False

    def __post_init__(self):
        if self.detector not in DETECTORS:
            raise InvalidParams(f"{self.pool}: unknown detector {self.detector!r}")
        lo, hi = self.window
        if not lo < hi:
            raise InvalidParams(f"{self.pool}: window start must be below end")
        if self.min_outputs < 2:
            raise InvalidParams(f"{self.pool}: min_outputs must be >= 2")
        if self.fanout_amount is not None and self.fanout_amount <= 0:
            raise InvalidParams(f"{self.pool}: fanout_amount must be positive")
        if self.max_chain_length < 1:
            raise InvalidParams(f"{self.pool}: max_chain_length must be positive")
        if self.detector in ("btccom", "antpool") and not self.collector_address:
            raise InvalidParams(f"{self.pool}: {self.detector} detector needs collector_address")
        if self.detector == "antpool" and self.exact_outputs is None:
            raise InvalidParams(f"{self.pool}: antpool detector needs exact_outputs")
        if self.detector == "viabtc" and (self.fanout_amount is None or not self.reward_addresses):
            raise InvalidParams(f"{self.pool}: viabtc detector needs fanout_amount and reward_addresses")


@dataclass(frozen=True)
class PayoutOutput:
    txid: str
    height: int
    vout: int
    address: str
    value: int
    role: str


@dataclass
class PayoutSet:
    pool: str
    window: tuple[int, int] | None = None
    payout_txids: list[str] = field(default_factory=list)
    outputs: list[PayoutOutput] = field(default_factory=list)
    member_outputs: dict[str, int] = field(default_factory=dict)
    change_outputs: list[tuple[str, int]] = field(default_factory=list)
    ambiguous_change: dict[str, bool] = field(default_factory=dict)
    # (txid, change vout, next txid) for chain-following detectors
    chain_links: list[tuple[str, int, str]] = field(default_factory=list)
    chain_breaks: list[str] = field(default_factory=list)
    relaxed_txids: set[str] = field(default_factory=set)

    @property
    def paid_satoshi(self) -> int:
        return sum(self.member_outputs.values())

    @property
    def member_addresses(self) -> set[str]:
        return set(self.member_outputs)

    def add(self, tx: Transaction, height: int, change_vouts=(), ambiguous: bool = False) -> None:
        self.payout_txids.append(tx.txid)
        self.ambiguous_change[tx.txid] = ambiguous
        for vout, out in enumerate(tx.outputs):
            if out.address is None:
                continue
            if vout in change_vouts:
                role = CHANGE
                self.change_outputs.append((tx.txid, vout))
            else:
                role = AMBIGUOUS if ambiguous else MEMBER
                self.member_outputs[out.address] = self.member_outputs.get(out.address, 0) + out.value
            self.outputs.append(PayoutOutput(tx.txid, height, vout, out.address, out.value, role))

    def address_tx_counts(self) -> Counter:
        """Number of distinct payout transactions paying each member address."""
        pairs = {(o.address, o.txid) for o in self.outputs if o.role != CHANGE}
        return Counter(a for a, _ in pairs)


def _in_window(height: int, window) -> bool:
    return window[0] <= height < window[1]


def _window_spends(index: ChainIndex, address: str, window) -> list[str]:
    h = index.block_of_tx
    txids = [t for t in dict.fromkeys(index.spent_by.get(address, ())) if _in_window(h[t], window)]
    txids.sort(key=index.tx_order.__getitem__)
    return txids


def detect_btccom(index: ChainIndex, params: DetectorParams) -> PayoutSet:
    collector = params.collector_address
    tx_by_id = index.tx_by_id
    txids = [t for t in _window_spends(index, collector, params.window)
             if len(tx_by_id[t].outputs) >= params.min_outputs]
    if not txids:
        raise CollectorNotFound(f"{params.pool}: no payout from {collector} in window {params.window}")
    if len(txids) > params.max_chain_length:
        log.warning("%s: truncating %d payouts to max_chain_length=%d",
                    params.pool, len(txids), params.max_chain_length)
        txids = txids[:params.max_chain_length]
    result = PayoutSet(params.pool, params.window)
    for t in txids:
        tx = tx_by_id[t]
        change = {v for v, o in enumerate(tx.outputs) if o.address == collector}
        result.add(tx, index.block_of_tx[t], change)
    return result


def _largest_output(tx: Transaction) -> int:
    # ties go to the lowest vout
    return max(range(len(tx.outputs)), key=lambda v: (tx.outputs[v].value, -v))


def detect_antpool(index: ChainIndex, params: DetectorParams) -> PayoutSet:
    tx_by_id = index.tx_by_id
    heights = index.block_of_tx
    exact = params.exact_outputs

    def qualifies(txid: str) -> bool:
        if not _in_window(heights[txid], params.window):
            return False
        n = len(tx_by_id[txid].outputs)
        return n == exact or (params.relaxed and n >= params.min_outputs)

    starts = [t for t in _window_spends(index, params.collector_address, params.window)
              if len(tx_by_id[t].outputs) == exact]
    result = PayoutSet(params.pool, params.window)
    visited: set[str] = set()
    records: list[tuple[str, int]] = []

    for start in starts:
        if start in visited:
            continue
        cur: str | None = start
        length = 0
        while cur is not None and cur not in visited:
            visited.add(cur)
            length += 1
            tx = tx_by_id[cur]
            forward = []
            for vout, out in enumerate(tx.outputs):
                nxt = index.spender.get((cur, vout))
                if nxt is not None and nxt not in visited and qualifies(nxt):
                    forward.append((out.value, -vout, nxt))
            if forward:
                _, neg_vout, nxt = max(forward)
                change_vout = -neg_vout
            else:
                change_vout = _largest_output(tx)
                nxt = None
                result.chain_breaks.append(cur)
                log.info("%s: payout chain ends at %s", params.pool, cur)
            if len(tx.outputs) != exact:
                result.relaxed_txids.add(cur)
            records.append((cur, change_vout))
            if nxt is not None and length >= params.max_chain_length:
                log.warning("%s: chain from %s cut at max_chain_length=%d", params.pool, start,
                            params.max_chain_length)
                nxt = None
            if nxt is not None:
                result.chain_links.append((cur, change_vout, nxt))
            cur = nxt

    records.sort(key=lambda r: index.tx_order[r[0]])
    for txid, change_vout in records:
        result.add(tx_by_id[txid], heights[txid], {change_vout})
    return result


def detect_viabtc(index: ChainIndex, params: DetectorParams) -> PayoutSet:
    tx_by_id = index.tx_by_id
    rewards = set(params.reward_addresses)
    funding = sorted({t for r in rewards for t in _window_spends(index, r, params.window)},
                     key=index.tx_order.__getitem__)
    intermediaries: dict[str, None] = {}
    for t in funding:
        for out in tx_by_id[t].outputs:
            if out.value == params.fanout_amount and out.address is not None and out.address not in rewards:
                intermediaries.setdefault(out.address)
    payouts = {t for a in intermediaries for t in _window_spends(index, a, params.window)
               if len(tx_by_id[t].outputs) >= params.min_outputs}
    result = PayoutSet(params.pool, params.window)
    for t in sorted(payouts, key=index.tx_order.__getitem__):
        result.add(tx_by_id[t], index.block_of_tx[t], ambiguous=True)
    return result


_DISPATCH = {"btccom": detect_btccom, "antpool": detect_antpool, "viabtc": detect_viabtc}


def detect(index: ChainIndex, params: DetectorParams) -> PayoutSet:
    return _DISPATCH[params.detector](index, params)


@dataclass(frozen=True)
class PoolPayoutStats:
    pool: str
    n_blocks: int
    n_tx: int
    n_addresses: int
    n_clusters: int
    mined_satoshi: int
    paid_satoshi: int
    coverage: float
    mu: float
    mu_per_address: float


def payout_stats(payouts: PayoutSet, ledger: AttributionLedger, partition: ClusterPartition,
                 window: tuple[int, int] | None = None) -> PoolPayoutStats:
    """Block, payout and member statistics of one pool over a window.

    Member addresses missing from ``partition`` count as singleton clusters.
    """
    window = tuple(window) if window is not None else payouts.window
    if window is None:
        raise WindowMismatch("no window given and payout set carries none")
    if payouts.window is not None and tuple(payouts.window) != window:
        raise WindowMismatch(f"payouts cover {payouts.window}, stats requested for {window}")
    if ledger.start > window[0] or ledger.end < window[1]:
        raise WindowMismatch(f"ledger covers [{ledger.start}, {ledger.end}), window is {window}")

    heights = ledger.heights_of(payouts.pool, window)
    mined = sum(ledger.coinbase_value[h] for h in heights)
    paid = payouts.paid_satoshi
    members = payouts.member_outputs
    clusters = {partition.get(a, ("singleton", a)) for a in members}
    counts = payouts.address_tx_counts()
    mu = float(statistics.median(counts[a] for a in members)) if members else 0.0
    return PoolPayoutStats(
        pool=payouts.pool,
        n_blocks=len(heights),
        n_tx=len(payouts.payout_txids),
        n_addresses=len(members),
        n_clusters=len(clusters),
        mined_satoshi=mined,
        paid_satoshi=paid,
        coverage=paid / mined if mined else float("nan"),
        mu=mu,
        mu_per_address=mu / len(members) if members else float("nan"),
    )


# -- parameter files --------------------------------------------------------

def _read_config(path: str | Path) -> dict:
    path = Path(path)
    if path.suffix.lower() == ".toml":
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def params_from_dict(data: Mapping) -> dict[str, DetectorParams]:
    """Build detector parameters from ``{"window": [a, b], "pools": {name: {...}}}``.

    Per-pool keys mirror DetectorParams fields; a pool may override ``window``.
    """
    pools = data.get("pools")
    if not isinstance(pools, Mapping):
        raise InvalidParams("params need a 'pools' table")
    default_window = data.get("window")
    fields = set(DetectorParams.__dataclass_fields__) - {"pool"}
    out: dict[str, DetectorParams] = {}
    for name, raw in pools.items():
        unknown = set(raw) - fields
        if unknown:
            raise InvalidParams(f"{name}: unknown keys {sorted(unknown)}")
        kw = dict(raw)
        window = kw.pop("window", default_window)
        if window is None or len(window) != 2:
            raise InvalidParams(f"{name}: window [start, end] required")
        rewards = kw.pop("reward_addresses", ())
        if isinstance(rewards, str):
            rewards = (rewards,)
        out[name] = DetectorParams(pool=name, window=(int(window[0]), int(window[1])),
                                   reward_addresses=tuple(rewards), **kw)
    return out


def load_params(path: str | Path, **overrides) -> dict[str, DetectorParams]:
    """Load parameters from TOML or JSON, applying non-None keyword overrides to every pool."""
    params = params_from_dict(_read_config(path))
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if overrides:
        params = {k: replace(p, **overrides) for k, p in params.items()}
    return params


# -- CSV --------------------------------------------------------------------

PAYOUT_HEADER = ["pool", "txid", "height", "vout", "addr", "value", "role"]
STATS_HEADER = ["pool", "n_blocks", "n_tx", "n_addresses", "n_clusters", "btc_mined", "btc_paid",
                "coverage", "mu", "mu_per_address"]


def write_payouts(payout_sets: Iterable[PayoutSet], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(PAYOUT_HEADER)
    for ps in payout_sets:
        for o in ps.outputs:
            w.writerow([ps.pool, o.txid, o.height, o.vout, o.address, o.value, o.role])


def read_payouts(path: str | Path) -> dict[str, PayoutSet]:
    sets: dict[str, PayoutSet] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != PAYOUT_HEADER:
            raise UnknownSchema(f"{path}: expected header {','.join(PAYOUT_HEADER)}")
        for row in reader:
            ps = sets.setdefault(row["pool"], PayoutSet(row["pool"]))
            txid, role, value = row["txid"], row["role"], int(row["value"])
            if not ps.payout_txids or ps.payout_txids[-1] != txid:
                ps.payout_txids.append(txid)
            ps.ambiguous_change[txid] = role == AMBIGUOUS or ps.ambiguous_change.get(txid, False)
            out = PayoutOutput(txid, int(row["height"]), int(row["vout"]), row["addr"], value, role)
            ps.outputs.append(out)
            if role == CHANGE:
                ps.change_outputs.append((txid, out.vout))
            else:
                ps.member_outputs[out.address] = ps.member_outputs.get(out.address, 0) + value
    return sets


def _fmt(x: float, spec: str) -> str:
    return "" if x != x else format(x, spec)


def write_stats(rows: Iterable[PoolPayoutStats], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(STATS_HEADER)
    for s in rows:
        w.writerow([s.pool, s.n_blocks, s.n_tx, s.n_addresses, s.n_clusters, btc(s.mined_satoshi),
                    btc(s.paid_satoshi), _fmt(s.coverage, ".4f"), _fmt(s.mu, "g"),
                    _fmt(s.mu_per_address, ".3e")])
