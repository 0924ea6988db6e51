"""Deterministic synthetic chains with full ground truth.

Blocks are mined by configured pools in proportion to their hash-rate share,
with exponentially distributed block intervals.  Each pool pays its members
with one of three templates:

``collector_chain``
    reward address -> collector; the collector pays members and keeps the change.
``fixed_outputs_chain``
    reward address -> collector; payouts with exactly ``k`` outputs chain
    through fresh change addresses, the change always being the largest output.
``fanout``
    the reward address sends exactly ``fanout_amount`` to fresh intermediaries
    which each pay members plus a change output.

Wallets receive member outputs, periodically consolidate all their coins into
their first (anchor) address and may take part in equal-output CoinJoins,
whose change also returns to the anchor.  Multiple-input clustering with the
CoinJoin filter therefore recovers every wallet exactly.

The same seed always yields the same chain, byte for byte.
"""

from __future__ import annotations

import bisect
import csv
import hashlib
import json
import math
import random
import re
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import IO

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .chaindata import COINBASE_VOUT, ZERO_TXID, Block, Transaction, TxIn, TxOut
from .errors import InvalidConfig

SCHEMES = ("none", "collector_chain", "fixed_outputs_chain", "fanout")
SERVICES = ("E", "W", "W+E", "P")


@dataclass
class PoolSpec:
    name: str
    share: float
    marker: str | None = None
    reward_address: str | None = None
    scheme: str = "none"
    outputs: int = 120  # member outputs per payout (collector_chain, fanout)
    k: int = 101  # total outputs per payout (fixed_outputs_chain)
    fanout_amount: int = 1_000_000_000
    max_intermediaries: int = 12
    batch_interval: int = 20
    fee: int = 10_000
    payout_ratio: float = 0.9
    in_mapping: bool = True

    @property
    def members_per_tx(self) -> int:
        return self.k - 1 if self.scheme == "fixed_outputs_chain" else self.outputs


@dataclass
class WalletSpec:
    count: int = 0
    reuse_prob: float = 0.5
    weight_sigma: float = 1.0
    # [{"pools": ["A", "B"], "count": 10}, ...] wallets mining in several pools
    shared: list[dict] = field(default_factory=list)
    tagged: int = 0
    consolidate_every: int = 500


@dataclass
class SynthConfig:
    seed: int = 0
    n_blocks: int = 1000
    pools: list[PoolSpec] = field(default_factory=list)
    wallets: WalletSpec = field(default_factory=WalletSpec)
    coinjoin_rate: float = 0.0
    coinjoin_max_size: int = 5
    start_height: int = 0
    start_time: int = 1_500_000_000
    block_interval: float = 600.0
    block_reward: int = 1_250_000_000

    @classmethod
    def from_dict(cls, data: dict) -> "SynthConfig":
        data = dict(data)
        try:
            pools = [PoolSpec(**p) for p in data.pop("pools", [])]
            wallets = WalletSpec(**data.pop("wallets", {}))
            return cls(pools=pools, wallets=wallets, **data)
        except TypeError as e:
            raise InvalidConfig(str(e)) from None

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        if self.n_blocks <= 0:
            raise InvalidConfig("n_blocks must be positive")
        if not self.pools:
            raise InvalidConfig("at least one pool required")
        names = [p.name for p in self.pools]
        if len(set(names)) != len(names):
            raise InvalidConfig("pool names must be unique")
        if abs(sum(p.share for p in self.pools) - 1.0) > 1e-9 or any(p.share < 0 for p in self.pools):
            raise InvalidConfig("pool shares must be non-negative and sum to 1")
        for p in self.pools:
            if p.scheme not in SCHEMES:
                raise InvalidConfig(f"{p.name}: unknown scheme {p.scheme!r}")
            if p.batch_interval <= 0 or p.outputs < 2 or p.k < 3 or p.fee < 0:
                raise InvalidConfig(f"{p.name}: batch_interval, outputs, k and fee out of range")
            if not 0 < p.payout_ratio < 1:
                raise InvalidConfig(f"{p.name}: payout_ratio must be in (0, 1)")
            if p.scheme == "fanout" and (p.fanout_amount <= p.fee or p.max_intermediaries < 1):
                raise InvalidConfig(f"{p.name}: fanout_amount must exceed fee")
            if p.marker is not None and p.marker == "":
                raise InvalidConfig(f"{p.name}: empty marker")
        w = self.wallets
        if w.count < 0 or w.tagged < 0 or w.tagged > w.count or w.consolidate_every <= 0:
            raise InvalidConfig("wallet counts out of range")
        if not 0 <= w.reuse_prob <= 1 or not 0 <= self.coinjoin_rate <= 1:
            raise InvalidConfig("probabilities must lie in [0, 1]")
        if self.coinjoin_max_size < 3:
            raise InvalidConfig("coinjoin_max_size must be >= 3")
        for g in w.shared:
            if set(g.get("pools", [])) - set(names) or g.get("count", 0) < 0:
                raise InvalidConfig(f"bad shared wallet group {g!r}")


def load_config(path: str | Path) -> SynthConfig:
    path = Path(path)
    try:
        if path.suffix.lower() == ".toml":
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        else:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
    except (ValueError, tomllib.TOMLDecodeError) as e:
        raise InvalidConfig(f"{path}: {e}") from None
    return SynthConfig.from_dict(data)


def _slug(name: str) -> str:
    return re.sub(r"[^0-9a-z]+", "", name.lower()) or "pool"


@dataclass
class GroundTruth:
    block_pool: dict[int, str] = field(default_factory=dict)
    payouts: dict[str, list[str]] = field(default_factory=dict)
    members: dict[str, dict[str, int]] = field(default_factory=dict)
    change_outputs: dict[str, list[tuple[str, int]]] = field(default_factory=dict)
    chain_links: dict[str, list[tuple[str, int, str]]] = field(default_factory=dict)
    address_wallet: dict[str, int] = field(default_factory=dict)
    wallet_pools: dict[int, list[str]] = field(default_factory=dict)
    tags: dict[str, tuple[str, str]] = field(default_factory=dict)
    wallet_tags: dict[int, tuple[str, str]] = field(default_factory=dict)
    coinjoins: list[str] = field(default_factory=list)
    mined: dict[str, int] = field(default_factory=dict)
    paid: dict[str, int] = field(default_factory=dict)
    payout_ratio: dict[str, float] = field(default_factory=dict)
    pool_addresses: dict[str, list[str]] = field(default_factory=dict)
    mapping: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def wallet_partition(self) -> set[frozenset[str]]:
        groups: dict[int, set[str]] = {}
        for a, w in self.address_wallet.items():
            groups.setdefault(w, set()).add(a)
        return {frozenset(g) for g in groups.values()}

    def member_wallet_amounts(self, pool: str) -> dict[int, int]:
        out: dict[int, int] = {}
        for a, v in self.members.get(pool, {}).items():
            w = self.address_wallet[a]
            out[w] = out.get(w, 0) + v
        return out

    def to_json(self) -> dict:
        return {
            "block_pool": {str(h): p for h, p in sorted(self.block_pool.items())},
            "payouts": self.payouts,
            "members": {p: dict(sorted(m.items())) for p, m in self.members.items()},
            "change_outputs": {p: [list(c) for c in v] for p, v in self.change_outputs.items()},
            "chain_links": {p: [list(c) for c in v] for p, v in self.chain_links.items()},
            "address_wallet": dict(sorted(self.address_wallet.items())),
            "wallet_pools": {str(w): p for w, p in sorted(self.wallet_pools.items())},
            "tags": {a: list(t) for a, t in sorted(self.tags.items())},
            "wallet_tags": {str(w): list(t) for w, t in sorted(self.wallet_tags.items())},
            "coinjoins": self.coinjoins,
            "mined": self.mined,
            "paid": self.paid,
            "payout_ratio": self.payout_ratio,
            "pool_addresses": self.pool_addresses,
            "mapping": self.mapping,
            "params": self.params,
        }

    @classmethod
    def from_json(cls, d: dict) -> "GroundTruth":
        return cls(
            block_pool={int(h): p for h, p in d["block_pool"].items()},
            payouts=d["payouts"],
            members=d["members"],
            change_outputs={p: [tuple(c) for c in v] for p, v in d["change_outputs"].items()},
            chain_links={p: [tuple(c) for c in v] for p, v in d["chain_links"].items()},
            address_wallet=d["address_wallet"],
            wallet_pools={int(w): p for w, p in d["wallet_pools"].items()},
            tags={a: tuple(t) for a, t in d["tags"].items()},
            wallet_tags={int(w): tuple(t) for w, t in d["wallet_tags"].items()},
            coinjoins=d["coinjoins"],
            mined=d["mined"],
            paid=d["paid"],
            payout_ratio=d["payout_ratio"],
            pool_addresses=d["pool_addresses"],
            mapping=d["mapping"],
            params=d["params"],
        )


class _Wallet:
    __slots__ = ("id", "weight", "pools", "addresses", "utxos", "anchor", "consolidated")

    def __init__(self, wid: int, weight: float):
        self.id = wid
        self.weight = weight
        self.pools: list[str] = []
        self.addresses: list[str] = []
        self.utxos: dict[str, list[tuple[str, int, int]]] = {}
        self.anchor: str | None = None
        self.consolidated = False


class _Pool:
    def __init__(self, spec: PoolSpec, idx: int):
        self.spec = spec
        self.idx = idx
        slug = _slug(spec.name)
        self.slug = slug
        self.reward = spec.reward_address or f"{slug}_reward"
        self.collector = f"{slug}_collector"
        self.marker = (spec.marker if spec.marker is not None else f"/{spec.name}/").encode("utf-8")
        self.utxos: dict[str, list[tuple[str, int, int]]] = {}
        self.participants: list[int] = []
        self.queue: deque[int] = deque()
        self.mined = 0
        self.paid = 0
        self.fresh = 0
        # (txid, vout, address, value) of the open fixed-output chain's change
        self.chain_tip: tuple[str, int, str, int] | None = None
        self.addresses: list[str] = [self.reward]

    def new_address(self, kind: str) -> str:
        self.fresh += 1
        a = f"{self.slug}_{kind}{self.fresh}"
        self.addresses.append(a)
        return a

    def balance(self, addr: str) -> int:
        return sum(v for _, _, v in self.utxos.get(addr, ()))


class _Generator:
    def __init__(self, config: SynthConfig):
        config.validate()
        self.cfg = config
        self.rng = random.Random(config.seed)
        self.counter = 0
        self.pools = [_Pool(p, i) for i, p in enumerate(config.pools)]
        self.by_name = {p.spec.name: p for p in self.pools}
        self.truth = GroundTruth()
        for p in self.pools:
            self.truth.payouts[p.spec.name] = []
            self.truth.members[p.spec.name] = {}
            self.truth.change_outputs[p.spec.name] = []
            self.truth.chain_links[p.spec.name] = []
            self.truth.payout_ratio[p.spec.name] = p.spec.payout_ratio
        self.wallets: list[_Wallet] = []
        self._setup_wallets()
        self.block_txs: list[Transaction] = []
        self.cum_shares = list(_accumulate(p.spec.share for p in self.pools))

    # -- setup --------------------------------------------------------------

    def _setup_wallets(self) -> None:
        cfg, rng = self.cfg, self.rng
        ws = cfg.wallets
        for wid in range(ws.count):
            self.wallets.append(_Wallet(wid, rng.lognormvariate(0.0, ws.weight_sigma)))
        paying = [p for p in self.pools if p.spec.scheme != "none"]
        order = list(range(ws.count))
        rng.shuffle(order)
        pos = 0
        for group in ws.shared:
            for _ in range(group["count"]):
                if pos >= len(order):
                    raise InvalidConfig("more shared wallets than wallets")
                self.wallets[order[pos]].pools = list(group["pools"])
                pos += 1
        rest = order[pos:]
        if paying and rest:
            total = sum(p.spec.share for p in paying) or 1.0
            quotas = [len(rest) * p.spec.share / total for p in paying]
            counts = [int(q) for q in quotas]
            by_rem = sorted(range(len(paying)), key=lambda i: (-(quotas[i] - counts[i]), i))
            for i in by_rem[:len(rest) - sum(counts)]:
                counts[i] += 1
            it = iter(rest)
            for p, c in zip(paying, counts):
                for _ in range(c):
                    self.wallets[next(it)].pools = [p.spec.name]
        for w in self.wallets:
            for name in w.pools:
                self.by_name[name].participants.append(w.id)
            self.truth.wallet_pools[w.id] = list(w.pools)
        for p in paying:
            if len(p.participants) < p.spec.members_per_tx:
                raise InvalidConfig(f"{p.spec.name}: {len(p.participants)} wallets cannot fill "
                                    f"{p.spec.members_per_tx} member outputs per payout")

    # -- primitives ---------------------------------------------------------

    def _txid(self) -> str:
        self.counter += 1
        return hashlib.sha256(f"synth:{self.cfg.seed}:{self.counter}".encode()).hexdigest()

    def _emit(self, inputs: list[tuple[str, int, str, int]], outputs: list[tuple[str, int]]) -> Transaction:
        tx = Transaction(self._txid(),
                         tuple(TxIn(t, v, a, val) for t, v, a, val in inputs),
                         tuple(TxOut(a, val) for a, val in outputs))
        self.block_txs.append(tx)
        return tx

    def _credit(self, tx: Transaction) -> None:
        """Book every output of ``tx`` to its owner's coin list."""
        aw = self.truth.address_wallet
        for vout, out in enumerate(tx.outputs):
            if out.address in aw:
                self.wallets[aw[out.address]].utxos.setdefault(out.address, []).append((tx.txid, vout, out.value))
            else:
                owner = self._pool_of_address.get(out.address)
                if owner is not None:
                    owner.utxos.setdefault(out.address, []).append((tx.txid, vout, out.value))

    def _pool_spend(self, pool: _Pool, addr: str) -> list[tuple[str, int, str, int]]:
        coins = pool.utxos.pop(addr, [])
        return [(t, v, addr, val) for t, v, val in coins]

    def _receive_address(self, w: _Wallet) -> str:
        if w.addresses and self.rng.random() < self.cfg.wallets.reuse_prob:
            return w.addresses[self.rng.randrange(len(w.addresses))]
        return self._new_wallet_address(w)

    def _new_wallet_address(self, w: _Wallet) -> str:
        a = f"w{w.id}_{len(w.addresses)}"
        w.addresses.append(a)
        self.truth.address_wallet[a] = w.id
        if w.anchor is None:
            w.anchor = a
        return a

    def _pick_members(self, pool: _Pool, n: int) -> list[_Wallet]:
        chosen: list[int] = []
        taken: set[int] = set()
        deferred: list[int] = []
        while len(chosen) < n:
            if not pool.queue:
                batch = list(pool.participants)
                self.rng.shuffle(batch)
                pool.queue.extend(batch)
            w = pool.queue.popleft()
            if w in taken:
                deferred.append(w)
                continue
            taken.add(w)
            chosen.append(w)
        pool.queue.extendleft(reversed(deferred))
        return [self.wallets[w] for w in chosen]

    def _split(self, amount: int, members: list[_Wallet]) -> list[int]:
        total_w = sum(m.weight for m in members)
        parts = [int(amount * m.weight / total_w) for m in members]
        for i in range(amount - sum(parts)):
            parts[i % len(parts)] += 1
        return parts

    def _member_outputs(self, pool: _Pool, amount: int, n: int) -> list[tuple[str, int]]:
        members = self._pick_members(pool, n)
        return [(self._receive_address(w), v) for w, v in zip(members, self._split(amount, members))]

    def _insert_change(self, outs: list[tuple[str, int]], change: tuple[str, int]) -> int:
        pos = self.rng.randrange(len(outs) + 1)
        outs.insert(pos, change)
        return pos

    def _record_payout(self, pool: _Pool, tx: Transaction, member_outs, change_vout: int | None) -> None:
        name = pool.spec.name
        self.truth.payouts[name].append(tx.txid)
        m = self.truth.members[name]
        for a, v in member_outs:
            m[a] = m.get(a, 0) + v
        if change_vout is not None:
            self.truth.change_outputs[name].append((tx.txid, change_vout))

    # -- payout schemes -----------------------------------------------------

    def _sweep_to_collector(self, pool: _Pool) -> None:
        coins = self._pool_spend(pool, pool.reward)
        if not coins:
            return
        total = sum(c[3] for c in coins)
        fee = min(pool.spec.fee, total - 1)
        tx = self._emit(coins, [(pool.collector, total - fee)])
        self._credit(tx)

    def _due(self, pool: _Pool) -> int:
        return int(pool.spec.payout_ratio * pool.mined) - pool.paid

    def _pay_collector_chain(self, pool: _Pool) -> None:
        spec = pool.spec
        self._sweep_to_collector(pool)
        amount = self._due(pool)
        n = spec.outputs
        balance = pool.balance(pool.collector)
        if amount < 1000 * n or balance < amount + spec.fee + 1:
            return
        coins = self._pool_spend(pool, pool.collector)
        outs = self._member_outputs(pool, amount, n)
        member_outs = list(outs)
        vout = self._insert_change(outs, (pool.collector, balance - amount - spec.fee))
        tx = self._emit(coins, outs)
        self._credit(tx)
        self._record_payout(pool, tx, member_outs, vout)
        pool.paid += amount

    def _pay_fixed_chain(self, pool: _Pool) -> None:
        spec = pool.spec
        self._sweep_to_collector(pool)
        due = self._due(pool)
        n = spec.k - 1
        if due < 1000 * n:
            return
        members = self._pick_members(pool, n)
        top = max(m.weight for m in members) / sum(m.weight for m in members)

        def affordable(funds: int) -> int:
            # keep the change strictly above every member output
            return min(due, int((funds - spec.fee) / (1 + top)) - n)

        tip = pool.chain_tip
        coins = [tip] if tip is not None else []
        funds = tip[3] if tip is not None else 0
        if affordable(funds) < due:
            coins += self._pool_spend(pool, pool.collector)
            funds = sum(c[3] for c in coins)
        amount = affordable(funds)
        if amount < 1000 * n:
            for c in coins:
                if c is not tip:
                    pool.utxos.setdefault(c[2], []).append((c[0], c[1], c[3]))
            self._requeue(pool, members)
            return
        parts = self._split(amount, members)
        while funds - spec.fee - amount <= max(parts):
            amount = amount * 99 // 100
            parts = self._split(amount, members)
        outs = [(self._receive_address(w), v) for w, v in zip(members, parts)]
        member_outs = list(outs)
        change_addr = pool.new_address("chg")
        self._pool_of_address[change_addr] = pool
        change = funds - amount - spec.fee
        vout = self._insert_change(outs, (change_addr, change))
        tx = self._emit(coins, outs)
        self._credit(tx)
        pool.utxos.pop(change_addr, None)  # tracked as the chain tip instead
        if tip is not None:
            self.truth.chain_links[spec.name].append((tip[0], tip[1], tx.txid))
        pool.chain_tip = (tx.txid, vout, change_addr, change)
        self._record_payout(pool, tx, member_outs, vout)
        pool.paid += amount

    def _requeue(self, pool: _Pool, members: list[_Wallet]) -> None:
        pool.queue.extendleft(reversed([m.id for m in members]))

    def _pay_fanout(self, pool: _Pool) -> None:
        spec = pool.spec
        amount = self._due(pool)
        n = spec.outputs
        cap = spec.fanout_amount - spec.fee
        if amount < 1000 * n:
            return
        m = min(spec.max_intermediaries, math.ceil(amount / cap))
        balance = pool.balance(pool.reward)
        m = min(m, (balance - spec.fee) // spec.fanout_amount) if balance > spec.fee else 0
        if m <= 0:
            return
        amount = min(amount, m * cap)
        coins = self._pool_spend(pool, pool.reward)
        inters = []
        for _ in range(m):
            a = pool.new_address("int")
            self._pool_of_address[a] = pool
            inters.append(a)
        outs = [(a, spec.fanout_amount) for a in inters]
        rest = balance - m * spec.fanout_amount - spec.fee
        if rest > 0:
            self._insert_change(outs, (pool.reward, rest))
        fan = self._emit(coins, outs)
        self._credit(fan)
        shares = [amount // m + (1 if i < amount % m else 0) for i in range(m)]
        for a, share in zip(inters, shares):
            src = self._pool_spend(pool, a)
            pay = self._member_outputs(pool, share, n)
            member_outs = list(pay)
            change = spec.fanout_amount - spec.fee - share
            vout = None
            if change > 0:
                chg = pool.new_address("chg")
                self._pool_of_address[chg] = pool
                vout = self._insert_change(pay, (chg, change))
            tx = self._emit(src, pay)
            self._credit(tx)
            self._record_payout(pool, tx, member_outs, vout)
        pool.paid += amount

    # -- wallet activity ----------------------------------------------------

    def _consolidate(self, w: _Wallet) -> None:
        if len(w.utxos) < 2:
            return
        inputs = [(t, v, a, val) for a in w.addresses for t, v, val in w.utxos.get(a, ())]
        total = sum(c[3] for c in inputs)
        fee = 1000 if total > 100_000 else 0
        w.utxos.clear()
        tx = self._emit(inputs, [(w.anchor, total - fee)])
        self._credit(tx)
        w.consolidated = True

    def _coinjoin(self) -> None:
        eligible = [w for w in self.wallets
                    if w.consolidated and any(val >= 2000 for _, _, val in w.utxos.get(w.anchor, ()))]
        if len(eligible) < 3:
            return
        size = self.rng.randint(3, min(self.cfg.coinjoin_max_size, len(eligible)))
        parts = self.rng.sample(eligible, size)
        coins = []
        for w in parts:
            utxos = w.utxos[w.anchor]
            best = max(range(len(utxos)), key=lambda i: (utxos[i][2], -i))
            t, v, val = utxos.pop(best)
            if not utxos:
                del w.utxos[w.anchor]
            coins.append((t, v, w.anchor, val))
        denom = min(c[3] for c in coins) // 2
        outs = []
        for w, c in zip(parts, coins):
            outs.append((self._new_wallet_address(w), denom))
            outs.append((w.anchor, c[3] - denom))
        self.rng.shuffle(outs)
        tx = self._emit(coins, outs)
        self._credit(tx)
        self.truth.coinjoins.append(tx.txid)

    # -- main loop ----------------------------------------------------------

    def run(self) -> tuple[list[Block], GroundTruth]:
        cfg, rng, truth = self.cfg, self.rng, self.truth
        self._pool_of_address = {}
        for p in self.pools:
            self._pool_of_address[p.reward] = p
            self._pool_of_address[p.collector] = p
        blocks = []
        t = float(cfg.start_time)
        last = cfg.start_height + cfg.n_blocks - 1
        for h in range(cfg.start_height, last + 1):
            t += rng.expovariate(1.0 / cfg.block_interval)
            pool = self.pools[min(bisect.bisect_right(self.cum_shares, rng.random()), len(self.pools) - 1)]
            truth.block_pool[h] = pool.spec.name
            cb_bytes = h.to_bytes(4, "little") + pool.marker + rng.getrandbits(64).to_bytes(8, "little")
            self.block_txs = []
            cb = Transaction(self._txid(), (TxIn(ZERO_TXID, COINBASE_VOUT, None, 0),),
                             (TxOut(pool.reward, cfg.block_reward),), True)
            self.block_txs.append(cb)
            self._credit(cb)
            pool.mined += cfg.block_reward

            rel = h - cfg.start_height
            for p in self.pools:
                if p.spec.scheme == "none":
                    continue
                if (rel + p.idx) % p.spec.batch_interval == 0 or h == last:
                    self._pay(p)
            if cfg.coinjoin_rate and rng.random() < cfg.coinjoin_rate:
                self._coinjoin()
            if (rel + 1) % cfg.wallets.consolidate_every == 0 or h == last:
                for w in self.wallets:
                    self._consolidate(w)
            blocks.append(Block(h, int(t), cb_bytes, tuple(self.block_txs)))
        self._finish(blocks)
        return blocks, truth

    def _pay(self, pool: _Pool) -> None:
        scheme = pool.spec.scheme
        if scheme == "collector_chain":
            self._pay_collector_chain(pool)
        elif scheme == "fixed_outputs_chain":
            self._pay_fixed_chain(pool)
        elif scheme == "fanout":
            self._pay_fanout(pool)

    def _finish(self, blocks: list[Block]) -> None:
        cfg, truth = self.cfg, self.truth
        for p in self.pools:
            truth.mined[p.spec.name] = p.mined
            truth.paid[p.spec.name] = p.paid
            truth.pool_addresses[p.spec.name] = list(p.addresses) + (
                [p.collector] if p.spec.scheme in ("collector_chain", "fixed_outputs_chain") else [])
        tagged = self.rng.sample([w for w in self.wallets if w.anchor], min(cfg.wallets.tagged, sum(
            1 for w in self.wallets if w.anchor)))
        for j, w in enumerate(sorted(tagged, key=lambda w: w.id)):
            tag = (f"Actor{j}", SERVICES[j % len(SERVICES)])
            truth.wallet_tags[w.id] = tag
            truth.tags[w.anchor] = tag
        mapped = [p for p in self.pools if p.spec.in_mapping]
        truth.mapping = {
            "coinbase_tags": {p.marker.decode("utf-8"): {"name": p.spec.name} for p in mapped},
            "payout_addresses": {p.reward: {"name": p.spec.name} for p in mapped},
        }
        window = [cfg.start_height, cfg.start_height + cfg.n_blocks]
        params = {}
        for p in self.pools:
            s = p.spec
            if s.scheme == "collector_chain":
                params[s.name] = {"detector": "btccom", "collector_address": p.collector,
                                  "reward_addresses": [p.reward], "min_outputs": s.outputs}
            elif s.scheme == "fixed_outputs_chain":
                params[s.name] = {"detector": "antpool", "collector_address": p.collector,
                                  "reward_addresses": [p.reward], "exact_outputs": s.k,
                                  "min_outputs": min(100, s.k)}
            elif s.scheme == "fanout":
                params[s.name] = {"detector": "viabtc", "reward_addresses": [p.reward],
                                  "fanout_amount": s.fanout_amount, "min_outputs": s.outputs}
        truth.params = {"window": window, "pools": params}


def _accumulate(values):
    total = 0.0
    for v in values:
        total += v
        yield total


def generate(config: SynthConfig) -> tuple[list[Block], GroundTruth]:
    """Generate a chain and its ground truth from ``config``."""
    return _Generator(config).run()


def write_tags(tags: dict[str, tuple[str, str]], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["address", "actor", "service"])
    for a, (actor, service) in sorted(tags.items()):
        w.writerow([a, actor, service])


def write_truth(truth: GroundTruth, fh: IO[str]) -> None:
    json.dump(truth.to_json(), fh, indent=1, sort_keys=False)
    fh.write("\n")


def read_truth(path: str | Path) -> GroundTruth:
    with open(path, encoding="utf-8") as fh:
        return GroundTruth.from_json(json.load(fh))
