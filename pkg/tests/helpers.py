"""Small builders for hand-made chains."""

import hashlib
import itertools

from poolscope.chaindata import COINBASE_VOUT, ZERO_TXID, Block, Transaction, TxIn, TxOut

_counter = itertools.count()


def txid(label=None) -> str:
    if label is None:
        label = f"auto{next(_counter)}"
    return hashlib.sha256(str(label).encode()).hexdigest()


def coinbase(outs, label=None) -> Transaction:
    return Transaction(txid(label), (TxIn(ZERO_TXID, COINBASE_VOUT, None, 0),),
                       tuple(TxOut(a, v) for a, v in outs), True)


def tx(ins, outs, label=None) -> Transaction:
    """ins: (prev_txid, vout, addr, value); outs: (addr, value)."""
    return Transaction(txid(label), tuple(TxIn(*i) for i in ins), tuple(TxOut(a, v) for a, v in outs))


def spend(addresses, outs, value=100, label=None) -> Transaction:
    """A tx spending one fresh coin from each address."""
    ins = [(txid(f"src-{a}-{next(_counter)}"), 0, a, value) for a in addresses]
    return tx(ins, outs, label)


def block(height, txs, coinbase_bytes=b"", time=None) -> Block:
    return Block(height, 1_500_000_000 + 600 * height if time is None else time, coinbase_bytes, tuple(txs))


def simple_block(height, address="A", marker=b"", value=1_250_000_000, extra=()) -> Block:
    return block(height, [coinbase([(address, value)], f"cb{height}-{address}-{marker!r}"), *extra], marker)


def components_bfs(addresses, edge_sets):
    """Connected components of the co-spend graph by breadth-first search.

    ``edge_sets`` is an iterable of address groups spent together.
    """
    adj = {a: set() for a in addresses}
    for group in edge_sets:
        group = list(group)
        for a in group:
            adj.setdefault(a, set())
        for a, b in zip(group, group[1:]):
            adj[a].add(b)
            adj[b].add(a)
    seen = set()
    comps = set()
    for start in adj:
        if start in seen:
            continue
        seen.add(start)
        comp = [start]
        frontier = [start]
        while frontier:
            nxt = []
            for a in frontier:
                for b in adj[a]:
                    if b not in seen:
                        seen.add(b)
                        comp.append(b)
                        nxt.append(b)
            frontier = nxt
        comps.add(frozenset(comp))
    return comps


def gini_pairwise_exact(values):
    """Exact population Gini with rational arithmetic, O(n^2)."""
    from fractions import Fraction
    xs = [Fraction(v) for v in values]
    n, total = len(xs), sum(xs)
    diff = sum(abs(a - b) for a in xs for b in xs)
    return diff / (2 * n * total)


def gini_pairwise_numpy(values, chunk=2048):
    """Population Gini from all pairwise absolute differences, O(n^2), chunked."""
    import numpy as np
    x = np.asarray(values, dtype=float)
    n = x.size
    acc = 0.0
    for lo in range(0, n, chunk):
        acc += float(np.abs(x[lo:lo + chunk, None] - x[None, :]).sum())
    return acc / (2 * n * x.sum())


def payout_set(pool, payments, height=0):
    """PayoutSet from ``[[(addr, value), ...], ...]``, one list per payout tx."""
    from poolscope.payouts import PayoutSet
    ps = PayoutSet(pool, (0, 1))
    for i, outs in enumerate(payments):
        ps.add(tx([(txid(f"{pool}-src-{i}"), 0, f"{pool}-collector", sum(v for _, v in outs))], outs,
                  f"{pool}-pay-{i}-{outs!r}"), height)
    return ps
